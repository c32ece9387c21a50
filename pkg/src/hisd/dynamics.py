"""Sphere-constrained high-index saddle dynamics and its time steppers.

The state is a point ``x`` on the unit sphere together with ``k`` orthonormal
directions tangent to the sphere at ``x``.  :func:`step` advances the state by
one semi-implicit Euler step:

1. position update, linear part of the force implicit, nonlinear part
   explicit, followed by normalisation back onto the sphere;
2. for each direction in turn: an implicit linear solve using the new
   position and the directions already finished at this step, projection
   onto the tangent space at the new position, and Gram-Schmidt against the
   finished directions.

:func:`explicit_step` is the forward Euler baseline where every right-hand
side quantity is frozen at the previous step.
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from .energy import explicit_splitting
from .errors import (
    DegenerateDirection,
    InvariantViolation,
    StepTooLarge,
    ValidationError,
    ZeroVector,
)
from .linalg import TOL_SOLVE, as_vector, identity, norm, solve

TOL_STATE = 1e-10
Y_MIN = 1e-8
Y_IDENTITY_TOL = 1e-10
MIN_X_TILDE_NORM = 0.5


@dataclass(frozen=True)
class SaddleState:
    x: np.ndarray
    directions: tuple = ()
    t: float = 0.0

    @property
    def k(self):
        return len(self.directions)

    @property
    def dimension(self):
        return self.x.size

    @classmethod
    def from_initial(cls, x0, directions=(), t=0.0, normalize=True, tol=TOL_STATE):
        """Build and validate initial data, optionally normalising each vector.

        Normalisation only rescales; orthogonality is never repaired, so
        inconsistent input is rejected with the offending product named.
        """
        x = as_vector(x0, "x0")
        vs = [as_vector(v, f"v{i + 1}") for i, v in enumerate(directions)]
        for i, v in enumerate(vs):
            if v.shape != x.shape:
                raise ValidationError(
                    f"v{i + 1} has length {v.size}, expected {x.size}"
                )
        if len(vs) >= x.size:
            raise ValidationError(
                f"index k={len(vs)} must be smaller than the dimension {x.size}"
            )
        if normalize:
            x = _unit(x, "x0")
            vs = [_unit(v, f"v{i + 1}") for i, v in enumerate(vs)]
        state = cls(x, tuple(vs), float(t))
        validate_state(state, tol, error=ValidationError)
        return state

    def as_arrays(self):
        """Return ``(x, V)`` with the directions stacked as rows of ``V``."""
        V = np.array(self.directions).reshape(self.k, self.dimension)
        return self.x.copy(), V


def _unit(v, name):
    n = norm(v)
    if n == 0.0:
        raise ValidationError(f"{name} is the zero vector")
    return v / n


def constraint_defects(state):
    """Return ``(|‖x‖-1|, max_i |v_i·x|, max_ij |v_i·v_j - δ_ij|)``."""
    x = state.x
    nd = abs(norm(x) - 1.0)
    tang = 0.0
    orth = 0.0
    vs = state.directions
    for i, vi in enumerate(vs):
        tang = max(tang, abs(float(vi @ x)))
        for j in range(i + 1):
            target = 1.0 if i == j else 0.0
            orth = max(orth, abs(float(vi @ vs[j]) - target))
    return nd, tang, orth


def validate_state(state, tol=TOL_STATE, error=InvariantViolation):
    x = state.x
    d = abs(norm(x) - 1.0)
    if d > tol:
        raise error(f"|x| - 1 = {d:.3e} exceeds {tol:.1e}")
    vs = state.directions
    for i, vi in enumerate(vs):
        p = float(vi @ x)
        if abs(p) > tol:
            raise error(f"v{i + 1}·x = {p:.3e} violates orthogonality (tol {tol:.1e})")
        for j in range(i + 1):
            p = float(vi @ vs[j])
            target = 1.0 if i == j else 0.0
            if abs(p - target) > tol:
                raise error(
                    f"v{i + 1}·v{j + 1} = {p:.6g}, expected {target:g} (tol {tol:.1e})"
                )


@dataclass(frozen=True)
class DirectionDiagnostics:
    v_tilde: np.ndarray
    v_hat: np.ndarray
    transport_defect: float
    gs_defect: float
    Y: float


@dataclass(frozen=True)
class StepDiagnostics:
    x_tilde: np.ndarray
    x_tilde_norm_defect: float
    directions: tuple = ()

    @property
    def max_transport_defect(self):
        return max((d.transport_defect for d in self.directions), default=0.0)

    @property
    def max_gs_defect(self):
        return max((d.gs_defect for d in self.directions), default=0.0)


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    splitting: object = None
    scheme: str = "semi"
    tol_solve: float = TOL_SOLVE
    tol_state: float = TOL_STATE
    y_min: float = Y_MIN

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValidationError(f"step size must be positive, got {self.tau!r}")
        if self.scheme not in ("semi", "explicit"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")


def _reflect(y, vs):
    """Apply ``I - 2 Σ v v^T`` to ``y``."""
    out = y.copy()
    for v in vs:
        out -= 2.0 * float(v @ y) * v
    return out


def rhs_continuous(model, state):
    """Right-hand side ``(dx/dt, [dv_i/dt])`` of the continuous dynamics."""
    x = state.x
    vs = state.directions
    F = model.force(x)
    J = model.hessian_neg(x)
    dx = _reflect(F, vs) - float(x @ F) * x
    dvs = []
    for i, vi in enumerate(vs):
        w = J @ vi
        dv = w - float(x @ w) * x - float(vi @ w) * vi
        for vj in vs[:i]:
            dv -= 2.0 * float(vj @ w) * vj
        dv += float(vi @ F) * x
        dvs.append(dv)
    return dx, dvs


def retract(x_tilde, y_min=Y_MIN):
    n = norm(x_tilde)
    if n < y_min:
        raise ZeroVector(f"cannot retract vector of norm {n:.3e}")
    return np.asarray(x_tilde, dtype=float) / n


def vector_transport(v_tilde, x_n):
    """Project ``v_tilde`` onto the tangent space of the sphere at unit ``x_n``."""
    v_tilde = np.asarray(v_tilde, dtype=float)
    return v_tilde - float(v_tilde @ x_n) * x_n


def gram_schmidt(v_hat, prior=(), y_min=Y_MIN):
    """Orthonormalise ``v_hat`` against the orthonormal vectors ``prior``.

    Returns ``(v, Y)`` where ``Y`` is the norm of the projected residual.
    The closed form ``Y² = |v_hat|² - Σ (v_hat·p)²`` is checked alongside;
    disagreement means ``prior`` was not orthonormal.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    u = v_hat.copy()
    coeffs = []
    for p in prior:
        c = float(v_hat @ p)
        coeffs.append(c)
        u -= c * p
    Y = norm(u)
    if Y < y_min:
        raise DegenerateDirection(f"Gram-Schmidt factor {Y:.3e} below {y_min:.1e}")
    vv = float(v_hat @ v_hat)
    y2 = vv - sum(c * c for c in coeffs)
    if abs(Y * Y - y2) > Y_IDENTITY_TOL * max(1.0, vv):
        raise InvariantViolation(
            f"normalisation factor mismatch: Y²={Y * Y:.15g}, closed form {y2:.15g}"
        )
    return u / Y, Y


def x_substep_system(split, x_prev, vs_prev, tau):
    """Matrix and right-hand side of the implicit position update."""
    L = split.linear_part
    if split.is_zero:
        M = identity(x_prev.size)
    else:
        HL = L.copy()
        for v in vs_prev:
            HL -= 2.0 * np.outer(v, v @ L)
        M = identity(x_prev.size) - tau * HL
    F = split.model.force(x_prev)
    N = F if split.is_zero else F - L @ x_prev
    r = x_prev + tau * _reflect(N, vs_prev) - tau * float(x_prev @ F) * x_prev
    return M, r


def semi_implicit_x_substep(model, split, s_prev, tau, tol_solve=TOL_SOLVE, y_min=Y_MIN):
    """Return ``(x_tilde, x_n)``.

    Raises :class:`StepTooLarge` when ``|x_tilde| < 1/2``; for small steps
    ``|x_tilde|`` stays within O(tau²) of one.
    """
    if split is None:
        split = explicit_splitting(model)
    M, r = x_substep_system(split, s_prev.x, s_prev.directions, tau)
    if split.is_zero:
        x_tilde = r
    else:
        x_tilde = solve(M, r, tol=tol_solve)
    if norm(x_tilde) < MIN_X_TILDE_NORM:
        raise StepTooLarge(
            f"|x_tilde| = {norm(x_tilde):.3e} < {MIN_X_TILDE_NORM}; reduce the step size"
        )
    return x_tilde, retract(x_tilde, y_min)


def v_substep_system(model, v_prev_i, x_n, committed, tau, J=None, F=None):
    if J is None:
        J = model.hessian_neg(x_n)
    if F is None:
        F = model.force(x_n)
    # P J with P = I - x x^T - 2 Σ w w^T, applied row-block-wise
    B = np.array([x_n, *committed])
    c = np.full(len(B), 2.0)
    c[0] = 1.0
    PJ = J - B.T @ (c[:, None] * (B @ J))
    M = identity(x_n.size) - tau * PJ - tau * np.outer(x_n, F)
    b = v_prev_i - tau * float(v_prev_i @ J @ v_prev_i) * v_prev_i
    return M, b


def semi_implicit_v_substep(model, i, v_prev_i, x_n, committed, tau, J=None, F=None,
                            tol_solve=TOL_SOLVE):
    """Implicit update of direction ``i`` (0-based).

    ``committed`` must hold the ``i`` directions already finished at the
    current step; they, not last step's directions, enter the projector.
    """
    if len(committed) != i:
        raise ValueError(f"direction {i} needs {i} committed vectors, got {len(committed)}")
    M, b = v_substep_system(model, v_prev_i, x_n, committed, tau, J, F)
    return solve(M, b, tol=tol_solve)


def _finish(model, cfg, s_prev, x_tilde, x_n, v_tildes_fn):
    """Transport + Gram-Schmidt loop shared by both schemes."""
    committed = []
    records = []
    for i, v_prev in enumerate(s_prev.directions):
        vt = v_tildes_fn(i, v_prev, committed)
        vh = vector_transport(vt, x_n)
        v, Y = gram_schmidt(vh, committed, cfg.y_min)
        records.append(DirectionDiagnostics(
            v_tilde=vt,
            v_hat=vh,
            transport_defect=abs(float(vt @ x_n)),
            gs_defect=norm(v - vh),
            Y=Y,
        ))
        committed.append(v)
    s_next = SaddleState(x_n, tuple(committed), s_prev.t + cfg.tau)
    validate_state(s_next, cfg.tol_state)
    diag = StepDiagnostics(x_tilde, abs(norm(x_tilde) - 1.0), tuple(records))
    return s_next, diag


def step(model, cfg, s_prev):
    """Advance ``s_prev`` by one step of size ``cfg.tau``.

    Returns ``(s_next, diagnostics)``.  Dispatches to :func:`explicit_step`
    when ``cfg.scheme == "explicit"``.
    """
    if cfg.scheme == "explicit":
        return explicit_step(model, s_prev, cfg.tau, cfg)
    tau = cfg.tau
    x_tilde, x_n = semi_implicit_x_substep(
        model, cfg.splitting, s_prev, tau, cfg.tol_solve, cfg.y_min
    )
    if s_prev.k:
        J = model.hessian_neg(x_n)
        F = model.force(x_n)
    else:
        J = F = None

    def v_tilde(i, v_prev, committed):
        return semi_implicit_v_substep(
            model, i, v_prev, x_n, committed, tau, J, F, cfg.tol_solve
        )

    return _finish(model, cfg, s_prev, x_tilde, x_n, v_tilde)


def explicit_step(model, s_prev, tau, cfg=None):
    """Forward Euler step with retraction, transport and Gram-Schmidt.

    All directions are advanced from previous-step data before any
    orthonormalisation happens.
    """
    if cfg is None:
        cfg = SchemeConfig(tau, scheme="explicit")
    elif cfg.tau != tau:
        cfg = replace(cfg, tau=tau)
    dx, dvs = rhs_continuous(model, s_prev)
    x_tilde = s_prev.x + tau * dx
    if norm(x_tilde) < MIN_X_TILDE_NORM:
        raise StepTooLarge(
            f"|x_tilde| = {norm(x_tilde):.3e} < {MIN_X_TILDE_NORM}; reduce the step size"
        )
    x_n = retract(x_tilde, cfg.y_min)
    v_tildes = [v + tau * dv for v, dv in zip(s_prev.directions, dvs)]
    return _finish(model, cfg, s_prev, x_tilde, x_n, lambda i, v, c: v_tildes[i])
