"""Energy models, force/Hessian evaluators and linear/nonlinear force splittings.

Sign conventions follow the saddle-dynamics literature: ``force(x)`` returns
the negative gradient and ``hessian_neg(x)`` the negative Hessian.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, as_vector, norm

SQRT3 = math.sqrt(3.0)
SYMMETRY_TOL = 1e-12
FD_GRAD_STEP = 1e-5
FD_HESS_STEP = 1e-4


class EnergyModel:
    """Interface for a smooth energy on R^d.

    Subclasses provide ``dimension`` and implement :meth:`energy`,
    :meth:`force` and :meth:`hessian_neg`.  All evaluators must be pure.
    """

    dimension: int

    def energy(self, x):
        raise NotImplementedError

    def force(self, x):
        raise NotImplementedError

    def hessian_neg(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class RosenbrockParams:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValidationError("Rosenbrock parameters must be finite")


def _xyz(x):
    if len(x) != 3:
        raise ValidationError(f"Rosenbrock energy is defined on R^3, got length {len(x)}")
    return float(x[0]), float(x[1]), float(x[2])


def rosenbrock_energy(p, x):
    x1, x2, x3 = _xyz(x)
    u = SQRT3 * x2 - 3.0 * x1 * x1
    w = SQRT3 * x3 - 3.0 * x2 * x2
    r1 = SQRT3 * x1 - 1.0
    r2 = SQRT3 * x2 - 1.0
    return p.a * u * u + p.b * r1 * r1 + p.a * w * w + p.b * r2 * r2


def rosenbrock_gradient(p, x):
    x1, x2, x3 = _xyz(x)
    a, b = p.a, p.b
    u = SQRT3 * x2 - 3.0 * x1 * x1
    w = SQRT3 * x3 - 3.0 * x2 * x2
    return np.array([
        -12.0 * a * u * x1 + 2.0 * SQRT3 * b * (SQRT3 * x1 - 1.0),
        2.0 * SQRT3 * a * u - 12.0 * a * w * x2 + 2.0 * SQRT3 * b * (SQRT3 * x2 - 1.0),
        2.0 * SQRT3 * a * w,
    ])


def rosenbrock_force(p, x):
    return -rosenbrock_gradient(p, x)


def rosenbrock_hessian(p, x):
    x1, x2, x3 = _xyz(x)
    a, b = p.a, p.b
    u = SQRT3 * x2 - 3.0 * x1 * x1
    w = SQRT3 * x3 - 3.0 * x2 * x2
    h12 = -12.0 * SQRT3 * a * x1
    h23 = -12.0 * SQRT3 * a * x2
    return np.array([
        [72.0 * a * x1 * x1 - 12.0 * a * u + 6.0 * b, h12, 0.0],
        [h12, 6.0 * a + 72.0 * a * x2 * x2 - 12.0 * a * w + 6.0 * b, h23],
        [0.0, h23, 6.0 * a],
    ])


def rosenbrock_hessian_neg(p, x):
    return -rosenbrock_hessian(p, x)


class RosenbrockEnergy(EnergyModel):
    """Quartic Rosenbrock-type energy on R^3.

    ``x* = (1, 1, 1)/sqrt(3)`` is a critical point for every ``(a, b)``; it is
    an index-1 saddle on the sphere for ``(a, b) = (-1, 5.5)`` and index-2 for
    ``(-0.5, 1.5)``.
    """

    dimension = 3

    def __init__(self, a, b):
        self.params = RosenbrockParams(float(a), float(b))

    def __repr__(self):
        return f"RosenbrockEnergy(a={self.params.a!r}, b={self.params.b!r})"

    def energy(self, x):
        return rosenbrock_energy(self.params, x)

    def force(self, x):
        return rosenbrock_force(self.params, x)

    def hessian_neg(self, x):
        return rosenbrock_hessian_neg(self.params, x)


class QuadraticEnergy(EnergyModel):
    """``E(x) = x^T A x / 2`` for symmetric ``A``."""

    def __init__(self, A):
        A = as_matrix(A, name="quadratic matrix")
        if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A))):
            raise ValidationError("quadratic model matrix must be symmetric")
        self.A = A
        self.dimension = A.shape[0]

    def __repr__(self):
        return f"QuadraticEnergy({self.A.tolist()!r})"

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.A @ x)

    def force(self, x):
        return -(self.A @ np.asarray(x, dtype=float))

    def hessian_neg(self, x):
        return -self.A.copy()


def quadratic_model(A):
    return QuadraticEnergy(A)


class Splitting:
    """Decomposition ``F(x) = L x + N(x)``.

    ``N`` is always the exact residual ``F(x) - L x`` so the reconstruction
    holds by construction; only the choice of ``L`` varies.
    """

    def __init__(self, model, linear_part, name="user"):
        self.model = model
        self.linear_part = as_matrix(linear_part, dim=model.dimension, name="linear part")
        self.name = name
        self._is_zero = not np.any(self.linear_part)

    def __repr__(self):
        return f"Splitting(name={self.name!r}, model={self.model!r})"

    @property
    def is_zero(self):
        return self._is_zero

    def nonlinear_part(self, x):
        x = np.asarray(x, dtype=float)
        if self._is_zero:
            return self.model.force(x)
        return self.model.force(x) - self.linear_part @ x

    def reconstruction_error(self, x):
        x = np.asarray(x, dtype=float)
        f = self.model.force(x)
        return norm(self.linear_part @ x + self.nonlinear_part(x) - f) / (1.0 + norm(f))


def default_splitting(model, x_ref=None):
    """Linear part is the negative Hessian evaluated once at ``x_ref`` (origin by default)."""
    if x_ref is None:
        x_ref = np.zeros(model.dimension)
    x_ref = as_vector(x_ref, "x_ref")
    return Splitting(model, model.hessian_neg(x_ref), name="hessian0")


def explicit_splitting(model):
    """``L = 0``: the position update becomes fully explicit."""
    return Splitting(model, np.zeros((model.dimension, model.dimension)), name="explicit-x")


def user_splitting(model, linear_part):
    return Splitting(model, linear_part, name="user")


def fd_gradient(E, x, h=FD_GRAD_STEP):
    """Central-difference gradient of the scalar function ``E`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (E(x + e) - E(x - e)) / (2.0 * h)
    return g


def fd_hessian(E, x, h=FD_HESS_STEP):
    """Nested central-difference Hessian, symmetrised."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = (
                E(x + ei + ej) - E(x + ei - ej) - E(x - ei + ej) + E(x - ei - ej)
            ) / (4.0 * h * h)
    return 0.5 * (H + H.T)
