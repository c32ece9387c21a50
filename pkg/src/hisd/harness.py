"""Trajectory runner, reference solutions, error tables and defect scaling probes."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np

from .dynamics import SaddleState, SchemeConfig, constraint_defects, rhs_continuous, step
from .energy import RosenbrockEnergy, explicit_splitting
from .errors import GridMismatch, NumericalFailure, ValidationError

TAU_REF = 2.0**-13
CONVERGENCE_TAUS = tuple(2.0**-e for e in range(6, 10))
DEFECT_FLOOR = 1e-12
DEFECT_NAMES = ("x_tilde_norm_defect", "transport_defect", "gs_defect")
X_STAR = np.ones(3) / math.sqrt(3.0)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    a: float
    b: float
    x0: tuple
    directions: tuple
    T: float = 10.0

    @property
    def k(self):
        return len(self.directions)

    def model(self):
        return RosenbrockEnergy(self.a, self.b)

    def initial_state(self):
        return SaddleState.from_initial(self.x0, self.directions)


PRESETS = {
    "a": ExperimentPreset("a", -1.0, 5.5, (0.8, 1.0, 1.0), ((1.0, -0.4, -0.4),)),
    "b": ExperimentPreset("b", -1.0, 5.5, (1.0, 1.0, 1.4), ((-1.0, 1.0, 0.0),)),
    "c": ExperimentPreset(
        "c", -0.5, 1.5, (0.8, 1.0, 1.0), ((1.0, -0.4, -0.4), (0.0, 1.0, -1.0))
    ),
    "d": ExperimentPreset(
        "d", -0.5, 1.5, (1.0, 1.0, 1.4), ((-1.0, 1.0, 0.0), (-0.7, -0.7, 1.0))
    ),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


def num_steps(T, tau):
    """Number of steps ``N = T / tau``; rejects ``tau`` that does not divide ``T``."""
    if not (tau > 0 and T > 0):
        raise ValidationError("T and tau must be positive")
    n = round(T / tau)
    if n < 1 or abs(n * tau - T) > 1e-12 * T:
        raise ValidationError(f"tau={tau!r} does not divide T={T!r} into whole steps")
    return n


@dataclass
class Trajectory:
    """States at recorded nodes ``t = n * tau`` for ``n`` multiple of ``record_every``.

    ``diagnostics[j]`` belongs to the step that produced ``states[j + 1]``.
    ``max_defects`` and ``max_constraint`` are maxima over *all* steps,
    recorded or not.
    """

    tau: float
    T: float
    record_every: int
    times: list
    states: list
    diagnostics: list
    scheme: str = "semi"
    splitting: str = "explicit-x"
    max_defects: dict = field(default_factory=dict)
    max_constraint: tuple = (0.0, 0.0, 0.0)
    sign_flips: list = field(default_factory=list)

    @property
    def k(self):
        return self.states[0].k

    @property
    def final(self):
        return self.states[-1]

    def positions(self):
        return np.array([s.x for s in self.states])

    def directions(self, i):
        return np.array([s.directions[i] for s in self.states])


def run_trajectory(model, cfg, s0, T, record_every=1, keep_diagnostics=True):
    """Iterate :func:`hisd.dynamics.step` from ``s0`` up to time ``T``.

    Numerical failures are re-raised with the 1-based index of the failing step.
    """
    n_steps = num_steps(T, cfg.tau)
    if record_every < 1 or n_steps % record_every:
        raise ValidationError(
            f"record_every={record_every} must divide the step count {n_steps}"
        )
    s = s0
    times = [0.0]
    states = [s0]
    diags = []
    dmax = dict.fromkeys(DEFECT_NAMES, 0.0)
    cmax = list(constraint_defects(s0))
    flips = []
    for n in range(1, n_steps + 1):
        prev = s
        try:
            s, d = step(model, cfg, prev)
        except NumericalFailure as exc:
            raise exc.with_step(n)
        s = SaddleState(s.x, s.directions, n * cfg.tau)
        dmax["x_tilde_norm_defect"] = max(dmax["x_tilde_norm_defect"], d.x_tilde_norm_defect)
        dmax["transport_defect"] = max(dmax["transport_defect"], d.max_transport_defect)
        dmax["gs_defect"] = max(dmax["gs_defect"], d.max_gs_defect)
        for j, c in enumerate(constraint_defects(s)):
            if c > cmax[j]:
                cmax[j] = c
        for i, (v_new, v_old) in enumerate(zip(s.directions, prev.directions)):
            if float(v_new @ v_old) < 0.0:
                flips.append((n, i))
        if n % record_every == 0:
            times.append(n * cfg.tau)
            states.append(s)
            if keep_diagnostics:
                diags.append(d)
    split = cfg.splitting
    return Trajectory(
        tau=cfg.tau,
        T=T,
        record_every=record_every,
        times=times,
        states=states,
        diagnostics=diags,
        scheme=cfg.scheme,
        splitting=getattr(split, "name", "explicit-x") if split is not None else "explicit-x",
        max_defects=dmax,
        max_constraint=tuple(cmax),
        sign_flips=flips,
    )


def _reference_stride(taus, tau_ref):
    strides = []
    for tau in taus:
        r = tau / tau_ref
        if r < 1 or r != int(r):
            raise GridMismatch(f"tau={tau!r} is not a whole multiple of tau_ref={tau_ref!r}")
        strides.append(int(r))
    return math.gcd(*strides) if strides else 1


def reference_solution(model, s0, T, tau_ref=TAU_REF, coarse_taus=CONVERGENCE_TAUS,
                       splitting=None, scheme="semi"):
    """Fine-step trajectory kept only at nodes shared with every coarse grid."""
    if splitting is None:
        splitting = explicit_splitting(model)
    cfg = SchemeConfig(tau_ref, splitting, scheme)
    stride = _reference_stride(coarse_taus, tau_ref)
    return run_trajectory(model, cfg, s0, T, record_every=stride, keep_diagnostics=False)


def error_against_reference(traj, ref):
    """Max over ``n >= 1`` of ``|x(t_n) - x_n|`` and ``|v_i(t_n) - v_{i,n}|``.

    Returns ``(err_x, [err_v1, ..., err_vk])``.  Only exactly shared times are
    compared; a coarse node missing from the reference raises GridMismatch.
    """
    if traj.k != ref.k:
        raise GridMismatch(f"index mismatch: {traj.k} vs {ref.k}")
    index = {t: j for j, t in enumerate(ref.times)}
    err_x = 0.0
    err_v = [0.0] * traj.k
    for t, s in zip(traj.times[1:], traj.states[1:]):
        j = index.get(t)
        if j is None:
            raise GridMismatch(f"time {t!r} is not a reference node")
        r = ref.states[j]
        err_x = max(err_x, float(np.linalg.norm(r.x - s.x)))
        for i in range(traj.k):
            err_v[i] = max(err_v[i], float(np.linalg.norm(r.directions[i] - s.directions[i])))
    return err_x, err_v


def convergence_rates(errors, taus=None):
    """``log2(err_j / err_{j+1})`` between consecutive halvings; ``None`` if undefined."""
    errors = list(errors)
    if len(errors) < 2:
        return []
    if taus is not None:
        for t0, t1 in zip(taus, taus[1:]):
            if t0 != 2.0 * t1:
                raise ValidationError(f"step sizes {t0!r}, {t1!r} are not a halving")
    rates = []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 > 0.0 and e1 > 0.0 and math.isfinite(e0) and math.isfinite(e1):
            rates.append(math.log2(e0 / e1))
        else:
            rates.append(None)
    return rates


@dataclass
class ConvergenceReport:
    taus: list
    err_x: list
    err_v: list  # err_v[i][level]
    tau_ref: float
    label: str = ""
    sign_flips: dict = field(default_factory=dict)
    max_constraint: tuple = (0.0, 0.0, 0.0)

    @property
    def k(self):
        return len(self.err_v)

    def _rates(self, errors):
        # only adjacent halvings carry a rate
        rates = convergence_rates(errors)
        return [r if t0 == 2.0 * t1 else None
                for r, t0, t1 in zip(rates, self.taus, self.taus[1:])]

    @property
    def rates_x(self):
        return self._rates(self.err_x)

    @property
    def rates_v(self):
        return [self._rates(e) for e in self.err_v]

    def all_rates(self):
        out = list(self.rates_x)
        for r in self.rates_v:
            out.extend(r)
        return out


def _threads():
    raw = os.environ.get("HISD_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"HISD_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _run_job(args):
    model, cfg, s0, T, record_every, keep = args
    return run_trajectory(model, cfg, s0, T, record_every, keep)


def _map(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


def run_convergence(model, s0, T, taus=CONVERGENCE_TAUS, tau_ref=TAU_REF,
                    splitting=None, scheme="semi", ref_scheme="semi",
                    workers=None, label="", return_trajectories=False):
    """Sweep ``taus`` against a fine-step reference and collect max errors.

    ``taus`` are sorted coarse to fine.  The reference is computed with
    ``ref_scheme`` (semi-implicit by default).  Jobs are dispatched to
    ``workers`` processes (default: ``HISD_THREADS`` or the CPU count) and
    reassembled in ``tau`` order, so the report does not depend on
    completion order.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    if not taus:
        raise ValidationError("at least one step size is required")
    if splitting is None:
        splitting = explicit_splitting(model)
    workers = _threads() if workers is None else workers
    stride = _reference_stride(taus, tau_ref)
    jobs = [(model, SchemeConfig(tau_ref, splitting, ref_scheme), s0, T, stride, False)]
    jobs += [(model, SchemeConfig(t, splitting, scheme), s0, T, 1, False) for t in taus]
    ref, *trajs = _map(jobs, workers)
    err_x = []
    err_v = [[] for _ in range(s0.k)]
    flips = {}
    cmax = list(ref.max_constraint)
    for tau, tr in zip(taus, trajs):
        ex, ev = error_against_reference(tr, ref)
        err_x.append(ex)
        for i, e in enumerate(ev):
            err_v[i].append(e)
        if tr.sign_flips:
            flips[tau] = tr.sign_flips
        cmax = [max(a, b) for a, b in zip(cmax, tr.max_constraint)]
    if ref.sign_flips:
        flips[tau_ref] = ref.sign_flips
    report = ConvergenceReport(taus, err_x, err_v, tau_ref, label, flips, tuple(cmax))
    if return_trajectories:
        return report, ref, trajs
    return report


def fit_slope(taus, values, floor=DEFECT_FLOOR):
    """Least-squares slope of ``log2(values)`` against ``log2(taus)``.

    Returns ``None`` when every value sits at or below ``floor`` (round-off).
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.all(values <= floor):
        return None
    if np.any(values <= 0.0) or len(taus) < 2:
        return float("nan")
    return float(np.polyfit(np.log2(taus), np.log2(values), 1)[0])


@dataclass
class ScalingProbe:
    taus: list
    defects: dict  # name -> list of max defects, one per tau
    slopes: dict  # name -> fitted slope or None
    max_constraint: tuple = (0.0, 0.0, 0.0)

    def ratios(self, name):
        v = self.defects[name]
        return [a / b if b > 0 else float("nan") for a, b in zip(v, v[1:])]


def scaling_probe(model, s0, T, taus=CONVERGENCE_TAUS, splitting=None, scheme="semi",
                  workers=None):
    """Maxima over a trajectory of the per-step second-order defects, per ``tau``."""
    taus = sorted((float(t) for t in taus), reverse=True)
    if splitting is None:
        splitting = explicit_splitting(model)
    workers = _threads() if workers is None else workers
    jobs = [(model, SchemeConfig(t, splitting, scheme), s0, T, num_steps(T, t), False)
            for t in taus]
    trajs = _map(jobs, workers)
    defects = {name: [tr.max_defects[name] for tr in trajs] for name in DEFECT_NAMES}
    slopes = {name: fit_slope(taus, defects[name]) for name in DEFECT_NAMES}
    cmax = tuple(max(tr.max_constraint[j] for tr in trajs) for j in range(3))
    return ScalingProbe(taus, defects, slopes, cmax)


def continuous_reference(model, s0, t_eval, rtol=1e-12, atol=1e-13):
    """High-order solution of the continuous dynamics at times ``t_eval``.

    Integrates the unprojected right-hand side with an adaptive 8th-order
    Runge-Kutta method; independent of every discrete operator above.
    """
    from scipy.integrate import solve_ivp

    d, k = s0.dimension, s0.k

    def unpack(y):
        return SaddleState(y[:d], tuple(y[d * (i + 1):d * (i + 2)] for i in range(k)))

    def f(t, y):
        dx, dvs = rhs_continuous(model, unpack(y))
        return np.concatenate([dx, *dvs])

    y0 = np.concatenate([s0.x, *s0.directions])
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(f, (0.0, float(t_eval[-1])), y0, method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalFailure(f"reference integration failed: {sol.message}")
    return [unpack(sol.y[:, j]) for j in range(sol.y.shape[1])]
