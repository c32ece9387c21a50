"""Command-line front end: ``hisd run | converge | check``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (a runtime guard
or an invariant/scaling check failed), 3 I/O error.  Failures are reported on
stderr as a single JSON record.
"""

import argparse
import io
from dataclasses import dataclass, field, fields
import json
import math
import re
import sys

import numpy as np

from . import io as hio
from .dynamics import SaddleState, SchemeConfig
from .energy import (
    QuadraticEnergy,
    RosenbrockEnergy,
    default_splitting,
    explicit_splitting,
    user_splitting,
)
from .errors import HisdError, NumericalFailure, ValidationError
from .harness import (
    CONVERGENCE_TAUS,
    DEFECT_NAMES,
    TAU_REF,
    get_preset,
    run_convergence,
    run_trajectory,
    scaling_probe,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

NORM_TOL = 1e-12
ORTHO_TOL = 1e-10
SLOPE_TARGET, SLOPE_TOL = 2.0, 0.2

QUADRATIC_FIXTURE = {
    "matrix": [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]],
    "x0": [0.0, 0.0, 1.0],
    "v": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
}

_POW2 = re.compile(r"^\s*2\s*(?:\^|\*\*)\s*\(?\s*(-?\d+)\s*\)?\s*$")


def parse_tau(text):
    """Parse a step size; ``2^-k`` / ``2**-k`` are exact powers of two."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        m = _POW2.match(str(text))
        if m:
            value = math.ldexp(1.0, int(m.group(1)))
        elif "/" in str(text):
            num, den = str(text).split("/", 1)
            value = float(num) / float(den)
        else:
            try:
                value = float(text)
            except ValueError:
                raise ValidationError(f"cannot parse step size {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise ValidationError(f"step size must be positive, got {text!r}")
    return value


def parse_vector(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse vector {text!r}") from None


def parse_matrix(text):
    if isinstance(text, (list, tuple)):
        return [[float(v) for v in row] for row in text]
    rows = [r for r in str(text).split(";") if r.strip()]
    try:
        return [[float(v) for v in r.split(",")] for r in rows]
    except ValueError:
        raise ValidationError(f"cannot parse matrix {text!r}") from None


def load_config_file(path):
    """JSON object, or ``key = value`` lines (``#`` comments allowed)."""
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad JSON config {path}: {exc}") from None
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in ("tau", "v"):
                data.setdefault(key, []).append(value)
            else:
                data[key] = value
    return {k.replace("-", "_"): v for k, v in data.items()}


@dataclass
class RunConfig:
    energy: str = None
    a: float = None
    b: float = None
    matrix: list = None
    preset: str = None
    x0: list = None
    v: list = None
    k: int = None
    T: float = None
    tau: list = field(default_factory=list)
    tau_ref: float = TAU_REF
    scheme: str = "semi"
    splitting: str = "explicit-x"
    splitting_file: str = None
    out: str = None
    format: str = None

    @classmethod
    def from_sources(cls, file_data, flags):
        cfg = cls()
        names = {f.name for f in fields(cls)}
        for source in (file_data or {}, flags):
            for key, value in source.items():
                if key not in names:
                    raise ValidationError(f"unknown configuration key {key!r}")
                if value is None or value == []:
                    continue
                setattr(cfg, key, value)
        cfg._normalise()
        return cfg

    def _normalise(self):
        if isinstance(self.tau, (str, int, float)):
            self.tau = [self.tau]
        self.tau = [parse_tau(t) for t in self.tau]
        self.tau_ref = parse_tau(self.tau_ref)
        if self.T is not None:
            self.T = float(self.T)
        if self.k is not None:
            self.k = int(self.k)
        if self.a is not None:
            self.a = float(self.a)
        if self.b is not None:
            self.b = float(self.b)
        if self.x0 is not None:
            self.x0 = parse_vector(self.x0)
        if self.v is not None:
            if isinstance(self.v, str):
                self.v = [self.v]
            self.v = [parse_vector(v) for v in self.v]
        if self.matrix is not None:
            self.matrix = parse_matrix(self.matrix)
        if self.energy is None:
            self.energy = "rosenbrock"
        if self.energy not in ("rosenbrock", "quadratic"):
            raise ValidationError(f"unknown energy {self.energy!r}")
        if self.scheme not in ("semi", "explicit"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if self.splitting not in ("hessian0", "explicit-x", "file"):
            raise ValidationError(f"unknown splitting {self.splitting!r}")
        if self.preset is not None and self.energy != "rosenbrock":
            raise ValidationError("presets use the Rosenbrock energy")

    def build(self):
        """Return ``(model, initial_state, T, splitting)``."""
        if self.energy == "rosenbrock":
            preset = None
            if self.preset is not None or self.x0 is None:
                preset = get_preset(self.preset or "a")
            a = self.a if self.a is not None else (preset.a if preset else None)
            b = self.b if self.b is not None else (preset.b if preset else None)
            if a is None or b is None:
                raise ValidationError("Rosenbrock energy needs --a and --b (or a preset)")
            model = RosenbrockEnergy(a, b)
            x0 = self.x0 if self.x0 is not None else list(preset.x0)
            vs = self.v if self.v is not None else [list(v) for v in preset.directions]
            T = self.T if self.T is not None else (preset.T if preset else 10.0)
        else:
            model = QuadraticEnergy(self.matrix or QUADRATIC_FIXTURE["matrix"])
            fixture = self.matrix is None
            x0 = self.x0 if self.x0 is not None else (QUADRATIC_FIXTURE["x0"] if fixture else None)
            if x0 is None:
                raise ValidationError("quadratic energy with a custom matrix needs --x0")
            if self.v is not None:
                vs = self.v
            else:
                vs = QUADRATIC_FIXTURE["v"][: 1 if self.k is None else self.k] if fixture else []
            T = self.T if self.T is not None else 1.0
        if self.k is not None:
            if self.k > len(vs):
                raise ValidationError(
                    f"k={self.k} but only {len(vs)} initial directions given"
                )
            vs = vs[: self.k]
        for i, v in enumerate(vs):
            if len(v) != len(x0):
                raise ValidationError(f"v{i + 1} has length {len(v)}, expected {len(x0)}")
        if len(x0) != model.dimension:
            raise ValidationError(
                f"x0 has length {len(x0)} but the energy has dimension {model.dimension}"
            )
        state = SaddleState.from_initial(x0, vs)
        return model, state, T, self._splitting(model)

    def _splitting(self, model):
        if self.splitting == "explicit-x":
            return explicit_splitting(model)
        if self.splitting == "hessian0":
            return default_splitting(model)
        if not self.splitting_file:
            raise ValidationError("--splitting file requires --splitting-file PATH")
        with open(self.splitting_file) as fh:
            text = fh.read()
        try:
            L = json.loads(text)
        except json.JSONDecodeError:
            L = parse_matrix(text.replace("\n", ";"))
        return user_splitting(model, np.asarray(L, dtype=float))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("ValidationError", message, EXIT_VALIDATION)
        raise SystemExit(EXIT_VALIDATION)


def _common(p):
    p.add_argument("--config", help="JSON or key=value file; flags override it")
    p.add_argument("--energy", choices=["rosenbrock", "quadratic"])
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--matrix", help="quadratic model matrix, rows separated by ';'")
    p.add_argument("--preset", choices=["a", "b", "c", "d"])
    p.add_argument("--x0", help="initial position, comma separated (normalised)")
    p.add_argument("--v", action="append", help="initial direction (repeatable, normalised)")
    p.add_argument("--k", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--tau", action="append", help="step size, e.g. 2^-6 (repeatable)")
    p.add_argument("--tau-ref", dest="tau_ref")
    p.add_argument("--scheme", choices=["semi", "explicit"])
    p.add_argument("--splitting", choices=["hessian0", "explicit-x", "file"])
    p.add_argument("--splitting-file", dest="splitting_file")
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "jsonl"])


def build_parser():
    parser = _Parser(prog="hisd", description="Semi-implicit sphere-constrained saddle dynamics")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="integrate one trajectory"))
    _common(sub.add_parser("converge", help="error and convergence-rate table"))
    _common(sub.add_parser("check", help="constraint invariants and defect scaling"))
    return parser


def _emit_error(kind, message, code, step=None):
    rec = {"error": kind, "message": message, "exit_code": code}
    if step is not None:
        rec["step"] = step
    sys.stderr.write(json.dumps(rec) + "\n")


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_run(cfg):
    model, s0, T, split = cfg.build()
    tau = cfg.tau[0] if cfg.tau else 2.0**-6
    if len(cfg.tau) > 1:
        raise ValidationError("run takes a single --tau")
    traj = run_trajectory(model, SchemeConfig(tau, split, cfg.scheme), s0, T)
    buf = io.StringIO()
    if (cfg.format or "jsonl") == "csv":
        hio.write_trajectory_csv(traj, buf)
    else:
        hio.write_trajectory_jsonl(traj, buf)
    _write(cfg.out, buf.getvalue())
    return EXIT_OK


def cmd_converge(cfg):
    model, s0, T, split = cfg.build()
    taus = cfg.tau or list(CONVERGENCE_TAUS)
    report = run_convergence(model, s0, T, taus, cfg.tau_ref, split, cfg.scheme,
                             label=cfg.preset or "")
    text = hio.report_to_jsonl(report) if cfg.format == "jsonl" else hio.report_to_csv(report)
    _write(cfg.out, text)
    table = hio.format_report_table(report)
    if report.sign_flips:
        table += f"warning: direction sign flips detected at {report.sign_flips}\n"
    (sys.stdout if cfg.out not in (None, "-") else sys.stderr).write(table)
    return EXIT_OK


def run_checks(cfg):
    """Return ``(passed, lines)`` for the invariant and scaling checks."""
    model, s0, T, split = cfg.build()
    if len(cfg.tau) == 1:
        taus = [cfg.tau[0] / 2**j for j in range(4)]
    else:
        taus = cfg.tau or list(CONVERGENCE_TAUS)
    lines = []
    ok = True

    def record(passed, text):
        nonlocal ok
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {text}")

    try:
        probe = scaling_probe(model, s0, T, taus, split, cfg.scheme)
    except NumericalFailure as exc:
        record(False, f"{type(exc).__name__}: {exc}")
        return False, lines
    nd, tang, orth = probe.max_constraint
    record(nd <= NORM_TOL, f"sphere |x|-1 max={nd:.3e} tol={NORM_TOL:.0e}")
    record(tang <= ORTHO_TOL, f"tangency |v.x| max={tang:.3e} tol={ORTHO_TOL:.0e}")
    record(orth <= ORTHO_TOL, f"orthonormality |v.v-delta| max={orth:.3e} tol={ORTHO_TOL:.0e}")
    for name in DEFECT_NAMES:
        vals = ", ".join(f"{v:.3e}" for v in probe.defects[name])
        slope = probe.slopes[name]
        if slope is None:
            record(True, f"{name} at round-off floor [{vals}]")
        else:
            good = abs(slope - SLOPE_TARGET) <= SLOPE_TOL
            record(good, f"{name} slope={slope:.3f} target={SLOPE_TARGET}+-{SLOPE_TOL} [{vals}]")
    return ok, lines


def cmd_check(cfg):
    ok, lines = run_checks(cfg)
    text = "\n".join(lines) + "\n"
    if cfg.out:
        _write(cfg.out, json.dumps({"passed": ok, "checks": lines}, indent=2) + "\n")
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_data = load_config_file(args.config) if args.config else {}
        cfg = RunConfig.from_sources(file_data, flags)
        return COMMANDS[args.command](cfg)
    except NumericalFailure as exc:
        _emit_error(type(exc).__name__, str(exc), EXIT_NUMERICAL, exc.step_index)
        return EXIT_NUMERICAL
    except (HisdError, ValueError) as exc:
        _emit_error(type(exc).__name__, str(exc), EXIT_VALIDATION)
        return EXIT_VALIDATION
    except OSError as exc:
        _emit_error(type(exc).__name__, str(exc), EXIT_IO)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
