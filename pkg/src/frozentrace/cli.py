"""Command-line front end.

Usage::

    frozentrace --command bench --op power_law:dim=256,p=2 --m 12,48
    frozentrace --command verify --trials 2000 --out checks.csv
    frozentrace --config run.cfg --Ls 1,10,25,50

Settings come from an optional ``key = value`` config file (``#`` comments),
overridden by flags.  Exit codes: 0 success, 1 a bound check failed, 2 the
configuration could not be parsed, 3 a numerical precondition was violated.

Operator spec strings are ``kind:key=value,...`` with kinds ``flat``
(``dim``, ``value``), ``power_law`` (``dim``, ``p``), ``low_rank`` (``dim``,
``head`` as ``;``-separated values, ``tail``), ``diag`` (``values``) and
``identity`` (``dim``).  Every kind accepts ``seed`` (rotation), ``psd``
(true/false) and ``stretch`` (``;``-separated scales of the leading
eigenvalues).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import ContractError, MatrixMarketError, SearchFailure
from .estimators import ESTIMATOR_TAGS, relative_error
from .harness import (
    EstimatorSpec,
    IntegralSpec,
    check_bound,
    check_low_rank_tail,
    check_range_finder,
    run_trials,
    sample_complexity_sweep,
)
from .linop import DenseOperator, SpectrumSpec, load_matrix_market, make_spectral
from .probes import ProbeKind
from .trajectory import (
    FrozenSchedule,
    cost_profile,
    estimate_trace_integral,
    make_affine_trajectory,
    traceless_direction,
)

__all__ = ["RunConfig", "ConfigError", "parse_config", "parse_op_spec", "main"]

SCHEMA_VERSION = 1
COMMANDS = ("bench", "sweep", "trajectory", "verify", "cost")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_PARSE, EXIT_CONTRACT = 0, 1, 2, 3


class ConfigError(ValueError):
    """Unparseable configuration."""


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _ints(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(";", ",").split(",") if x.strip())


def _floats(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).replace(";", ",").split(",") if x.strip())


def _strs(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(str(x) for x in v)
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    op: str = "power_law:dim=64,p=1"
    mtx: str | None = None
    m: tuple = (12,)
    probe: str = "gaussian"
    seed: int = 0
    estimators: tuple = ("exact", "hutchinson", "hutchpp")
    trials: int = 2000
    eps: tuple = (0.2, 0.1, 0.05, 0.025)
    delta: float = 0.1
    slack: float | None = None
    L: int = 100
    Ls: tuple = (10,)
    T: float = 1.0
    fix_probes: bool = True
    redraw_sketch: bool = True
    family: str = "affine"
    b_scale: float = 1.0
    b_seed: int = 1
    beta: tuple | None = None
    repeats: int = 3
    out: str | None = None
    format: str = "csv"


_CONVERTERS = {
    "command": str,
    "op": str,
    "mtx": str,
    "m": _ints,
    "probe": str,
    "seed": int,
    "estimators": _strs,
    "trials": int,
    "eps": _floats,
    "delta": float,
    "slack": float,
    "L": int,
    "Ls": _ints,
    "T": float,
    "fix_probes": _bool,
    "redraw_sketch": _bool,
    "family": str,
    "b_scale": float,
    "b_seed": int,
    "beta": _floats,
    "repeats": int,
    "out": str,
    "format": str,
}
_KEY_ALIASES = {"fix-probes": "fix_probes", "redraw-sketch": "redraw_sketch", "b-scale": "b_scale",
                "b-seed": "b_seed", "l": "L", "ls": "Ls", "t": "T"}


def _canonical_key(key: str) -> str:
    k = key.strip()
    k = _KEY_ALIASES.get(k, _KEY_ALIASES.get(k.lower(), k))
    if k not in _CONVERTERS:
        raise ConfigError(f"unknown config key {key!r}")
    return k


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        try:
            out[_canonical_key(k)] = v.strip()
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def parse_config(values: dict) -> RunConfig:
    """Build a RunConfig from raw string (or typed) values."""
    kw = {}
    for k, v in values.items():
        if v is None:
            continue
        key = _canonical_key(k)
        try:
            kw[key] = _CONVERTERS[key](v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {v!r} ({exc})") from None
    if "command" not in kw:
        raise ConfigError("no command given (use --command or 'command = ...')")
    if kw["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {kw['command']!r}; expected one of {COMMANDS}")
    if kw.get("format", "csv") not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {kw['format']!r}")
    try:
        ProbeKind.parse(kw.get("probe", "gaussian"))
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    for tag in kw.get("estimators", ()):
        if tag not in ESTIMATOR_TAGS:
            raise ConfigError(f"unknown estimator {tag!r}")
    return RunConfig(**kw)


# -- operator specs -----------------------------------------------------------------


def parse_op_spec(text: str) -> SpectrumSpec | np.ndarray:
    """Parse ``kind:key=value,...``; ``diag`` returns the explicit diagonal array."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    params = {}
    for item in rest.split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise ConfigError(f"operator parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        params[k.strip().lower()] = v.strip()

    def take(key, conv, default=None):
        if key not in params:
            if default is None:
                raise ConfigError(f"operator {kind!r} needs parameter {key!r}")
            return default
        try:
            return conv(params.pop(key))
        except ValueError as exc:
            raise ConfigError(f"bad operator parameter {key!r}: {exc}") from None

    seed = take("seed", int, 0)
    psd = take("psd", _bool, True)
    stretch = take("stretch", _floats, ())
    if kind == "diag":
        values = np.array(take("values", _floats))
        spec = None
    elif kind == "identity":
        spec = SpectrumSpec.flat(take("dim", int), 1.0, rotation_seed=seed, psd=psd)
    elif kind == "flat":
        spec = SpectrumSpec.flat(take("dim", int), take("value", float, 1.0), rotation_seed=seed, psd=psd)
    elif kind == "power_law":
        spec = dataclasses.replace(SpectrumSpec.power_law(take("dim", int), take("p", float, 1.0), seed), psd=psd)
    elif kind == "low_rank":
        spec = SpectrumSpec.low_rank(take("dim", int), take("head", _floats), take("tail", float, 0.0),
                                     rotation_seed=seed, psd=psd)
    else:
        raise ConfigError(f"unknown operator kind {kind!r}")
    if params:
        raise ConfigError(f"unknown operator parameters {sorted(params)}")
    if spec is None:
        return values
    if stretch:
        spec = SpectrumSpec.stretched(spec, stretch)
    return spec


def build_operator(cfg: RunConfig) -> DenseOperator:
    if cfg.mtx:
        return load_matrix_market(cfg.mtx)
    spec = parse_op_spec(cfg.op)
    if isinstance(spec, np.ndarray):
        return DenseOperator(np.diag(spec), is_psd_claimed=bool(np.all(spec >= 0)))
    return make_spectral(spec)


def build_trajectory(cfg: RunConfig, a0: DenseOperator):
    if cfg.family == "constant":
        b = DenseOperator(np.zeros((a0.dim, a0.dim)), is_symmetric=True)
    elif cfg.family == "affine":
        b = traceless_direction(a0.dim, cfg.b_seed, cfg.b_scale)
    else:
        raise ConfigError(f"unknown trajectory family {cfg.family!r}")
    return make_affine_trajectory(a0, b, cfg.T, cfg.L), b


# -- output -------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def write_rows(rows: list[dict], cfg: RunConfig, stream=None) -> None:
    """CSV (RFC 4180, header first) or JSON list of objects with the same keys."""
    rows = [{"schema_version": SCHEMA_VERSION, **r} for r in rows]
    if cfg.format == "json":
        def js(v):
            if isinstance(v, (np.floating, float)):
                v = float(v)
                return v if math.isfinite(v) else None
            if isinstance(v, np.integer):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        text = json.dumps([{k: js(v) for k, v in r.items()} for r in rows], indent=1) + "\n"
    else:
        buf = io.StringIO()
        if rows:
            w = csv.writer(buf, lineterminator="\r\n")
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([_fmt(v) for v in r.values()])
        text = buf.getvalue()
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        (stream or sys.stdout).write(text)


# -- commands -----------------------------------------------------------------------


def cmd_bench(cfg: RunConfig) -> int:
    op = build_operator(cfg)
    trace = op.exact_trace
    rows = []
    for tag in cfg.estimators:
        for m in (cfg.m if tag != "exact" else (0,)):
            if tag == "exact":
                rep = EstimatorSpec("exact", 1).report(op, cfg.seed)
            elif tag == "deflated":
                rep = EstimatorSpec("deflated", m, cfg.probe, stale_op=op).report(op, cfg.seed)
            else:
                rep = EstimatorSpec(tag, m, cfg.probe).report(op, cfg.seed)
            rows.append({
                "estimator": tag,
                "m": m if tag != "exact" else "",
                "dim": op.dim,
                "value": rep.value,
                "exact": trace,
                "rel_error": float(relative_error(rep.value, trace)),
                "matvecs": rep.matvecs_used,
                "sketch_count": rep.probes[0],
                "hutchinson_count": rep.probes[1],
                "seed": cfg.seed,
                "wall_time": rep.wall_time,
            })
    write_rows(rows, cfg)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    op = build_operator(cfg)
    rows = []
    for tag in cfg.estimators:
        if tag not in ("hutchinson", "hutchpp"):
            continue
        curve = sample_complexity_sweep(op, tag, cfg.eps, cfg.delta, cfg.trials, cfg.seed, cfg.probe)
        for e, m in curve.points:
            rows.append({"estimator": tag, "epsilon": e, "delta": cfg.delta, "m_required": m,
                         "trials": cfg.trials, "slope": curve.fitted_loglog_slope})
    write_rows(rows, cfg)
    return EXIT_OK


def _integral_spec(cfg, l_s, m):
    weights = None
    if cfg.beta is not None:
        if len(cfg.beta) not in (1, cfg.L):
            raise ConfigError(f"beta needs 1 or {cfg.L} values, got {len(cfg.beta)}")
        weights = tuple(np.sqrt(np.broadcast_to(np.asarray(cfg.beta, dtype=float), (cfg.L,))))
    return IntegralSpec(FrozenSchedule(cfg.L, l_s), m, ProbeKind.parse(cfg.probe), cfg.fix_probes,
                        cfg.redraw_sketch, weights)


def cmd_trajectory(cfg: RunConfig) -> int:
    traj, _ = build_trajectory(cfg, build_operator(cfg))
    rows = []
    for l_s in cfg.Ls:
        for m in cfg.m:
            spec = _integral_spec(cfg, l_s, m)
            single = estimate_trace_integral(traj, spec.sched, m, spec.kind, cfg.seed, spec.fix_probes,
                                             spec.redraw_sketch, spec.weights)
            summ = run_trials(spec, traj, cfg.trials, cfg.seed) if cfg.trials >= 2 else None
            exact_int = traj.exact_integral if spec.weights is None else ""
            rows.append({
                "L": cfg.L, "Ls": l_s, "m": m, "T": cfg.T, "value": single.value,
                "exact_integral": exact_int,
                "qr_count": single.qr_count, "total_matvecs": single.total_matvecs,
                "trials": cfg.trials,
                "mean": summ.mean if summ else "", "variance": summ.variance if summ else "",
                "ci_halfwidth": summ.ci_halfwidth if summ else "",
                "wall_time_qr": single.wall_time_qr, "wall_time_total": single.wall_time_total,
            })
    write_rows(rows, cfg)
    return EXIT_OK


def verify_suite(cfg: RunConfig) -> list:
    """Bound checks on the configured operator; raises ContractError for non-PSD input."""
    op = build_operator(cfg)
    if not op.is_psd_claimed:
        raise ContractError("variance bounds apply only to PSD-claimed operators")
    kind = ProbeKind.parse(cfg.probe)
    n = cfg.trials
    checks = []
    for m in cfg.m:
        for tag in ("hutchinson", "hutchpp"):
            summ = run_trials(EstimatorSpec(tag, m, kind), op, n, cfg.seed)
            checks.append(check_bound("unbiased", summ, op))
            checks[-1] = dataclasses.replace(checks[-1], name=f"{tag}-unbiased")
            checks.append(check_bound(f"{tag}-variance", summ, op, m, slack=cfg.slack))
            if tag == "hutchinson" and kind is ProbeKind.GAUSSIAN:
                checks.append(check_bound("hutchinson-frobenius", summ, op, m, slack=cfg.slack))
    # stale basis: sketch from A, estimate A + d B with ||d B||_F = lip * (Ls - 1) * eta
    traj, b = build_trajectory(cfg, op)
    eta = traj.eta
    for l_s in cfg.Ls:
        for m in cfg.m:
            moved = DenseOperator(op.matrix + ((l_s - 1) * eta) * b.matrix, is_symmetric=True)
            summ = run_trials(EstimatorSpec("deflated", m, kind, stale_op=op), moved, n, cfg.seed)
            chk = check_bound("unbiased", summ, moved)
            checks.append(dataclasses.replace(chk, name="deflated-unbiased"))
            checks.append(check_bound("deflated-variance", summ, op, m, l_s, eta, traj.lipschitz_bound,
                                      slack=cfg.slack))
            isumm = run_trials(_integral_spec(cfg, l_s, m), traj, n, cfg.seed)
            if cfg.beta is None:
                chk = check_bound("unbiased", isumm, target=traj.exact_integral)
                checks.append(dataclasses.replace(chk, name="log-density-unbiased"))
                checks.append(check_bound("log-density-variance", isumm, None, m, l_s, eta, traj.lipschitz_bound,
                                          slack=cfg.slack, horizon=traj.horizon, trace_bound=traj.trace_bound))
    for k in (1, 2, 4, 8):
        if k < op.dim:
            checks.append(check_low_rank_tail(op, k))
        if 2 * k + 1 <= op.dim:
            chk = check_range_finder(op, k, trials=200, base_seed=cfg.seed)
            if cfg.slack is not None:
                chk = type(chk).make(chk.name, chk.theoretical, chk.empirical, cfg.slack, chk.detail)
            checks.append(chk)
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    checks = verify_suite(cfg)
    rows = [{"check": c.name, "theoretical": c.theoretical, "empirical": c.empirical, "slack": c.slack,
             "passed": c.passed, "detail": c.detail} for c in checks]
    write_rows(rows, cfg)
    n_pass = sum(c.passed for c in checks)
    print(f"verify: {n_pass} passed, {len(checks) - n_pass} failed", file=sys.stderr)
    return EXIT_OK if n_pass == len(checks) else EXIT_CHECK_FAILED


def cmd_cost(cfg: RunConfig) -> int:
    traj, _ = build_trajectory(cfg, build_operator(cfg))
    m = cfg.m[0]
    grid = cfg.Ls if len(cfg.Ls) > 1 else (1, 10, 25, 50)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = cost_profile(traj, m, grid, cfg.probe, cfg.seed, cfg.repeats)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    rows = []
    for r in table:
        expected = -(-cfg.L // r.l_s)
        if r.qr_count != expected:
            raise ContractError(f"qr_count {r.qr_count} != ceil(L/L_s) = {expected}")
        rows.append({"Ls": r.l_s, "requested_Ls": r.requested_l_s, "clamped": r.clamped, "qr_count": r.qr_count,
                     "wall_time_qr": r.wall_time_qr, "wall_time_total": r.wall_time_total})
    by_ls = {r.l_s: r for r in table}
    if 1 in by_ls and 10 in by_ls and not by_ls[1].wall_time_total > by_ls[10].wall_time_total:
        print("warning: wall time at L_s=1 did not exceed L_s=10", file=sys.stderr)
    write_rows(rows, cfg)
    return EXIT_OK


_COMMANDS = {"bench": cmd_bench, "sweep": cmd_sweep, "trajectory": cmd_trajectory, "verify": cmd_verify,
             "cost": cmd_cost}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frozentrace", description="Stochastic trace estimation benchmarks and checks.")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--op", help="operator spec, e.g. power_law:dim=256,p=2")
    p.add_argument("--mtx", help="Matrix Market file (overrides --op)")
    p.add_argument("--m", help="matvec budget(s), comma separated")
    p.add_argument("--probe", choices=("gaussian", "rademacher"))
    p.add_argument("--seed", type=int)
    p.add_argument("--estimators", help="comma separated subset of " + ",".join(ESTIMATOR_TAGS))
    p.add_argument("--trials", type=int)
    p.add_argument("--eps", help="epsilon grid for sweep, comma separated")
    p.add_argument("--delta", type=float)
    p.add_argument("--slack", type=float)
    p.add_argument("--L", dest="L", type=int)
    p.add_argument("--Ls", dest="Ls", help="shared step count(s), comma separated")
    p.add_argument("--T", dest="T", type=float)
    p.add_argument("--fix-probes", dest="fix_probes", choices=("true", "false"))
    p.add_argument("--redraw-sketch", dest="redraw_sketch", choices=("true", "false"))
    p.add_argument("--family", choices=("affine", "constant"))
    p.add_argument("--b-scale", dest="b_scale", type=float)
    p.add_argument("--b-seed", dest="b_seed", type=int)
    p.add_argument("--beta", help="beta_t weights: one value or L values, comma separated")
    p.add_argument("--repeats", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    return p


def load_run_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = read_config_file(args.config) if args.config else {}
    values.update({k: v for k, v in vars(args).items() if k != "config" and v is not None})
    return parse_config(values)


def main(argv=None) -> int:
    try:
        cfg = load_run_config(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_PARSE if exc.code else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        return _COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ContractError, MatrixMarketError, SearchFailure) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
