"""Command-line driver: configuration, subcommand dispatch, run archive.

Every subcommand reads a JSON configuration, runs one pipeline stage (or
all of them), and writes an archive directory::

    <out>/config.snapshot.json   resolved configuration
    <out>/report.json            acceptance rows and stage results
    <out>/*.csv                  tabular results
    <out>/plotdata/*.tsv         series for plotting
    <out>/logs/                  run log and wall-clock timings

Exit status: 0 all rows pass, 1 an acceptance row failed, 2 usage or
configuration error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from .coeffs import coefficient_field
from .config import ConfigError, RunConfig, parse_config
from .model import TestFunction
from .suites import expansion_suite, gauge_suite, hs_suite, weyl_check
from .verify import (
    TraceLadder,
    analytic_targets,
    build_ladder,
    expansion_fit,
    is_free_problem,
    kernel_order_check,
    write_fit_csv,
    write_ladder_csv,
    write_plot_tsv,
)

__all__ = ["main", "build_parser", "run", "Row", "StageResult", "EXIT_PASS", "EXIT_FAIL", "EXIT_USAGE", "EXIT_INTERNAL"]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3
ENV_PREFIX = "SEMITRACE_"
COMMANDS = ("gauge-check", "expand-check", "coeffs", "hs-check", "trace", "verify", "full-report")

log = logging.getLogger("semitrace")


# ---------------------------------------------------------------------------
# Report rows
# ---------------------------------------------------------------------------


@dataclass
class Row:
    """One acceptance row: ``status`` is ``"pass"``, ``"fail"`` or ``"n/a"``."""

    name: str
    value: float | None
    tolerance: float | None
    comparison: str
    status: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "tolerance": self.tolerance,
            "comparison": self.comparison,
            "status": self.status,
            "detail": self.detail,
        }


def _check(name: str, value: float | None, tol: float, comparison: str = "<=", detail: str = "") -> Row:
    if value is None or not math.isfinite(value):
        return Row(name, None if value is None else float(value), tol, comparison, "fail", detail or "no finite value")
    ok = value <= tol if comparison == "<=" else value >= tol
    return Row(name, float(value), tol, comparison, "pass" if ok else "fail", detail)


def _na(name: str, detail: str) -> Row:
    return Row(name, None, None, "", "n/a", detail)


@dataclass
class StageResult:
    """Rows and JSON payload produced by one stage."""

    rows: list[Row] = field(default_factory=list)
    payload: dict = field(default_factory=dict)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_tsv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


class Context:
    """Shared state of one run (configuration, archive directory, cached ladder)."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.ladder: TraceLadder | None = None
        (out / "plotdata").mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(parents=True, exist_ok=True)


def stage_gauge(ctx: Context) -> StageResult:
    cfg, tol = ctx.cfg.data["gauge_check"], ctx.cfg.tolerances
    prob = ctx.cfg.problem
    rep = gauge_suite(
        prob.B,
        prob.V,
        seed=ctx.cfg.seed,
        points=cfg["points"],
        base_points=cfg["base_points"],
        gauge_amplitude=cfg["amplitude"],
        gauge_grid=cfg["grid_n"],
        gauge_p=cfg["p"],
        eigen_count=cfg["eigenvalues"],
    )
    rows = [
        _check("gauge.transversality", rep.transversality, tol["transversality"]),
        _check("gauge.taylor_fit", rep.taylor_fit, tol["taylor_fit"]),
        _check("gauge.phase_identity", rep.phase_identity, tol["phase_identity"]),
        _check("gauge.spectrum_shift", rep.spectrum_shift, tol["spectrum_shift"]),
    ]
    return StageResult(rows, {"gauge": rep.to_dict()})


def stage_expand(ctx: Context) -> StageResult:
    cfg, tol = ctx.cfg.data["expand_check"], ctx.cfg.tolerances
    prob = ctx.cfg.problem
    rep = expansion_suite(prob.B, prob.V, x0=cfg["x0"], h_ladder=tuple(cfg["h"]), truncations=tuple(cfg["truncations"]))
    rows = []
    for m in rep.orders:
        key = f"order_m{m}"
        name = f"expand.{key}"
        if key not in tol:
            continue
        if rep.saturated[m]:
            rows.append(_na(name, "remainder at round-off level (expansion exact for these fields)"))
        else:
            rows.append(_check(name, rep.orders[m], tol[key], ">="))
    ms = sorted(rep.remainders)
    _write_tsv(
        ctx.out / "plotdata" / "expansion_remainders.tsv",
        ["h"] + [f"remainder_m{m}" for m in ms],
        zip(rep.h, *(rep.remainders[m] for m in ms)),
    )
    return StageResult(rows, {"expansion": rep.to_dict()})


def stage_coeffs(ctx: Context) -> StageResult:
    prob = ctx.cfg.problem
    grid = prob.domain.with_grid(ctx.cfg.data["coeffs"]["grid_n"])
    fields = {r: coefficient_field(r, prob.B, prob.V, prob.phi, grid) for r in (0, 1, 2)}
    pts = grid.grid_points().reshape(-1, grid.d)
    with open(ctx.out / "coeffs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(grid.d)] + ["f0", "f1", "f2"])
        cols = [np.broadcast_to(fields[r].values, grid.shape).ravel() for r in (0, 1, 2)]
        for i in range(pts.shape[0]):
            w.writerow([repr(float(v)) for v in pts[i]] + [repr(float(c[i])) for c in cols])
    integrals = {f"f{r}": fields[r].integral() for r in (0, 1, 2)}
    return StageResult([], {"coefficients": {"grid_n": grid.grid_n, "integrals": integrals}})


def stage_hs(ctx: Context) -> StageResult:
    cfg, tol = ctx.cfg.data["hs_check"], ctx.cfg.tolerances
    phi = TestFunction.from_dict(cfg["phi"])
    rep = hs_suite(
        phi, n=cfg["n"], matrices=cfg["matrices"], N=cfg["N"], delta=cfg["delta"], quad_n=cfg["quad_n"], seed=ctx.cfg.seed
    )
    rows = [_check("hs.apply", rep.apply_error, tol["hs_apply"])]
    rows += [_check(f"hs.derivative_k{k}", v, tol["hs_derivative"]) for k, v in sorted(rep.derivative_errors.items())]
    sweep = cfg["sweep"]
    table = []
    for N in sweep["N"]:
        for delta in sweep["delta"]:
            for qn in sweep["quad_n"]:
                r = hs_suite(phi, n=cfg["n"], matrices=1, N=N, delta=delta, quad_n=qn, derivatives=(), seed=ctx.cfg.seed)
                table.append((N, delta, qn, r.apply_error))
    with open(ctx.out / "hs_check.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "delta", "quad_n", "apply_error"])
        for N, delta, qn, e in table:
            w.writerow([N, repr(float(delta)), qn, repr(float(e))])
    sweep_rows = [{"N": N, "delta": dl, "quad_n": q, "apply_error": e} for N, dl, q, e in table]
    return StageResult(rows, {"hs": rep.to_dict(), "hs_sweep": sweep_rows})


def _ensure_ladder(ctx: Context) -> TraceLadder:
    if ctx.ladder is None:
        prob = ctx.cfg.problem
        ps = ctx.cfg.data["ladder"]["p"]
        ctx.ladder = build_ladder(prob, ps, ctx.cfg.ladder_settings())
        write_ladder_csv(ctx.ladder, ctx.out / "ladder.csv")
        with open(ctx.out / "logs" / "ladder_timings.tsv", "w") as fh:
            fh.write("p\tseconds\n")
            for e in ctx.ladder.entries:
                fh.write(f"{e.p!r}\t{e.seconds:.3f}\n")
        _write_tsv(
            ctx.out / "plotdata" / "ladder.tsv",
            ["p", "T_scaled"],
            zip(ctx.ladder.p, ctx.ladder.traces * ctx.ladder.p ** (-float(ctx.ladder.d))),
        )
    return ctx.ladder


def _ladder_payload(ladder: TraceLadder) -> list[dict]:
    out = []
    for e in ladder.to_dicts():
        e.pop("seconds", None)  # wall-clock time is logged, not reported
        out.append(e)
    return out


def _trace_rows(ctx: Context, ladder: TraceLadder) -> list[Row]:
    tol = ctx.cfg.tolerances
    bad = [e.p for e in ladder.entries if not e.certified]
    if not ctx.cfg.data["ladder"]["certify"]:
        rows = [_na("trace.resolution", "certificate disabled")]
    elif bad:
        rows = [Row("trace.resolution", float(len(bad)), 0.0, "<=", "fail", f"uncertified grids at p = {bad}")]
    else:
        rows = [Row("trace.resolution", 0.0, 0.0, "<=", "pass", "all grids certified")]
    dual = ladder.max_dual_rel_diff
    if dual is None:
        exact = all(e.method == "lattice" for e in ladder.entries)
        why = "exact lattice spectrum; no discretization to cross-check" if exact else "no entry within the dense cap"
    rows.append(_na("trace.dual_route", why) if dual is None else _check("trace.dual_route", dual, tol["dual_rel"]))
    return rows


def stage_trace(ctx: Context) -> StageResult:
    ladder = _ensure_ladder(ctx)
    return StageResult(_trace_rows(ctx, ladder), {"ladder": _ladder_payload(ladder)})


def stage_verify(ctx: Context) -> StageResult:
    tol = ctx.cfg.tolerances
    prob = ctx.cfg.problem
    ladder = _ensure_ladder(ctx)
    rows = _trace_rows(ctx, ladder)
    payload: dict = {"ladder": _ladder_payload(ladder)}

    if is_free_problem(prob):
        w = weyl_check(prob.phi, prob.domain, ctx.cfg.data["weyl"]["p"])
        rows.append(_check("verify.weyl", w.rel_error, tol["weyl_rel"]))
        payload["weyl"] = w.to_dict()
    else:
        rows.append(_na("verify.weyl", "problem is not free"))

    targets = analytic_targets(prob, ctx.cfg.data["coeffs"]["grid_n"])
    payload["targets"] = targets
    fit_names = ("verify.c0", "verify.c1_ratio", "verify.c2", "verify.c2_upper_shift", "verify.c0_subset_shift")
    if ctx.cfg.data["ladder"]["certify"] and not ladder.all_certified:
        rows += [_na(n, "no fit: under-resolved grid") for n in fit_names]
        payload["fit"] = None
    else:
        fit = expansion_fit(ladder, orders=ctx.cfg.data["fit"]["orders"], targets=targets, min_points=ctx.cfg.data["fit"]["min_points"])
        write_fit_csv(fit, ctx.out / "fit.csv")
        write_plot_tsv(fit, ctx.out / "plotdata" / "fit.tsv")
        payload["fit"] = fit.to_dict()
        c0 = fit.coefficient(0)
        rows.append(_check("verify.c0", fit.rel_errors.get(0), tol["c0_rel"]))
        if 1 in fit.orders:
            rows.append(_check("verify.c1_ratio", abs(fit.coefficient(1)) / abs(c0), tol["c1_rel"]))
        else:
            rows.append(_na("verify.c1_ratio", "order 1 not fitted"))
        f2 = targets[2]
        if 2 not in fit.orders:
            rows += [_na("verify.c2", "order 2 not fitted"), _na("verify.c2_upper_shift", "order 2 not fitted")]
        elif f2 == 0:
            rows += [
                _na("verify.c2", "analytic f2 vanishes; relative error undefined"),
                _na("verify.c2_upper_shift", "analytic f2 vanishes"),
            ]
        else:
            rows.append(_check("verify.c2", fit.rel_errors[2], tol["c2_rel"]))
            up = fit.upper_coefficient(2)
            if up is None:
                rows.append(_na("verify.c2_upper_shift", "ladder too short for an upper refit"))
            else:
                rows.append(_check("verify.c2_upper_shift", abs(up - fit.coefficient(2)) / abs(f2), tol["c2_rel"]))
        rows.append(_check("verify.c0_subset_shift", fit.subset_c0_shift, tol["subset_stderr"]))

    points = ctx.cfg.data["kernel"]["points"]
    if points:
        kc = kernel_order_check(ladder, prob, points, ctx.cfg.data["kernel"]["p_max"])
        rows.append(_check("verify.kernel_order", kc.min_order, tol["kernel_order"], ">="))
        rows.append(_check("verify.trace_kernel", kc.consistency, tol["trace_kernel"]))
        payload["kernel"] = kc.to_dict()
        with open(ctx.out / "kernel.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p"] + [f"residual_{j}" for j in range(len(points))])
            for p, res in zip(kc.p, kc.residuals):
                w.writerow([repr(float(p))] + [repr(float(v)) for v in res])
    else:
        rows += [_na("verify.kernel_order", "no kernel points configured"), _na("verify.trace_kernel", "no kernel points configured")]
    return StageResult(rows, payload)


STAGES: dict[str, list[tuple[str, Callable[[Context], StageResult]]]] = {
    "gauge-check": [("gauge", stage_gauge)],
    "expand-check": [("expand", stage_expand)],
    "coeffs": [("coeffs", stage_coeffs)],
    "hs-check": [("hs", stage_hs)],
    "trace": [("trace", stage_trace)],
    "verify": [("verify", stage_verify)],
    "full-report": [
        ("gauge", stage_gauge),
        ("expand", stage_expand),
        ("coeffs", stage_coeffs),
        ("hs", stage_hs),
        ("verify", stage_verify),
    ],
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _environment() -> dict:
    return {
        "semitrace": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def run(command: str, cfg: RunConfig) -> int:
    """Run ``command`` with a resolved configuration and write the archive.

    Returns
    -------
    int
        Exit status (see module docstring).
    """
    if command not in STAGES:
        raise ValueError(f"unknown subcommand {command!r}")
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot.json").write_bytes(cfg.snapshot)
    ctx = Context(cfg, out)
    handler = logging.FileHandler(out / "logs" / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)

    rows: list[Row] = []
    stages: dict = {}
    errors: list[dict] = []
    timings: dict = {}
    try:
        for name, fn in STAGES[command]:
            log.info("stage %s started", name)
            start = time.perf_counter()
            try:
                res = fn(ctx)
            except Exception as exc:  # a failing stage must not hide the others
                log.error("stage %s failed: %s", name, traceback.format_exc())
                errors.append({"stage": name, "error": f"{type(exc).__name__}: {exc}"})
                rows.append(Row(f"{name}.stage", None, None, "", "fail", f"stage error: {exc}"))
                continue
            finally:
                timings[name] = time.perf_counter() - start
            rows.extend(res.rows)
            stages[name] = res.payload
            log.info("stage %s finished in %.2f s", name, timings[name])
    finally:
        log.removeHandler(handler)
        handler.close()

    passed = not errors and all(r.status != "fail" for r in rows)
    report = {
        "command": command,
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "environment": _environment(),
        "rows": [r.to_dict() for r in rows],
        "stages": stages,
        "errors": errors,
        "passed": passed,
    }
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    (out / "logs" / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    for r in rows:
        value = "-" if r.value is None else f"{r.value:.3e}"
        bound = "" if r.tolerance is None else f" (need {r.comparison} {r.tolerance:g})"
        print(f"{r.status.upper():4s}  {r.name:28s} {value}{bound}  {r.detail}".rstrip())
    if errors:
        return EXIT_INTERNAL
    return EXIT_PASS if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semitrace",
        description="Semiclassical trace expansion toolkit for magnetic Schrödinger operators on tori.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "gauge-check": "transverse-gauge identities and gauge invariance of the spectrum",
        "expand-check": "remainder orders of the rescaled operator expansion",
        "coeffs": "analytic pointwise and integrated expansion coefficients",
        "hs-check": "resolvent-integral functional calculus against eigendecomposition",
        "trace": "certified trace ladder",
        "verify": "trace ladder, coefficient fit and kernel checks",
        "full-report": "every check, aggregated into one report",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", default=os.environ.get(ENV_PREFIX + "CONFIG"), help="JSON configuration file")
        p.add_argument("--out", default=os.environ.get(ENV_PREFIX + "OUT"), help="output directory")
        p.add_argument("--threads", type=int, default=_env_int("THREADS"), help="worker threads")
        p.add_argument("--seed", type=int, default=_env_int("SEED"), help="random seed")
    return parser


def _env_int(name: str) -> int | None:
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def main(argv: list[str] | None = None) -> int:
    """Entry point of the ``semitrace`` command."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    if not args.config:
        parser.print_usage(sys.stderr)
        print(f"semitrace: error: --config is required (or set {ENV_PREFIX}CONFIG)", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config)
        cfg = cfg.with_overrides(output=args.out, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"semitrace: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args.command, cfg)
    except Exception:  # pragma: no cover - last-resort guard
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
