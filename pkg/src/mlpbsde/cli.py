"""Command-line experiment runner.

    mlpbsde solve|converge|cost|dimsweep|validate --config FILE [--out DIR]
            [--threads N] [--budget OPS] [--timing]

The config is an INI file with ``[problem]``, ``[method]``, ``[study]`` and
``[output]`` sections (see README.md). Every command writes a CSV table and a
JSON sidecar. Outputs depend only on the config, never on ``--threads``;
wall-clock columns are added only with ``--timing``.

Exit codes: 0 ok, 1 validation failure, 2 config error, 3 guard or budget refusal.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, validation
from .cost import (
    bound_report,
    cost_mlp_bound,
    cost_mlp_closed,
    cost_path_bound,
    cost_path_closed,
    err_bound_path,
    z_fourth_moment,
)
from .mlp import CostCounters, MlpConfig, ResourceGuardError, counter_recursion, mlp_evaluate
from .oracle import NoOracleError, reference_for
from .pathgrid import path_estimate
from .problem import BsdeProblem, ProblemError, problem_from_config
from .randomness import spawn_seeds

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3
DEFAULT_BUDGET = 10**12
BOOTSTRAP_RESAMPLES = 1000
GRID_NOTE = "errors are maxima over the fine-grid nodes k T / M^n"


class ConfigError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    problem_section: dict
    n: int = 2
    M: int = 2
    seed: int = 0
    replications: int = 1
    n_list: tuple = (1, 2, 3)
    d_list: tuple = (1, 2, 5)
    epsilon: Optional[float] = None
    n_max: int = 3
    M_max: int = 3
    out_dir: str = "out"
    formats: tuple = ("csv", "json")

    def problem(self, d: Optional[int] = None) -> BsdeProblem:
        section = dict(self.problem_section)
        if d is not None:
            section["d"] = str(d)
        return problem_from_config(section)

    def echo(self) -> dict:
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Parse an INI config; any problem raises :class:`ConfigError`."""
    if path is None:
        raise ConfigError("--config is required for this command")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as T and V0 are case sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not parser.has_section("problem"):
        raise ConfigError("config needs a [problem] section")
    method = parser["method"] if parser.has_section("method") else {}
    study = parser["study"] if parser.has_section("study") else {}
    output = parser["output"] if parser.has_section("output") else {}
    try:
        cfg = ExperimentConfig(
            problem_section=dict(parser["problem"]),
            n=int(method.get("n", 2)),
            M=int(method.get("M", 2)),
            seed=int(method.get("seed", 0)),
            replications=int(method.get("replications", 1)),
            n_list=tuple(_int_list(study.get("n_list", "1,2,3"))),
            d_list=tuple(_int_list(study.get("d_list", "1,2,5"))),
            epsilon=float(study["epsilon"]) if "epsilon" in study else None,
            n_max=int(study.get("n_max", 3)),
            M_max=int(study.get("M_max", 3)),
            out_dir=output.get("directory", "out"),
            formats=tuple(s.strip() for s in output.get("formats", "csv,json").split(",") if s.strip()),
        )
        cfg.problem()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    if cfg.replications < 1:
        raise ConfigError(f"replications must be >= 1, got {cfg.replications}")
    if cfg.n < 1 or cfg.M < 1:
        raise ConfigError(f"need n >= 1 and M >= 1, got n={cfg.n}, M={cfg.M}")
    if not cfg.n_list or not cfg.d_list:
        raise ConfigError("n_list and d_list must be non-empty")
    if any(v < 1 for v in cfg.n_list + cfg.d_list):
        raise ConfigError("n_list and d_list entries must be >= 1")
    unknown = set(cfg.formats) - {"csv", "json"}
    if unknown:
        raise ConfigError(f"unknown output formats {sorted(unknown)}")
    return cfg


def _check_budget(predicted: int, budget: int) -> None:
    if predicted > budget:
        raise BudgetError(f"predicted cost {predicted} exceeds the budget {budget}")


def _path_prediction(n: int, M: int, d: int, reps: int) -> int:
    MlpConfig(n, M)
    return reps * cost_path_bound(n, M, d + 3)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _csv_text(header: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def _write_outputs(out: Path, stem: str, cfg: ExperimentConfig, csv_text: str, sidecar: dict) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in cfg.formats:
        path = out / f"{stem}.csv"
        path.write_text(csv_text, encoding="utf-8")
        written.append(path)
    if "json" in cfg.formats:
        doc = {"config": cfg.echo(), "version": f"v{__version__}", **sidecar}
        path = out / f"{stem}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written


def _replicate(p: BsdeProblem, reference, n: int, M: int, seeds: Sequence[int], threads: int):
    """Per-seed sup-grid errors and counters, in seed order."""

    def one(seed):
        est = path_estimate(p, seed, n, M)
        exact = reference.evaluate(est.times(), est.w_path)
        return float(np.max(np.abs(est.fine_nodes - exact))), est.counters

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    errors = np.array([r[0] for r in results])
    return errors, results[0][1]


def _rms_with_stderr(errors: np.ndarray, seed: int) -> tuple[float, float]:
    rms = float(np.sqrt(np.mean(errors**2)))
    if errors.shape[0] < 2:
        return rms, float("nan")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, errors.shape[0], size=(BOOTSTRAP_RESAMPLES, errors.shape[0]))
    boot = np.sqrt(np.mean(errors[idx] ** 2, axis=1))
    return rms, float(np.std(boot, ddof=1))


def cmd_solve(cfg: ExperimentConfig, out: Path, threads: int, budget: int, timing: bool) -> int:
    p = cfg.problem()
    _check_budget(_path_prediction(cfg.n, cfg.M, p.dim_d, 1), budget)
    start = time.perf_counter()
    est = path_estimate(p, cfg.seed, cfg.n, cfg.M)
    sidecar = {
        "counters": est.counters.to_dict(),
        "bounds": bound_report(p, cfg.n, cfg.M).to_dict(),
        "terminal_gap": float(abs(est.fine_nodes[-1] - p.g(est.w_path[-1:])[0])),
    }
    if timing:
        sidecar["wall_time_s"] = time.perf_counter() - start
    _write_outputs(out, "path", cfg, est.to_csv(), sidecar)
    return EXIT_OK


def _convergence_rows(cfg, p, reference, n_list, threads, timing):
    seeds = spawn_seeds(cfg.seed, cfg.replications)
    rows = []
    for n in n_list:
        start = time.perf_counter()
        errors, counters = _replicate(p, reference, n, n, seeds, threads)
        rms, stderr = _rms_with_stderr(errors, cfg.seed + n)
        row = {
            "n": n,
            "M": n,
            "R": cfg.replications,
            "sup_grid_rmse": rms,
            "rmse_stderr": stderr,
            "theory_bound": err_bound_path(
                n, n, p.driver.lipschitz_L, p.horizon_T, p.rho, p.lyapunov_V0, z_fourth_moment(p.dim_d)
            ),
            "measured_cost": counters.total,
            "cost_bound": cost_path_bound(n, n, p.dim_d + 3),
        }
        if timing:
            row["wall_time_s"] = time.perf_counter() - start
        rows.append(row)
    return rows


def _log2_slope(xs, ys) -> Optional[float]:
    if len(xs) < 2 or any(y <= 0 for y in ys):
        return None
    return float(np.polyfit(np.asarray(xs, float), np.log2(np.asarray(ys, float)), 1)[0])


def cmd_converge(cfg: ExperimentConfig, out: Path, threads: int, budget: int, timing: bool) -> int:
    p = cfg.problem()
    _check_budget(sum(_path_prediction(n, n, p.dim_d, cfg.replications) for n in cfg.n_list), budget)
    reference = reference_for(p)
    rows = _convergence_rows(cfg, p, reference, cfg.n_list, threads, timing)
    header = ["n", "M", "R", "sup_grid_rmse", "rmse_stderr", "theory_bound", "measured_cost", "cost_bound"]
    if timing:
        header.append("wall_time_s")
    sidecar = {
        "note": GRID_NOTE,
        "reference": {"kind": reference.kind, "accuracy": reference.accuracy},
        "log2_fit_slope": _log2_slope([r["n"] for r in rows], [r["sup_grid_rmse"] for r in rows]),
        "rows": rows,
    }
    if cfg.epsilon is not None:
        hits = [r["n"] for r in rows if r["sup_grid_rmse"] < cfg.epsilon]
        sidecar["selected_n"] = min(hits) if hits else None
    _write_outputs(out, "convergence", cfg, _csv_text(header, rows), sidecar)
    return EXIT_OK


def cost_table_rows(n_max: int, M_max: int, d_list: Sequence[int]) -> list[dict]:
    """Measured, recursion and closed-form costs for ``n, M <= (n_max, M_max)``."""
    from .problem import builtin_problem

    rows = []
    for d in d_list:
        p = builtin_problem("cos_zero", d)
        alpha = d + 3
        for n in range(1, n_max + 1):
            for M in range(1, M_max + 1):
                MlpConfig(n, M)
                counters = CostCounters()
                mlp_evaluate(p, 0, (), MlpConfig(n, M), 0.0, np.zeros(d), counters)
                measured_path = path_estimate(p, 0, n, M).counters.total
                row = {
                    "n": n,
                    "M": M,
                    "d": d,
                    "alpha": alpha,
                    "measured_mlp": counters.total,
                    "counter_recursion": counter_recursion(n, M, d).total,
                    "recursion_mlp": cost_mlp_bound(n, M, alpha),
                    "closed_mlp": cost_mlp_closed(n, M, alpha),
                    "measured_path": measured_path,
                    "recursion_path": cost_path_bound(n, M, alpha),
                    "closed_path": cost_path_closed(n, M, alpha),
                }
                row["chain_ok"] = (
                    row["measured_mlp"] <= row["recursion_mlp"] <= row["closed_mlp"]
                    and row["measured_path"] <= row["recursion_path"] <= row["closed_path"]
                )
                rows.append(row)
    return rows


def affinity_in_d(rows: Sequence[dict], key: str) -> bool:
    """Whether ``row[key]`` is exactly affine in ``d`` for every ``(n, M)``."""
    by_nm: dict = {}
    for r in rows:
        by_nm.setdefault((r["n"], r["M"]), []).append((r["d"], r[key]))
    for pts in by_nm.values():
        pts.sort()
        if len(pts) < 3:
            continue
        (d0, c0), (d1, c1) = pts[0], pts[1]
        for d, c in pts[2:]:
            # integer cross-multiplication keeps the test exact
            if (c - c0) * (d1 - d0) != (c1 - c0) * (d - d0):
                return False
    return True


def cmd_cost(cfg: ExperimentConfig, out: Path, threads: int, budget: int, timing: bool) -> int:
    predicted = sum(
        _path_prediction(n, M, d, 1) for d in cfg.d_list for n in range(1, cfg.n_max + 1) for M in range(1, cfg.M_max + 1)
    )
    _check_budget(predicted, budget)
    start = time.perf_counter()
    rows = cost_table_rows(cfg.n_max, cfg.M_max, cfg.d_list)
    header = list(rows[0].keys())
    chain = all(r["chain_ok"] for r in rows)
    sidecar = {
        "chain_ok": chain,
        "affine_in_d_mlp": affinity_in_d(rows, "measured_mlp"),
        "affine_in_d_path": affinity_in_d(rows, "measured_path"),
        "rows": rows,
    }
    if timing:
        sidecar["wall_time_s"] = time.perf_counter() - start
    _write_outputs(out, "cost_table", cfg, _csv_text(header, rows), sidecar)
    ok = chain and sidecar["affine_in_d_mlp"] and sidecar["affine_in_d_path"]
    if not ok:
        print("cost table: invariant chain or d-affinity violated", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_dimsweep(cfg: ExperimentConfig, out: Path, threads: int, budget: int, timing: bool) -> int:
    n = M = cfg.n
    _check_budget(sum(_path_prediction(n, M, d, cfg.replications) for d in cfg.d_list), budget)
    seeds = spawn_seeds(cfg.seed, cfg.replications)
    rows = []
    for d in cfg.d_list:
        p = cfg.problem(d)
        start = time.perf_counter()
        errors, counters = _replicate(p, reference_for(p), n, M, seeds, threads)
        rms, stderr = _rms_with_stderr(errors, cfg.seed + d)
        row = {"d": d, "n": n, "M": M, "R": cfg.replications, "measured_cost": counters.total,
               "sup_grid_rmse": rms, "rmse_stderr": stderr}
        if timing:
            row["wall_time_s"] = time.perf_counter() - start
        rows.append(row)
    ds = [r["d"] for r in rows]
    costs = [r["measured_cost"] for r in rows]
    big = [(d, c) for d, c in zip(ds, costs) if d >= 5]
    sidecar = {
        "note": GRID_NOTE,
        "cost_affine_in_d": affinity_in_d([{"n": n, "M": M, "d": d, "c": c} for d, c in zip(ds, costs)], "c"),
        "loglog_slope_all": _loglog_slope(ds, costs),
        "loglog_slope_d_ge_5": _loglog_slope([d for d, _ in big], [c for _, c in big]),
        "rows": rows,
    }
    _write_outputs(out, "dimsweep", cfg, _csv_text(list(rows[0].keys()), rows), sidecar)
    return EXIT_OK


def _loglog_slope(xs, ys) -> Optional[float]:
    if len(set(xs)) < 2:
        return None
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def cmd_validate(out: Optional[Path]) -> int:
    results = validation.run_all()
    text = validation.report(results)
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "validate.txt").write_text(text, encoding="utf-8")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {"solve": cmd_solve, "converge": cmd_converge, "cost": cmd_cost, "dimsweep": cmd_dimsweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlpbsde", description="MLP path solver experiments")
    ap.add_argument("command", choices=[*COMMANDS, "validate"])
    ap.add_argument("--config", help="INI experiment config")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    ap.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="refuse runs predicted to cost more")
    ap.add_argument("--timing", action="store_true", help="add wall-clock times to the outputs")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        if args.out:
            out = Path(args.out)
        elif args.config:
            try:
                out = Path(load_config(args.config).out_dir)
            except (ConfigError, ProblemError) as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
        else:
            out = None
        return cmd_validate(out)
    try:
        cfg = load_config(args.config)
    except (ConfigError, ProblemError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.out_dir)
    try:
        return COMMANDS[args.command](cfg, out, args.threads, args.budget, args.timing)
    except (BudgetError, ResourceGuardError, OverflowError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except NoOracleError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
