"""Named invariant checks run by ``mlpbsde validate``.

Checks look up grid and estimator functions through their modules at call
time, so a patched implementation is what gets checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import cost, mlp, oracle, pathgrid, randomness
from .problem import BsdeProblem, DriverSpec, TerminalSpec, builtin_problem


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _grid_sets(M: int, T: float) -> list[float]:
    return [pathgrid.grid_time(k, M, T) for k in range(M + 1)]


def check_grid_sandwich(mesh_points: int = 2001, M_max: int = 16, T: float = 1.0) -> CheckResult:
    """Floor and ceiling agree with their set definitions and bracket ``t``."""
    bad = []
    for M in range(1, M_max + 1):
        nodes = _grid_sets(M, T)
        ts = sorted(set(np.linspace(0.0, T, mesh_points).tolist()) | set(nodes))
        for t in ts:
            lo_ref = max(s for s in nodes if s <= t and s != T)
            hi_ref = T if t == T else min(s for s in nodes if s > t)
            lo = pathgrid.floor_grid(t, M, T)
            hi = pathgrid.ceil_grid(t, M, T)
            if lo != lo_ref or hi != hi_ref or not lo <= t or not (t < hi or t == T):
                bad.append((M, t, lo, hi, lo_ref, hi_ref))
    if bad:
        M, t, lo, hi, lo_ref, hi_ref = bad[0]
        return CheckResult(
            "grid_sandwich",
            False,
            f"{len(bad)} mismatches; first M={M} t={t!r}: got ({lo!r}, {hi!r}), expected ({lo_ref!r}, {hi_ref!r})",
        )
    return CheckResult("grid_sandwich", True, f"M <= {M_max}, {mesh_points}-point mesh plus nodes")


def check_grid_nesting(M_max: int = 6, levels: int = 4, T: float = 0.1) -> CheckResult:
    for M in range(1, M_max + 1):
        for l in range(levels):
            coarse = pathgrid.GridSpec(M, l, T).times()
            fine = pathgrid.GridSpec(M, l + 1, T).times()
            if not np.array_equal(fine[::M], coarse):
                return CheckResult("grid_nesting", False, f"M={M}, level {l} nodes differ from refinement")
    return CheckResult("grid_nesting", True, f"M <= {M_max}, levels < {levels + 1}, T={T}")


def check_interpolation(cases: int = 100, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(cases):
        alpha = float(rng.uniform(0.05, 2.0))
        case = pathgrid.random_interp_case(rng, alpha, samples=401)
        if not pathgrid.check_interp_error_bound(case):
            return CheckResult("interp_error_bound", False, f"case {k} (alpha={alpha:.4g}) violates the bound")
        if alpha <= 1.0 and not pathgrid.check_interp_holder(case):
            return CheckResult("interp_error_bound", False, f"case {k} (alpha={alpha:.4g}) raises the seminorm")
    return CheckResult("interp_error_bound", True, f"{cases} random cases")


def _linear_problem(d: int) -> BsdeProblem:
    c = np.linspace(1.0, 2.0, d)

    def g(x):
        out = np.zeros(x.shape[0])
        for j in range(d):
            out = out + c[j] * x[:, j]
        return out

    return BsdeProblem(
        horizon_T=1.0,
        dim_d=d,
        driver=DriverSpec(lambda t, x, v: np.zeros(np.shape(v)), lipschitz_L=0.0, affine_params=(0.0, 0.0)),
        terminal=TerminalSpec(g),
        family="linear_probe",
    )


def check_mlp_structure(seed: int = 3) -> CheckResult:
    p = builtin_problem("cos_affine", 2)
    x = np.array([0.4, -0.7])
    if mlp.mlp_evaluate(p, seed, (), mlp.MlpConfig(0, 3), 0.2, x) != 0.0:
        return CheckResult("mlp_structure", False, "U_0 is not identically zero")
    for n in (1, 2, 3):
        v = mlp.mlp_evaluate(p, seed, (), mlp.MlpConfig(n, 2), p.horizon_T, x)
        if abs(v - p.g(x[None, :])[0]) > 1e-12:
            return CheckResult("mlp_structure", False, f"U_{n}(T, x) differs from g(x) by {abs(v - p.g(x[None, :])[0]):.3g}")
    lin = _linear_problem(3)
    cfg = mlp.MlpConfig(3, 2)
    base = mlp.mlp_evaluate(lin, seed, (), cfg, 0.3, np.zeros(3))
    for y in ([1.0, 0.0, 0.0], [0.5, -2.0, 3.0]):
        y = np.array(y)
        diff = mlp.mlp_evaluate(lin, seed, (), cfg, 0.3, y) - base - lin.g(y[None, :])[0]
        if abs(diff) > 1e-12:
            return CheckResult("mlp_structure", False, f"linearity probe off by {abs(diff):.3g}")
    return CheckResult("mlp_structure", True, "zero level, terminal value, linearity probe")


def check_path_terminal(seeds: int = 3) -> CheckResult:
    worst = 0.0
    for d in (1, 5):
        p = builtin_problem("cos_affine", d)
        for n in (1, 2, 3):
            for M in (1, 2, 3):
                for s in randomness.spawn_seeds(d * 100 + n * 10 + M, seeds):
                    est = pathgrid.path_estimate(p, s, n, M)
                    worst = max(worst, abs(est.fine_nodes[-1] - p.g(est.w_path[-1:])[0]))
    return CheckResult("path_terminal", worst <= 1e-12, f"max |Y_T - g(W_T)| = {worst:.3g}")


def check_cost_chain(n_max: int = 3, M_max: int = 3, dims=(1, 5)) -> CheckResult:
    for d in dims:
        p = builtin_problem("cos_zero", d)
        alpha = d + 3
        for n in range(1, n_max + 1):
            for M in range(1, M_max + 1):
                counters = mlp.CostCounters()
                mlp.mlp_evaluate(p, 1, (), mlp.MlpConfig(n, M), 0.0, np.zeros(d), counters)
                if counters != mlp.counter_recursion(n, M, d):
                    return CheckResult("cost_chain", False, f"n={n} M={M} d={d}: counters differ from recursion")
                chain = [counters.total, cost.cost_mlp_bound(n, M, alpha), cost.cost_mlp_closed(n, M, alpha)]
                path = pathgrid.path_estimate(p, 1, n, M).counters.total
                pchain = [path, cost.cost_path_bound(n, M, alpha), cost.cost_path_closed(n, M, alpha)]
                if chain != sorted(chain) or pchain != sorted(pchain):
                    return CheckResult("cost_chain", False, f"n={n} M={M} d={d}: chain {chain} / {pchain} not ordered")
    return CheckResult("cost_chain", True, f"n, M <= {max(n_max, M_max)}, d in {list(dims)}")


def check_lipschitz_gap(samples: int = 2000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    quads = rng.uniform(-10.0, 10.0, size=(samples, 4))
    for q in quads:
        _, _, holds = oracle.lipschitz_gap_check(math.sin, 1.0, 1.0, *q)
        if not holds:
            return CheckResult("lipschitz_gap", False, f"violated at {q.tolist()}")
    lhs, rhs, _ = oracle.lipschitz_gap_check(lambda v: 2.5 * v, 2.5, 0.0, 1.0, -3.0, 0.5, 4.0)
    if abs(lhs - rhs) > 1e-12:
        return CheckResult("lipschitz_gap", False, "affine function does not attain equality")
    return CheckResult("lipschitz_gap", True, f"{samples} random quadruples, affine equality")


def check_rng_determinism() -> CheckResult:
    a = randomness.node_draws(9, (1, 2, -3), 5)
    b = randomness.node_draws(9, (1, 2, -3), 5)
    c = randomness.node_draws(9, (1, 2, 3), 5)
    ok = a.r == b.r and np.array_equal(a.z, b.z) and not np.array_equal(a.z, c.z) and 0.0 <= a.r < 1.0
    return CheckResult("rng_determinism", bool(ok), "repeat draws equal, distinct indices differ")


def check_oracle_terminal() -> CheckResult:
    x = np.array([[0.3], [-1.2], [2.0]])
    p = builtin_problem("cos_affine", 1)
    ref = oracle.affine_closed_form(p)
    err = float(np.max(np.abs(ref.evaluate(np.full(3, p.horizon_T), x) - p.g(x))))
    return CheckResult("oracle_terminal", err <= ref.accuracy, f"max |u(T, x) - g(x)| = {err:.3g}")


CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_grid_sandwich,
    check_grid_nesting,
    check_interpolation,
    check_mlp_structure,
    check_path_terminal,
    check_cost_chain,
    check_lipschitz_gap,
    check_rng_determinism,
    check_oracle_terminal,
)


def run_all() -> list[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except Exception as exc:  # a crashing check is a failed check
            results.append(CheckResult(check.__name__.removeprefix("check_"), False, f"{type(exc).__name__}: {exc}"))
    return results


def report(results: list[CheckResult]) -> str:
    failed = [r.name for r in results if not r.passed]
    lines = [r.line() for r in results]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        lines.append("failed: " + ", ".join(failed))
    return "\n".join(lines) + "\n"
