"""Cost recursions, closed-form cost bounds, error bounds and level selection."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .problem import BsdeProblem

INT64_MAX = 2**63 - 1


def _check_range(n: int, M: int, alpha: int) -> None:
    if n < 0 or M < 1 or alpha < 1:
        raise ValueError(f"need n >= 0, M >= 1, alpha >= 1; got n={n}, M={M}, alpha={alpha}")


def cost_mlp_bound(n: int, M: int, alpha: int) -> int:
    """The MLP cost recursion evaluated with equality.

    ``C_n = alpha M^n [n >= 1] + sum_{l<n} M^(n-l) (1 + alpha + C_l + C_(l-1) [l >= 1])``.
    """
    _check_range(n, M, alpha)
    if alpha * (5 * M) ** n > INT64_MAX:
        raise OverflowError(f"alpha (5M)^n exceeds 64-bit range for n={n}, M={M}")
    c = [0] * (n + 1)
    for k in range(1, n + 1):
        c[k] = alpha * M**k + sum(
            M ** (k - l) * (1 + alpha + c[l] + (c[l - 1] if l >= 1 else 0)) for l in range(k)
        )
    return c[n]


def cost_mlp_closed(n: int, M: int, alpha: int) -> int:
    return alpha * (5 * M) ** n


def cost_path_bound(n: int, M: int, alpha: int) -> int:
    """``alpha (M^n + 1) + sum_{l<n} (M^(l+1) + 1) C_{n-l}`` with equality."""
    _check_range(n, M, alpha)
    if cost_path_closed(n, M, alpha) > INT64_MAX:
        raise OverflowError(f"path cost bound exceeds 64-bit range for n={n}, M={M}")
    return alpha * (M**n + 1) + sum((M ** (l + 1) + 1) * cost_mlp_bound(n - l, M, alpha) for l in range(n))


def cost_path_closed(n: int, M: int, alpha: int) -> int:
    return (n + 2) * (5 * M) ** (n + 1) * alpha


def z_fourth_moment(d: int) -> float:
    """``E |Z|^4`` for a standard normal vector in ``R^d`` (Euclidean norm)."""
    return float(d * d + 2 * d)


def _exp(log_value: float) -> float:
    return math.exp(log_value) if log_value < 709.0 else math.inf


def log_err_bound_mlp(N: int, M: int, L: float, T: float) -> float:
    """Natural log of ``e^(M/2) M^(-N/2) (50 e^(2LT))^(N+1)``."""
    if N < 0 or M < 1:
        raise ValueError(f"need N >= 0 and M >= 1, got N={N}, M={M}")
    return M / 2.0 - N / 2.0 * math.log(M) + (N + 1) * (math.log(50.0) + 2.0 * L * T)


def err_bound_mlp(N: int, M: int, L: float, T: float, V_beta: float = 1.0) -> float:
    """Pointwise root-mean-square error bound for ``U_{N,M}``, scaled by ``V^beta``.

    Returns ``inf`` when the value exceeds the double range.
    """
    return _exp(log_err_bound_mlp(N, M, L, T)) * V_beta


def log_err_bound_path(n: int, M: int, L: float, T: float, rho: float) -> float:
    """Natural log of the path bound without its moment factor."""
    if n < 1 or M < 1:
        raise ValueError(f"need n >= 1 and M >= 1, got n={n}, M={M}")
    return (
        math.log(8.0 * n)
        + M / 2.0
        + 4.0 * n * L * T
        + rho * T / 2.0
        - n / 2.0 * math.log(M)
        + 2 * n * math.log(50.0)
    )


def err_bound_path(n: int, M: int, L: float, T: float, rho: float, V0: float, z_moment: float) -> float:
    """Root-mean-square error bound for the multi-grid path estimator."""
    return _exp(log_err_bound_path(n, M, L, T, rho)) * abs(V0 * max(z_moment, 1.0)) ** 0.25


@dataclass
class BoundReport:
    n: int
    M: int
    alpha: int
    cost_mlp_exact: int
    cost_mlp_closed: int
    cost_path_exact: int
    cost_path_closed: int
    err_mlp: float
    err_path: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def bound_report(p: BsdeProblem, n: int, M: int, alpha: Optional[int] = None) -> BoundReport:
    """Bounds for ``U_{n,M}`` and the path estimator; ``alpha`` defaults to ``d + 3``."""
    alpha = p.dim_d + 3 if alpha is None else alpha
    L, T = p.driver.lipschitz_L, p.horizon_T
    V_beta = (math.exp(p.rho * T) * p.lyapunov_V0) ** p.beta
    return BoundReport(
        n=n,
        M=M,
        alpha=alpha,
        cost_mlp_exact=cost_mlp_bound(n, M, alpha),
        cost_mlp_closed=cost_mlp_closed(n, M, alpha),
        cost_path_exact=cost_path_bound(n, M, alpha),
        cost_path_closed=cost_path_closed(n, M, alpha),
        err_mlp=err_bound_mlp(n, M, L, T, V_beta),
        err_path=err_bound_path(n, M, L, T, p.rho, p.lyapunov_V0, z_fourth_moment(p.dim_d)),
    )


class SelectionError(RuntimeError):
    """No level up to the guard reached the requested accuracy."""


@dataclass(frozen=True)
class PilotConfig:
    replications: int = 20
    seed: int = 0
    n_max: int = 6
    threads: int = 1


def sup_grid_errors(p: BsdeProblem, reference, n: int, M: int, seeds, threads: int = 1) -> np.ndarray:
    """Per seed, ``max_k |Y_k - u(t_k, W_{t_k})|`` over the fine grid."""
    from .pathgrid import path_estimate

    def one(seed):
        est = path_estimate(p, seed, n, M)
        exact = reference.evaluate(est.times(), est.w_path)
        return float(np.max(np.abs(est.fine_nodes - exact)))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, seeds)))
    return np.array([one(s) for s in seeds])


def select_n(p: BsdeProblem, epsilon: float, pilot: PilotConfig = PilotConfig()) -> tuple[int, list[float]]:
    """Smallest ``n`` (with ``M = n``) whose pilot sup-grid RMS error is below ``epsilon``.

    Returns ``(n, errors)`` where ``errors[k]`` is the pilot error at ``n = k + 1``.
    Raises :class:`~mlpbsde.oracle.NoOracleError` without a reference solution.
    """
    from .oracle import reference_for
    from .randomness import spawn_seeds

    if not 0.0 < epsilon:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    reference = reference_for(p)
    seeds = spawn_seeds(pilot.seed, pilot.replications)
    errors: list[float] = []
    for n in range(1, pilot.n_max + 1):
        errs = sup_grid_errors(p, reference, n, n, seeds, pilot.threads)
        errors.append(float(np.sqrt(np.mean(errs**2))))
        if errors[-1] < epsilon:
            return n, errors
    raise SelectionError(
        f"pilot error {errors[-1]:.3g} at n = {pilot.n_max} still above epsilon = {epsilon}"
    )
