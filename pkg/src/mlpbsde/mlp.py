"""Full-history recursive multilevel Picard (MLP) approximations.

The recursion is evaluated for a whole batch of points ``(t_j, x_j)`` at once.
Each random draw is derived once per node of the recursion tree and applied
to every point, so all points of one call share the realization indexed by
``theta``. The scalar entry point is the batch code with one point, which makes
scalar and batched values bit-identical.

Reduction order (relied on by the reproducibility tests): the terminal samples
are summed for ``i = 1..M^n`` and divided by ``M^n``; then for ``l = 0..n-1`` the
inner summands are summed for ``i = 1..M^(n-l)``, the sum is multiplied by
``(T - t) / M^(n-l)`` and added to the running value.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .problem import BsdeProblem
from .randomness import node_draws, spawn_seeds

MAX_LEVEL = 8
MAX_WORK = 10**9
KAHAN_THRESHOLD = 10**4


class ResourceGuardError(RuntimeError):
    """A configuration would exceed the built-in work limits."""


@dataclass(frozen=True)
class MlpConfig:
    n: int
    M: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"level n must be >= 0, got {self.n}")
        if self.M < 1:
            raise ValueError(f"sample base M must be >= 1, got {self.M}")
        if self.n > MAX_LEVEL:
            raise ResourceGuardError(f"n = {self.n} exceeds the level guard {MAX_LEVEL}")
        if (5 * self.M) ** self.n > MAX_WORK:
            raise ResourceGuardError(f"(5M)^n = {(5 * self.M) ** self.n} exceeds {MAX_WORK}")


@dataclass
class CostCounters:
    """Tallies of scalar random realizations, f-evaluations and g-evaluations."""

    rv_scalars: int = 0
    f_evals: int = 0
    g_evals: int = 0

    @property
    def total(self) -> int:
        return self.rv_scalars + self.f_evals + self.g_evals

    def add(self, other: "CostCounters") -> "CostCounters":
        self.rv_scalars += other.rv_scalars
        self.f_evals += other.f_evals
        self.g_evals += other.g_evals
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_times(t: np.ndarray, T: float) -> None:
    if np.any(t < 0.0) or np.any(t > T) or np.any(np.isnan(t)):
        raise ValueError(f"evaluation times must lie in [0, {T}]")


def _mlp_batch(p, seed, theta, n, M, t, x, counters):
    size = t.shape[0]
    if n == 0:
        return np.zeros(size)
    d = p.dim_d
    dt = p.horizon_T - t
    g = p.terminal.evaluate
    f = p.driver.evaluate

    leaves = M**n
    sd = np.sqrt(dt)[:, None]
    acc = np.zeros(size)
    if leaves > KAHAN_THRESHOLD:
        comp = np.zeros(size)
        for i in range(1, leaves + 1):
            y = g(x + sd * node_draws(seed, theta + (0, -i), d).z) - comp
            s = acc + y
            comp = (s - acc) - y
            acc = s
    else:
        for i in range(1, leaves + 1):
            acc = acc + g(x + sd * node_draws(seed, theta + (0, -i), d).z)
    counters.rv_scalars += size * leaves * d
    counters.g_evals += size * leaves
    value = acc / leaves

    for l in range(n):
        reps = M ** (n - l)
        total = np.zeros(size)
        for i in range(1, reps + 1):
            fine_theta = theta + (l, i)
            draw = node_draws(seed, fine_theta, d)
            tau = t + dt * draw.r
            xi = x + np.sqrt(dt * draw.r)[:, None] * draw.z
            term = f(tau, xi, _mlp_batch(p, seed, fine_theta, l, M, tau, xi, counters))
            if l >= 1:
                coarse = _mlp_batch(p, seed, theta + (-l, i), l - 1, M, tau, xi, counters)
                term = term - f(tau, xi, coarse)
            total = total + term
        counters.rv_scalars += size * reps * (1 + d)
        counters.f_evals += size * reps * (2 if l >= 1 else 1)
        value = value + (dt / reps) * total
    return value


def _as_batch(p: BsdeProblem, t, x):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == p.dim_d else x.reshape(-1, 1)
    if x.shape != (t.shape[0], p.dim_d):
        raise ValueError(f"expected x of shape ({t.shape[0]}, {p.dim_d}), got {x.shape}")
    _check_times(t, p.horizon_T)
    return t, x


def mlp_evaluate_batch(
    p: BsdeProblem,
    seed: int,
    theta: Sequence[int],
    cfg: MlpConfig,
    t,
    x,
    counters: Optional[CostCounters] = None,
) -> np.ndarray:
    """``U^theta_{n,M}`` at each point ``(t[j], x[j])`` of a batch.

    Counters are charged per point, exactly as if each point had been
    evaluated separately.
    """
    t, x = _as_batch(p, t, x)
    if counters is None:
        counters = CostCounters()
    return _mlp_batch(p, int(seed), tuple(int(e) for e in theta), cfg.n, cfg.M, t, x, counters)


def mlp_evaluate(
    p: BsdeProblem,
    seed: int,
    theta: Sequence[int],
    cfg: MlpConfig,
    t: float,
    x,
    counters: Optional[CostCounters] = None,
) -> float:
    """The MLP approximation ``U^theta_{n,M}(t, x)`` at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, p.dim_d)
    return float(mlp_evaluate_batch(p, seed, theta, cfg, [float(t)], x, counters)[0])


class MlpField:
    """One realization of the random field ``U^theta_{n,M}``.

    Calls at different points reuse the draws indexed under ``theta``.
    """

    def __init__(self, p: BsdeProblem, seed: int, theta: Sequence[int], cfg: MlpConfig):
        self.problem = p
        self.seed = int(seed)
        self.theta = tuple(int(e) for e in theta)
        self.cfg = cfg

    def __call__(self, t: float, x, counters: Optional[CostCounters] = None) -> float:
        return mlp_evaluate(self.problem, self.seed, self.theta, self.cfg, t, x, counters)

    def batch(self, t, x, counters: Optional[CostCounters] = None) -> np.ndarray:
        return mlp_evaluate_batch(self.problem, self.seed, self.theta, self.cfg, t, x, counters)


def mlp_field(p: BsdeProblem, seed: int, theta: Sequence[int], cfg: MlpConfig) -> MlpField:
    return MlpField(p, seed, theta, cfg)


def counter_recursion(n: int, M: int, d: int) -> CostCounters:
    """Counters charged by one evaluation of ``U_{n,M}``, from the closed recursion."""
    rv = [0] * (n + 1)
    fe = [0] * (n + 1)
    ge = [0] * (n + 1)
    for k in range(1, n + 1):
        rv[k] = M**k * d
        ge[k] = M**k
        for l in range(k):
            prev_rv = rv[l - 1] if l >= 1 else 0
            prev_f = fe[l - 1] if l >= 1 else 0
            prev_g = ge[l - 1] if l >= 1 else 0
            rv[k] += M ** (k - l) * (1 + d + rv[l] + prev_rv)
            fe[k] += M ** (k - l) * ((2 if l >= 1 else 1) + fe[l] + prev_f)
            ge[k] += M ** (k - l) * (ge[l] + prev_g)
    return CostCounters(rv_scalars=rv[n], f_evals=fe[n], g_evals=ge[n])


def mlp_expectation_check(
    p: BsdeProblem,
    cfg: MlpConfig,
    t: float,
    x,
    replications: int,
    base_seed: int = 0,
) -> tuple[float, float]:
    """Mean and standard error of ``U_{1,M}(t, x)`` over independent seeds."""
    if p.dim_d != 1:
        raise ValueError("the expectation check is defined for d = 1")
    if cfg.n != 1:
        raise ValueError("the expectation check is defined for n = 1")
    if replications < 2:
        raise ValueError("need at least 2 replications")
    vals = np.array(
        [mlp_evaluate(p, s, (), cfg, t, x) for s in spawn_seeds(base_seed, replications)]
    )
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(replications))
    return mean, stderr
