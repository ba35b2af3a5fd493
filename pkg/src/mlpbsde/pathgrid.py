"""Nested time grids, piecewise-linear interpolation and the multi-grid path estimator."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .mlp import CostCounters, MlpConfig, mlp_field
from .problem import BsdeProblem
from .randomness import brownian_path


def grid_time(k: int, m: int, T: float) -> float:
    """The node ``k T / m``, computed from the reduced fraction ``k / m``.

    Reducing first makes equal rationals map to the same float, so a node of a
    coarse grid is bit-identical to the same node of every refinement.
    """
    g = math.gcd(k, m)
    return (k // g) * T / (m // g)


def _floor_node(t: float, m: int, T: float) -> tuple[int, float]:
    if not 0.0 <= t <= T:
        raise ValueError(f"t = {t} outside [0, {T}]")
    k = min(int(t * m / T), m - 1)
    # correct the float guess against the exact node times
    lo = grid_time(k, m, T)
    while lo > t:
        k -= 1
        lo = grid_time(k, m, T)
    while k + 1 < m:
        nxt = grid_time(k + 1, m, T)
        if nxt > t:
            break
        k, lo = k + 1, nxt
    return k, lo


def floor_index(t: float, m: int, T: float) -> int:
    """Index of ``floor_grid(t, m, T)`` on the grid with ``m`` cells."""
    return _floor_node(t, m, T)[0]


def ceil_index(t: float, m: int, T: float) -> int:
    """Index of ``ceil_grid(t, m, T)`` on the grid with ``m`` cells."""
    if t == T:
        return m
    # for t < T the node after the floor is the first node beyond t
    return _floor_node(t, m, T)[0] + 1


def floor_grid(t: float, M: int, T: float) -> float:
    """Largest node of ``{0, T/M, 2T/M, ...}`` in ``[0, t]`` other than ``T``."""
    return _floor_node(t, M, T)[1]


def ceil_grid(t: float, M: int, T: float) -> float:
    """Smallest node in ``(t, inf)``, or ``T`` when ``t = T``."""
    if t == T:
        return T
    return grid_time(_floor_node(t, M, T)[0] + 1, M, T)


@dataclass(frozen=True)
class GridSpec:
    M: int
    level: int
    T: float

    def __post_init__(self):
        if self.M < 1 or self.level < 0 or not self.T > 0:
            raise ValueError(f"invalid grid M={self.M}, level={self.level}, T={self.T}")

    @property
    def cells(self) -> int:
        return self.M**self.level

    def times(self) -> np.ndarray:
        m = self.cells
        return np.array([grid_time(k, m, self.T) for k in range(m + 1)])


def interpolate(grid: GridSpec, nodes, t: float) -> float:
    """Piecewise affine-linear interpolant of node values at time ``t``.

    Exact at grid nodes (no weight arithmetic is done there).
    """
    nodes = np.asarray(nodes, dtype=float)
    m = grid.cells
    if nodes.shape != (m + 1,):
        raise ValueError(f"expected {m + 1} node values, got {nodes.shape[0]}")
    k = floor_index(t, m, grid.T)
    lo = grid_time(k, m, grid.T)
    if t == lo:
        return float(nodes[k])
    if t == grid.T:
        return float(nodes[m])
    hi = grid_time(k + 1, m, grid.T)
    # v_lo + w (v_hi - v_lo) reproduces constant data exactly
    return float(nodes[k] + (t - lo) / (hi - lo) * (nodes[k + 1] - nodes[k]))


def interpolate_partition(taus, values, t) -> np.ndarray:
    """Piecewise-linear interpolation on an arbitrary partition ``taus`` (vectorized)."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if taus.ndim != 1 or taus.shape[0] < 2:
        raise ValueError("partition needs at least two points")
    if values.shape != taus.shape:
        raise ValueError("one value per partition point is required")
    k = np.clip(np.searchsorted(taus, t, side="right"), 1, taus.shape[0] - 1)
    lo, hi = taus[k - 1], taus[k]
    out = values[k - 1] + (t - lo) / (hi - lo) * (values[k] - values[k - 1])
    exact = np.searchsorted(taus, t, side="left")
    exact = np.clip(exact, 0, taus.shape[0] - 1)
    on_node = taus[exact] == t
    out[on_node] = values[exact[on_node]]
    return out


@dataclass
class PathEstimate:
    """Multi-grid approximation of ``Y`` at the fine nodes ``k T / M^n``."""

    fine_nodes: np.ndarray
    w_path: np.ndarray
    n: int
    M: int
    T: float
    d: int
    seed: int
    counters: CostCounters = field(default_factory=CostCounters)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.M, self.n, self.T)

    def times(self) -> np.ndarray:
        return self.grid.times()

    def config(self) -> dict:
        return {"n": self.n, "M": self.M, "T": self.T, "d": self.d, "seed": self.seed}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "t_k"] + [f"W_{j + 1}" for j in range(self.d)] + ["Y"])
        for k, t in enumerate(self.times()):
            row = [str(k), f"{t:.17g}"]
            row += [f"{w:.17g}" for w in self.w_path[k]]
            row.append(f"{self.fine_nodes[k]:.17g}")
            writer.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config(),
            "counters": self.counters.to_dict(),
            "Y": [float(v) for v in self.fine_nodes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _level_contribution(vals: np.ndarray, stride: int, total: int) -> np.ndarray:
    """Interpolate values on a grid with ``len(vals) - 1`` cells onto ``total`` fine cells."""
    k = np.arange(total + 1)
    j = k // stride
    r = k % stride
    w_hi = r / stride
    w_lo = (stride - r) / stride
    upper = np.minimum(j + 1, vals.shape[0] - 1)
    out = w_lo * vals[j] + w_hi * vals[upper]
    on_node = r == 0
    out[on_node] = vals[j[on_node]]
    return out


def path_estimate(
    p: BsdeProblem,
    seed: int,
    n: int,
    M: int,
    field_factory: Callable = mlp_field,
) -> PathEstimate:
    """One realization of the multi-grid estimator at the nodes ``k T / M^n``.

    Level ``l`` uses the field ``U^{(l,)}_{n-l,M}``, evaluated once at every
    level-(l+1) node; its level-l values are read from the same array because
    every level-l node is also a level-(l+1) node.
    """
    if n < 1:
        raise ValueError(f"path estimator needs n >= 1, got {n}")
    MlpConfig(n, M)
    T, d = p.horizon_T, p.dim_d
    counters = CostCounters()
    w = brownian_path(seed, d, M, n, T)
    total = M**n
    counters.rv_scalars += total * d

    contributions = []
    for l in range(n):
        fld = field_factory(p, seed, (l,), MlpConfig(n - l, M))
        m_fine = M ** (l + 1)
        stride = M ** (n - l - 1)
        idx = np.arange(m_fine + 1) * stride
        times = np.array([grid_time(j, m_fine, T) for j in range(m_fine + 1)])
        vals = fld.batch(times, w[idx], counters)
        contrib = _level_contribution(vals, stride, total)
        if l >= 1:
            contrib = contrib - _level_contribution(vals[::M], stride * M, total)
        contributions.append(contrib)

    fine = np.zeros(total + 1)
    for contrib in contributions:
        fine = fine + contrib
    return PathEstimate(fine_nodes=fine, w_path=w, n=n, M=M, T=T, d=d, seed=int(seed), counters=counters)


def path_value(est: PathEstimate, t: float) -> float:
    """The estimator at an arbitrary time (linear interpolation of the fine nodes)."""
    return interpolate(est.grid, est.fine_nodes, t)


def holder_seminorm(values: np.ndarray, h: float, alpha: float) -> float:
    """Brute-force ``max |v_i - v_j| / |t_i - t_j|^alpha`` on a uniform sample."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        return 0.0
    lag_pow = (np.arange(1, n) * h) ** alpha
    return float(_seminorm_kernel(values, lag_pow))


@numba.njit(cache=True)
def _seminorm_kernel(values, lag_pow):  # pragma: no cover - compiled
    best = 0.0
    n = values.shape[0]
    for i in range(n - 1):
        vi = values[i]
        for j in range(i + 1, n):
            q = abs(values[j] - vi) / lag_pow[j - i - 1]
            if q > best:
                best = q
    return best


@dataclass(frozen=True)
class InterpCase:
    """A function sampled on a uniform mesh of ``[0, T]`` and a partition drawn from it.

    ``partition`` holds mesh indices (first 0, last ``len(samples) - 1``).
    """

    samples: np.ndarray
    partition: Sequence[int]
    alpha: float
    T: float = 1.0

    @property
    def h(self) -> float:
        return self.T / (self.samples.shape[0] - 1)

    def mesh(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.samples.shape[0])

    def interpolant(self) -> np.ndarray:
        idx = np.asarray(self.partition)
        if idx.shape[0] < 2:
            raise ValueError("empty partition")
        mesh = self.mesh()
        return interpolate_partition(mesh[idx], self.samples[idx], mesh)


def _checked_partition(case: InterpCase) -> np.ndarray:
    idx = np.asarray(case.partition, dtype=int)
    last = case.samples.shape[0] - 1
    if idx.shape[0] < 2 or idx[0] != 0 or idx[-1] != last or np.any(np.diff(idx) <= 0):
        raise ValueError("partition must be strictly increasing from 0 to the last sample")
    return idx


def interp_error_bound_sides(case: InterpCase) -> tuple[float, float]:
    idx = _checked_partition(case)
    lhs = float(np.max(np.abs(case.interpolant() - case.samples)))
    max_step = float(np.max(np.diff(idx))) * case.h
    semi = holder_seminorm(case.samples, case.h, case.alpha)
    rhs = 2.0 ** (-min(3.0, case.alpha)) * max_step**case.alpha * semi
    return lhs, rhs


def check_interp_error_bound(case: InterpCase, slack: float = 1e-10) -> bool:
    """Sampled check of the interpolation error estimate.

    Both sides are brute-force maxima over the mesh; the bound holds for mesh
    maxima too because its proof only compares the function at a point with
    its values at the two enclosing partition points.
    """
    lhs, rhs = interp_error_bound_sides(case)
    return lhs <= rhs + slack


def check_interp_holder(case: InterpCase, slack: float = 1e-10) -> bool:
    """Sampled check that interpolation does not increase the Holder seminorm."""
    _checked_partition(case)
    if not 0.0 < case.alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    semi_interp = holder_seminorm(case.interpolant(), case.h, case.alpha)
    semi_orig = holder_seminorm(case.samples, case.h, case.alpha)
    return semi_interp <= semi_orig + slack


def random_interp_case(rng: np.random.Generator, alpha: float, samples: int = 1001, T: float = 1.0) -> InterpCase:
    """A random piecewise-smooth function with a Holder-type kink, plus a random partition."""
    mesh = np.linspace(0.0, T, samples)
    kink = mesh[rng.integers(0, samples)]
    amp, freq, phase = rng.normal(), rng.uniform(0.5, 12.0), rng.uniform(0, 2 * math.pi)
    slope, jump_amp = rng.normal(), rng.normal()
    expo = min(1.0, alpha + rng.uniform(0.0, 1.0))
    vals = amp * np.sin(freq * mesh + phase) + slope * mesh + jump_amp * np.abs(mesh - kink) ** expo
    cells = int(rng.integers(1, 12))
    interior = np.sort(rng.choice(np.arange(1, samples - 1), size=cells - 1, replace=False)) if cells > 1 else []
    partition = [0, *[int(i) for i in interior], samples - 1]
    return InterpCase(samples=vals, partition=partition, alpha=alpha, T=T)

