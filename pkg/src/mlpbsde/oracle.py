"""Reference solutions of the stochastic fixed-point equation

    u(t, x) = E[g(x + sqrt(T - t) Z)] + int_t^T E[f(s, x + sqrt(s - t) Z, u(s, .))] ds,

used to check the MLP estimators: a closed form for affine drivers, a
quadrature Picard iteration in one dimension, and crude nested Monte Carlo.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from .problem import BsdeProblem

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class NoOracleError(ValueError):
    """No reference solution is available for this problem."""


class OracleGuardError(RuntimeError):
    """The requested oracle computation is outside its supported range."""


def _batch(t, x, d: int):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, d) if (x.shape[0] == d and t.shape[0] == 1) else x.reshape(-1, d)
    if t.shape[0] == 1 and x.shape[0] > 1:
        t = np.full(x.shape[0], t[0])
    return t, x


@dataclass(frozen=True)
class ReferenceSolution:
    """``evaluate(t, x)`` accepts a batch (``t`` of shape (P,), ``x`` of shape (P, d))."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str
    accuracy: float
    dim: int

    def evaluate(self, t, x) -> np.ndarray:
        t, x = _batch(t, x, self.dim)
        return self.func(t, x)

    def __call__(self, t: float, x) -> float:
        return float(self.evaluate([t], np.asarray(x, dtype=float).reshape(1, self.dim))[0])


def gauss_hermite_rule(nodes: int = 200, cutoff: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule for ``E[h(Z)]``, truncated to ``|z| <= cutoff``."""
    z, w = hermegauss(nodes)
    keep = np.abs(z) <= cutoff
    return z[keep], w[keep] / _SQRT_2PI


def gaussian_expectation(h: Callable[[np.ndarray], np.ndarray], x, s: float, nodes: int = 40) -> float:
    """Tensor-product Gauss-Hermite value of ``E[h(x + sqrt(s) Z)]`` (small ``d`` only)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if d > 4:
        raise OracleGuardError("tensor Gauss-Hermite quadrature is limited to d <= 4")
    z, w = hermegauss(nodes)
    w = w / _SQRT_2PI
    pts = np.array(list(itertools.product(z, repeat=d)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    vals = h(x[None, :] + math.sqrt(s) * pts)
    return float(np.sum(wts * vals))


def affine_closed_form(p: BsdeProblem) -> ReferenceSolution:
    """Exact solution for ``f(v) = a v + b`` with an analytically smoothed terminal."""
    if p.driver.affine_params is None or p.driver.depends_on_tx:
        raise NoOracleError("closed form needs a driver f(v) = a v + b")
    smoothing = p.terminal.gaussian_smoothing
    if smoothing is None:
        raise NoOracleError("closed form needs the Gaussian smoothing of g")
    a, b = p.driver.affine_params
    T = p.horizon_T

    def func(t, x):
        tau = T - t
        smooth = np.array([smoothing(tau[i], x[i : i + 1])[0] for i in range(t.shape[0])])
        growth = np.exp(a * tau)
        if a == 0.0:
            return smooth + b * tau
        return growth * smooth + (b / a) * np.expm1(a * tau)

    return ReferenceSolution(func=func, kind="affine_closed_form", accuracy=1e-12, dim=p.dim_d)


def first_picard_mean(p: BsdeProblem, t: float, x: float, gh_nodes: int = 80, gl_nodes: int = 40) -> float:
    """``E[U_{1,M}(t, x)]`` for ``d = 1``: ``E[g(X_T)] + (T - t) int_0^1 E[f(., X, 0)] d lambda``."""
    if p.dim_d != 1:
        raise ValueError("first_picard_mean is one-dimensional")
    T = p.horizon_T
    tau = T - t
    z, w = hermegauss(gh_nodes)
    w = w / _SQRT_2PI
    terminal = float(np.sum(w * p.g((x + math.sqrt(tau) * z)[:, None])))
    lam, lw = leggauss(gl_nodes)
    lam, lw = (lam + 1.0) / 2.0, lw / 2.0
    inner = 0.0
    for li, wi in zip(lam, lw):
        s = t + tau * li
        pts = (x + math.sqrt(tau * li) * z)[:, None]
        inner += wi * float(np.sum(w * p.f(np.full(z.shape, s), pts, np.zeros(z.shape))))
    return terminal + tau * inner


def _cheb_lobatto(n: int, T: float) -> np.ndarray:
    # ascending nodes on [0, T], both endpoints included
    k = np.arange(n)
    return T * (1.0 - np.cos(math.pi * k / (n - 1))) / 2.0


def _bary_weights(n: int) -> np.ndarray:
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _bary_matrix(nodes: np.ndarray, weights: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Rows of Lagrange basis values at ``s`` (barycentric formula)."""
    diff = s[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    q = weights[None, :] / diff
    out = q / q.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    out[rows] = exact[rows].astype(float)
    return out


class _TensorField:
    """Values on (Chebyshev time nodes) x (uniform space grid) with off-grid evaluation."""

    def __init__(self, times: np.ndarray, xs: np.ndarray, values: np.ndarray):
        self.times, self.xs, self.values = times, xs, values
        self.weights = _bary_weights(times.shape[0])

    def at_times(self, s: np.ndarray) -> np.ndarray:
        """Space-grid rows at arbitrary times, shape (len(s), len(xs))."""
        return _bary_matrix(self.times, self.weights, s) @ self.values

    def __call__(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        rows = self.at_times(t)
        xc = np.clip(x, self.xs[0], self.xs[-1])
        out = np.empty(t.shape[0])
        for i in range(t.shape[0]):
            out[i] = CubicSpline(self.xs, rows[i])(xc[i])
        return out


def picard_quadrature(
    p: BsdeProblem,
    time_nodes: int = 16,
    space_grid: int = 441,
    iters: int = 60,
    *,
    gh_nodes: int = 200,
    gl_nodes: int = 16,
    half_width: float | None = None,
    tol: float = 1e-10,
) -> ReferenceSolution:
    """Picard iteration of the fixed-point equation on a time x space tensor grid (``d = 1``).

    Time is interpolated with the barycentric polynomial through Chebyshev-Lobatto
    nodes, space with cubic splines on a uniform grid (values beyond the grid are
    clamped to the boundary). Expectations use truncated Gauss-Hermite, the time
    integral Gauss-Legendre.
    """
    if p.dim_d != 1:
        raise OracleGuardError("picard_quadrature supports d = 1 only")
    L, T = p.driver.lipschitz_L, p.horizon_T
    if L * T > 2.0:
        raise OracleGuardError(f"L T = {L * T:.3g} too large for the Picard reference")
    if half_width is None:
        half_width = 3.0 + 8.0 * math.sqrt(T)
    times = _cheb_lobatto(time_nodes, T)
    xs = np.linspace(-half_width, half_width, space_grid)
    z, wz = gauss_hermite_rule(gh_nodes)
    lam, wl = leggauss(gl_nodes)
    lam, wl = (lam + 1.0) / 2.0, wl / 2.0

    g_vals = p.g(xs[:, None])
    terminal_term = np.empty((time_nodes, space_grid))
    for j, tj in enumerate(times):
        if tj == T:
            terminal_term[j] = g_vals
        else:
            pts = (xs[:, None] + math.sqrt(T - tj) * z[None, :]).reshape(-1, 1)
            terminal_term[j] = p.g(pts).reshape(space_grid, -1) @ wz

    # quadrature times s = t_j + (T - t_j) lambda_q for every (j, q)
    s_all = (times[:, None] + (T - times[:, None]) * lam[None, :]).ravel()

    def apply(values: np.ndarray) -> np.ndarray:
        fld = _TensorField(times, xs, values)
        rows = fld.at_times(s_all)
        spline = CubicSpline(xs, rows.T)
        out = terminal_term.copy()
        for j, tj in enumerate(times):
            if tj == T:
                continue
            acc = np.zeros(space_grid)
            for q in range(gl_nodes):
                col = j * gl_nodes + q
                s = s_all[col]
                y = xs[:, None] + math.sqrt(s - tj) * z[None, :]
                yc = np.clip(y, xs[0], xs[-1])
                v = _spline_column(spline, col, yc)
                fv = p.f(np.full(y.size, s), y.reshape(-1, 1), v.ravel()).reshape(y.shape)
                acc += wl[q] * (fv @ wz)
            out[j] += (T - tj) * acc
        return out

    values = np.zeros((time_nodes, space_grid))
    increment = math.inf
    weight = np.exp(-2.0 * L * (T - times))[:, None]
    for _ in range(iters):
        new = apply(values)
        step = new - values
        increment = float(np.max(np.abs(step)))
        weighted = float(np.max(np.abs(step) * weight))
        values = new
        if increment < tol:
            break

    if L * T < 1.0:
        accuracy = increment / (1.0 - L * T)
    else:
        # contraction in the norm sup_t exp(-2L(T - t)) |v(t, .)|
        q = (1.0 - math.exp(-2.0 * L * T)) / 2.0
        accuracy = math.exp(2.0 * L * T) * q / (1.0 - q) * weighted
    fld = _TensorField(times, xs, values)
    ref = ReferenceSolution(func=lambda t, x: fld(t, x[:, 0]), kind="picard_quadrature", accuracy=accuracy, dim=1)
    object.__setattr__(ref, "_grid", (times, xs, values, apply))
    return ref


def _spline_column(spline: CubicSpline, col: int, y: np.ndarray) -> np.ndarray:
    # evaluate one column of a vector-valued spline using its piecewise coefficients
    xs = spline.x
    idx = np.clip(np.searchsorted(xs, y, side="right") - 1, 0, xs.shape[0] - 2)
    dx = y - xs[idx]
    c = spline.c[:, :, col]
    return ((c[0, idx] * dx + c[1, idx]) * dx + c[2, idx]) * dx + c[3, idx]


def picard_residual(ref: ReferenceSolution) -> float:
    """``max |Phi(v) - v|`` over the tensor grid of a Picard reference."""
    times, xs, values, apply = ref._grid  # type: ignore[attr-defined]
    return float(np.max(np.abs(apply(values) - values)))


def nested_mc(
    p: BsdeProblem,
    t: float,
    x,
    depth: int = 2,
    samples_per_level: int | Sequence[int] = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Truncated Picard iterate ``u_depth(t, x)`` by nested plain Monte Carlo.

    ``u_0 = 0`` and ``u_k(t, x) = E[g(x + sqrt(T-t) Z) + (T-t) f(tau, xi, u_(k-1)(tau, xi))]``
    with ``tau`` uniform on ``[t, T]``; each inner value is an independent
    estimate. Returns the value and the standard error of the outer average.
    """
    if depth < 1 or depth > 4:
        raise OracleGuardError(f"depth must be in 1..4, got {depth}")
    if isinstance(samples_per_level, int):
        samples = [samples_per_level] * depth
    else:
        samples = [int(s) for s in samples_per_level]
        if len(samples) != depth:
            raise ValueError("one sample count per level is required")
    if math.prod(samples) > 10**7:
        raise OracleGuardError(f"nested sample count {math.prod(samples)} exceeds 1e7")
    d, T = p.dim_d, p.horizon_T
    x = np.asarray(x, dtype=float).reshape(d)
    if not 0.0 <= t <= T:
        raise ValueError(f"t = {t} outside [0, {T}]")
    if t == T:
        return float(p.g(x[None, :])[0]), 0.0
    rng = np.random.default_rng(seed)

    def level_terms(k, tt, xx):
        n = samples[depth - k]
        size = tt.shape[0]
        tau_left = (T - tt)[:, None]
        zg = rng.standard_normal((size, n, d))
        gv = p.g((xx[:, None, :] + np.sqrt(tau_left)[..., None] * zg).reshape(-1, d)).reshape(size, n)
        r = rng.random((size, n))
        zf = rng.standard_normal((size, n, d))
        tau = tt[:, None] + tau_left * r
        xi = xx[:, None, :] + np.sqrt(tau_left * r)[..., None] * zf
        if k > 1:
            inner = level_terms(k - 1, tau.ravel(), xi.reshape(-1, d)).mean(axis=1)
        else:
            inner = np.zeros(size * n)
        fv = p.f(tau.ravel(), xi.reshape(-1, d), inner).reshape(size, n)
        return gv + tau_left * fv

    terms = level_terms(depth, np.array([float(t)]), x[None, :])[0]
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(terms.shape[0]))


def reference_for(p: BsdeProblem) -> ReferenceSolution:
    """The best available reference for a problem, or :class:`NoOracleError`."""
    if p.driver.affine_params is not None and p.terminal.gaussian_smoothing is not None:
        return affine_closed_form(p)
    if p.dim_d == 1:
        return picard_quadrature(p)
    raise NoOracleError(f"no reference solution for family {p.family!r} in d = {p.dim_d}")


def lipschitz_gap_check(
    f: Callable[[float], float], B1: float, B2: float, v1: float, v2: float, w1: float, w2: float
) -> tuple[float, float, bool]:
    """Both sides of the second-order Lipschitz estimate for a C^2 function.

    ``|(f(v1)-f(w1)) - (f(v2)-f(w2))| <= B1 |(v1-w1)-(v2-w2)|
    + B2/2 (|v1-w1| + |v2-w2|) min(|v1-v2|, |w1-w2|)``.
    """
    lhs = abs((f(v1) - f(w1)) - (f(v2) - f(w2)))
    rhs = B1 * abs((v1 - w1) - (v2 - w2)) + 0.5 * B2 * (abs(v1 - w1) + abs(v2 - w2)) * min(
        abs(v1 - v2), abs(w1 - w2)
    )
    return lhs, rhs, bool(lhs <= rhs + 1e-12)


def export_oracle_table(ref: ReferenceSolution, points: Sequence[tuple[float, Sequence[float]]], path) -> None:
    """Write ``t, x_1..x_d, u, accuracy`` rows for the given points."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{j + 1}" for j in range(ref.dim)] + ["u", "accuracy"])
        for t, x in points:
            u = ref(t, x)
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [f"{u:.17g}", f"{ref.accuracy:.17g}"])
