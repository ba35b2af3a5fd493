import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlpbsde.mlp import MlpConfig, mlp_evaluate, mlp_field
from mlpbsde.pathgrid import (
    GridSpec,
    InterpCase,
    ceil_grid,
    check_interp_error_bound,
    check_interp_holder,
    floor_grid,
    grid_time,
    holder_seminorm,
    interp_error_bound_sides,
    interpolate,
    interpolate_partition,
    path_estimate,
    path_value,
    random_interp_case,
)
from mlpbsde.problem import builtin_problem
from straightline import path_nodes


def set_floor(t, M, T):
    return max(s for s in (k * T / M for k in range(M + 1)) if s <= t and s != T)


def set_ceil(t, M, T):
    nodes = [k * T / M for k in range(M + 1)]
    return min([s for s in nodes if s > t] + ([T] if t == T else []))


def test_grid_examples():
    assert floor_grid(0.3, 4, 1.0) == 0.25
    assert floor_grid(1.0, 2, 1.0) == 0.5
    assert floor_grid(0.0, 7, 2.0) == 0.0
    assert ceil_grid(0.0, 2, 1.0) == 0.5
    assert ceil_grid(1.0, 2, 1.0) == 1.0
    assert ceil_grid(0.25, 4, 1.0) == 0.5
    assert floor_grid(1.0, 1, 1.0) == 0.0


@pytest.mark.parametrize("fn", [floor_grid, ceil_grid])
def test_grid_rejects_outside(fn):
    with pytest.raises(ValueError):
        fn(-0.01, 2, 1.0)
    with pytest.raises(ValueError):
        fn(1.01, 2, 1.0)


@given(st.integers(1, 16), st.floats(0.0, 1.0), st.sampled_from([1.0, 0.5, 3.0]))
def test_grid_matches_set_definition(M, u, T):
    t = u * T
    assert floor_grid(t, M, T) == pytest.approx(set_floor(t, M, T), abs=1e-15)
    assert ceil_grid(t, M, T) == pytest.approx(set_ceil(t, M, T), abs=1e-15)


@given(st.integers(1, 20), st.floats(0.0, 1.0, exclude_max=True), st.floats(0.1, 5.0))
def test_grid_sandwich(M, u, T):
    t = u * T
    lo, hi = floor_grid(t, M, T), ceil_grid(t, M, T)
    assert lo <= t < hi
    assert hi - lo == pytest.approx(T / M, rel=1e-12)


@given(st.integers(1, 10), st.integers(0, 9), st.floats(0.1, 5.0))
def test_nodes_map_to_next_node(M, k, T):
    k = k % M
    t = grid_time(k, M, T)
    assert floor_grid(t, M, T) == t
    assert ceil_grid(t, M, T) == grid_time(k + 1, M, T)


@pytest.mark.parametrize("T", [1.0, 0.1, 0.3, 7.0])
def test_grids_nest_exactly(T):
    for M in range(1, 9):
        for level in range(4):
            coarse = GridSpec(M, level, T).times()
            fine = GridSpec(M, level + 1, T).times()
            assert np.array_equal(fine[::M], coarse)
            assert fine[-1] == T


def test_interpolation_weights_sum_to_one():
    rng = np.random.default_rng(0)
    for t in rng.uniform(0, 1, 10_000):
        M = int(rng.integers(1, 9))
        h = 1.0 / M
        lo, hi = floor_grid(t, M, 1.0), ceil_grid(t, M, 1.0)
        assert abs((hi - t) / h + (t - lo) / h - 1.0) <= 1e-12


def test_interpolate_examples():
    g = GridSpec(3, 1, 1.0)
    assert all(interpolate(g, [2.5] * 4, t) == 2.5 for t in np.linspace(0, 1, 11))
    assert interpolate(GridSpec(1, 1, 1.0), [0.0, 1.0], 0.25) == 0.25
    vals = np.random.default_rng(1).normal(size=4)
    for k, t in enumerate(g.times()):
        assert interpolate(g, vals, t) == vals[k]
    with pytest.raises(ValueError):
        interpolate(g, [1.0, 2.0], 0.5)


@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5), st.floats(0, 1))
def test_interpolate_agrees_with_partition_version(vals, t):
    g = GridSpec(2, 2, 1.0)
    a = interpolate(g, vals, t)
    b = interpolate_partition(g.times(), vals, np.array([t]))[0]
    assert a == pytest.approx(b, abs=1e-12)
    assert min(vals) - 1e-12 <= a <= max(vals) + 1e-12


class ConstantField:
    """Deterministic stand-in for a random field: the same function on every level."""

    def __init__(self, fn):
        self.fn = fn

    def batch(self, t, x, counters=None):
        return self.fn(np.asarray(t), np.asarray(x))


def test_telescoping_with_identical_levels():
    p = builtin_problem("cos_zero", 2)
    fn = lambda t, x: np.sin(3 * t) + x[:, 0] * x[:, 1]  # noqa: E731
    for n, M in [(1, 3), (2, 2), (3, 2), (2, 4)]:
        est = path_estimate(p, 4, n, M, field_factory=lambda *a: ConstantField(fn))
        assert np.max(np.abs(est.fine_nodes - fn(est.times(), est.w_path))) <= 1e-12


@pytest.mark.parametrize("family", ["cos_zero", "cos_sine", "cos_affine"])
@pytest.mark.parametrize("n,M", [(2, 2), (2, 3), (3, 2), (1, 4)])
def test_matches_straight_line_estimator(family, n, M):
    p = builtin_problem(family, 1)
    est = path_estimate(p, 7, n, M)
    assert np.array_equal(est.fine_nodes, path_nodes(p, 7, n, M))


def test_single_level_is_the_field():
    p = builtin_problem("cos_sine", 2)
    est = path_estimate(p, 3, 1, 4)
    for k, t in enumerate(est.times()):
        assert est.fine_nodes[k] == mlp_evaluate(p, 3, (0,), MlpConfig(1, 4), t, est.w_path[k])


@pytest.mark.parametrize("family", ["cos_zero", "cos_affine", "cos_sine", "exp_affine"])
def test_terminal_condition(family):
    for d in (1, 3):
        p = builtin_problem(family, d)
        for n, M in [(1, 1), (2, 2), (3, 3), (2, 4)]:
            for seed in range(3):
                est = path_estimate(p, seed, n, M)
                assert abs(est.fine_nodes[-1] - p.g(est.w_path[-1:])[0]) <= 1e-12


def direct_estimator(p, seed, n, M, t, w_path):
    """The multi-grid sum at arbitrary t, evaluating each field where needed."""
    T = p.horizon_T
    total = M**n
    y = 0.0
    for l in range(n):
        fld = mlp_field(p, seed, (l,), MlpConfig(n - l, M))
        for m, sign in ([(M ** (l + 1), 1.0), (M**l, -1.0)] if l >= 1 else [(M, 1.0)]):
            lo, hi = floor_grid(t, m, T), ceil_grid(t, m, T)
            klo, khi = round(lo * m / T), round(hi * m / T)
            stride = total // m
            h = T / m
            val = (hi - t) / h * fld(lo, w_path[klo * stride]) + (t - lo) / h * fld(hi, w_path[khi * stride])
            y += sign * val
    return y


def test_path_value_matches_direct_formula():
    p = builtin_problem("cos_affine", 1)
    est = path_estimate(p, 2, 2, 2)
    rng = np.random.default_rng(5)
    for t in list(rng.uniform(0, 1, 25)) + [0.0, 0.5, 1.0]:
        assert abs(path_value(est, t) - direct_estimator(p, 2, 2, 2, t, est.w_path)) <= 1e-12


def test_path_value_nodes_and_terminal():
    p = builtin_problem("cos_sine", 2)
    est = path_estimate(p, 1, 2, 3)
    for k, t in enumerate(est.times()):
        assert path_value(est, t) == est.fine_nodes[k]
    assert abs(path_value(est, 1.0) - p.g(est.w_path[-1:])[0]) <= 1e-12
    with pytest.raises(ValueError):
        path_value(est, 1.2)


def test_path_estimate_guards():
    p = builtin_problem("cos_zero", 1)
    with pytest.raises(ValueError):
        path_estimate(p, 0, 0, 2)
    from mlpbsde.mlp import ResourceGuardError

    with pytest.raises(ResourceGuardError):
        path_estimate(p, 0, 7, 10)


def test_path_outputs():
    p = builtin_problem("cos_zero", 1)
    est = path_estimate(p, 7, 2, 2)
    lines = est.to_csv().splitlines()
    assert lines[0] == "k,t_k,W_1,Y" and len(lines) == 6
    last = lines[-1].split(",")
    assert float(last[3]) == est.fine_nodes[-1]
    assert abs(float(last[3]) - math.cos(float(last[2]))) <= 1e-12
    doc = json.loads(est.to_json())
    assert doc["config"] == {"n": 2, "M": 2, "T": 1.0, "d": 1, "seed": 7}
    assert doc["counters"]["total"] == est.counters.total


def naive_seminorm(values, h, alpha):
    n = len(values)
    i, j = np.triu_indices(n, 1)
    return float(np.max(np.abs(values[j] - values[i]) / ((j - i) * h) ** alpha))


@given(st.integers(2, 60), st.floats(0.05, 2.0), st.integers(0, 1000))
def test_seminorm_matches_naive(n, alpha, seed):
    v = np.random.default_rng(seed).normal(size=n)
    assert holder_seminorm(v, 0.1, alpha) == pytest.approx(naive_seminorm(v, 0.1, alpha), rel=1e-14)


def test_interp_bound_examples():
    mesh = np.linspace(0, 1, 10_001)
    const = InterpCase(np.full(10_001, 3.0), [0, 5000, 10_000], 0.7)
    assert interp_error_bound_sides(const)[0] == 0.0 and check_interp_error_bound(const)
    lin = InterpCase(mesh.copy(), [0, 2500, 5000, 7500, 10_000], 1.0)
    assert interp_error_bound_sides(lin)[0] <= 1e-15 and check_interp_error_bound(lin)
    root = InterpCase(np.abs(mesh - 0.5) ** 0.5, [0, 5000, 10_000], 0.5)
    lhs, rhs = interp_error_bound_sides(root)
    assert lhs > 0 and lhs <= rhs + 1e-10
    with pytest.raises(ValueError):
        check_interp_error_bound(InterpCase(mesh, [0], 1.0))


def test_interp_holder_examples():
    mesh = np.linspace(0, 1, 2001)
    assert check_interp_holder(InterpCase(np.zeros(2001), [0, 1000, 2000], 0.5))
    lin = InterpCase(2 * mesh, [0, 700, 2000], 1.0)
    a = holder_seminorm(lin.interpolant(), lin.h, 1.0)
    assert a == pytest.approx(holder_seminorm(lin.samples, lin.h, 1.0), rel=1e-12)
    assert check_interp_holder(lin)
    with pytest.raises(ValueError):
        check_interp_holder(InterpCase(mesh, [0, 2000], 1.5))


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
def test_interp_checks_random(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    for _ in range(100):
        case = random_interp_case(rng, alpha, samples=501)
        assert check_interp_error_bound(case)
        assert check_interp_holder(case)


@pytest.mark.parametrize("alpha", [1.5, 2.0])
def test_interp_error_bound_smooth_orders(alpha):
    rng = np.random.default_rng(3)
    for _ in range(50):
        assert check_interp_error_bound(random_interp_case(rng, alpha, samples=501))
