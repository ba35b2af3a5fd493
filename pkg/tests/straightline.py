"""Second, deliberately plain implementations used as test oracles.

They share only ``node_draws`` and ``brownian_path`` with the package and
follow the documented reduction order, so agreement is expected bit for bit.
"""

from fractions import Fraction

import numpy as np

from mlpbsde.randomness import brownian_path, node_draws


def mlp_scalar(p, seed, theta, n, M, t, x):
    """``U^theta_{n,M}(t, x)`` for one point, written out with Python loops."""
    if n == 0:
        return 0.0
    x = np.asarray(x, dtype=float)
    T = p.horizon_T
    dt = T - t
    leaves = M**n
    total = 0.0
    for i in range(1, leaves + 1):
        z = node_draws(seed, tuple(theta) + (0, -i), p.dim_d).z
        total = total + float(p.g((x + np.sqrt(dt) * z)[None, :])[0])
    value = total / leaves
    for l in range(n):
        reps = M ** (n - l)
        acc = 0.0
        for i in range(1, reps + 1):
            fine = tuple(theta) + (l, i)
            dr = node_draws(seed, fine, p.dim_d)
            tau = t + dt * dr.r
            xi = x + np.sqrt(dt * dr.r) * dr.z
            u_fine = mlp_scalar(p, seed, fine, l, M, tau, xi)
            term = float(p.f(np.array([tau]), xi[None, :], np.array([u_fine]))[0])
            if l >= 1:
                u_coarse = mlp_scalar(p, seed, tuple(theta) + (-l, i), l - 1, M, tau, xi)
                term = term - float(p.f(np.array([tau]), xi[None, :], np.array([u_coarse]))[0])
            acc = acc + term
        value = value + (dt / reps) * acc
    return value


def flat_mc_terminal(p, seed, theta, n, M, t, x):
    """Average of ``M^n`` terminal samples: the MLP value when ``f = 0``."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i in range(1, M**n + 1):
        z = node_draws(seed, tuple(theta) + (0, -i), p.dim_d).z
        total = total + float(p.g((x + np.sqrt(p.horizon_T - t) * z)[None, :])[0])
    return total / M**n


def _interp_weights(k, m_fine, m_level):
    """Exact floor index and convex weights of ``k / m_fine`` on a grid with ``m_level`` cells."""
    s = Fraction(k, m_fine) * m_level
    j = min(int(s), m_level - 1)
    w_hi = s - j
    return j, float(1 - w_hi), float(w_hi)


def path_nodes(p, seed, n, M):
    """Multi-grid estimator at every fine node, each field value computed afresh.

    Requires ``T = 1`` so that rational node times round identically.
    """
    assert p.horizon_T == 1.0
    d = p.dim_d
    w = brownian_path(seed, d, M, n, 1.0)
    total = M**n
    out = np.zeros(total + 1)
    for k in range(total + 1):
        y = 0.0
        for l in range(n):
            parts = []
            for m_level in ([M ** (l + 1), M**l] if l >= 1 else [M]):
                j, w_lo, w_hi = _interp_weights(k, total, m_level)
                stride = total // m_level
                t_lo = float(Fraction(j, m_level))
                lo = mlp_scalar(p, seed, (l,), n - l, M, t_lo, w[j * stride])
                if w_hi == 0.0:
                    parts.append(lo)
                    continue
                t_hi = float(Fraction(j + 1, m_level))
                hi = mlp_scalar(p, seed, (l,), n - l, M, t_hi, w[(j + 1) * stride])
                parts.append(w_lo * lo + w_hi * hi)
            y = y + (parts[0] - parts[1] if l >= 1 else parts[0])
        out[k] = y
    return out
