"""BSDE problem definitions and the built-in test families.

Drivers and terminals are vectorized: ``x`` has shape ``(P, d)``, ``t`` and
``v`` have shape ``(P,)``, and the result has shape ``(P,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

MAX_DIM = 10**6
DEFAULT_BETA = 1.0 / 12.0

FAMILIES = ("cos_zero", "cos_affine", "exp_affine", "cos_sine")


class ProblemError(ValueError):
    """Raised for malformed problem definitions."""


@dataclass(frozen=True)
class DriverSpec:
    evaluate: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    affine_params: Optional[tuple[float, float]] = None
    depends_on_tx: bool = False

    def __call__(self, t, x, v):
        return self.evaluate(t, x, v)


@dataclass(frozen=True)
class TerminalSpec:
    evaluate: Callable[[np.ndarray], np.ndarray]
    gaussian_smoothing: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True)
class BsdeProblem:
    """A BSDE ``Y_t = g(W_T) + int_t^T f(s, W_s, Y_s) ds - int_t^T Z_s dW_s``.

    ``lyapunov_V0`` is the value of the Lyapunov weight at the origin. Families
    whose terminal grows (``exp_affine``) also carry ``lyapunov_weight``, a
    function ``w`` with ``w(0) = 1`` so that ``V(x) = V0 * w(x)``; it is only
    used by :func:`validate_problem`.
    """

    horizon_T: float
    dim_d: int
    driver: DriverSpec
    terminal: TerminalSpec
    rho: float = 0.0
    beta: float = DEFAULT_BETA
    lyapunov_V0: float = 1.0
    lyapunov_weight: Optional[Callable[[np.ndarray], np.ndarray]] = None
    family: Optional[str] = None
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ProblemError(f"horizon T must be positive, got {self.horizon_T}")
        if self.dim_d < 1:
            raise ProblemError(f"dimension must be >= 1, got {self.dim_d}")
        if self.dim_d > MAX_DIM:
            raise ProblemError(f"dimension {self.dim_d} exceeds resource guard {MAX_DIM}")
        if self.lyapunov_V0 < 1:
            raise ProblemError(f"V0 must be >= 1, got {self.lyapunov_V0}")
        if self.rho < 0:
            raise ProblemError(f"rho must be nonnegative, got {self.rho}")
        # beta outside (0, 1/12] is reported by validate_problem, not rejected

    def f(self, t, x, v):
        return self.driver.evaluate(t, x, v)

    def g(self, x):
        return self.terminal.evaluate(x)

    def describe(self) -> dict:
        out = {
            "family": self.family,
            "d": self.dim_d,
            "T": self.horizon_T,
            "rho": self.rho,
            "beta": self.beta,
            "V0": self.lyapunov_V0,
            "L": self.driver.lipschitz_L,
        }
        for key, value in self.params.items():
            if key not in out:
                out[key] = list(value) if isinstance(value, (tuple, np.ndarray)) else value
        return out


def _cos_product(x):
    x = np.asarray(x, dtype=float)
    # coordinate-by-coordinate product: fixed multiplication order
    out = np.cos(x[..., 0])
    for i in range(1, x.shape[-1]):
        out = out * np.cos(x[..., i])
    return out


def _dot(x, c):
    x = np.asarray(x, dtype=float)
    # explicit left-to-right sum so results do not depend on the batch size
    out = x[..., 0] * c[0]
    for i in range(1, x.shape[-1]):
        out = out + x[..., i] * c[i]
    return out


def _affine_driver(a: float, b: float) -> DriverSpec:
    def evaluate(t, x, v):
        return a * np.asarray(v, dtype=float) + b

    return DriverSpec(evaluate=evaluate, lipschitz_L=abs(a), affine_params=(a, b))


def builtin_problem(family: str, d: int, params: Optional[Mapping[str, object]] = None) -> BsdeProblem:
    """Build one of the built-in problem families.

    Families: ``cos_zero`` (g = prod cos, f = 0), ``cos_affine`` (g = prod cos,
    f(v) = a v + b), ``exp_affine`` (g = exp(<c, x>), f(v) = a v + b) and
    ``cos_sine`` (g = prod cos, f(v) = sin v).

    Recognised params: ``T`` (default 1), ``a`` (0.3), ``b`` (0.1), ``c``
    (exp family, default ``0.5 / sqrt(d)`` in every coordinate), ``rho``,
    ``beta`` (1/12), ``V0``.
    """
    params = dict(params or {})
    if family not in FAMILIES:
        raise ProblemError(f"unknown problem family {family!r}; expected one of {FAMILIES}")
    d = int(d)
    if d < 1:
        raise ProblemError(f"dimension must be >= 1, got {d}")
    if d > MAX_DIM:
        raise ProblemError(f"dimension {d} exceeds resource guard {MAX_DIM}")
    T = float(params.get("T", 1.0))
    if not T > 0:
        raise ProblemError(f"horizon T must be positive, got {T}")
    a = float(params.get("a", 0.3))
    b = float(params.get("b", 0.1))
    beta = float(params.get("beta", DEFAULT_BETA))
    rho = params.get("rho")
    V0 = params.get("V0")
    weight = None
    recorded: dict = {"T": T}

    if family.startswith("cos"):

        def smoothing(s, x, _d=d):
            return math.exp(-_d * float(s) / 2.0) * _cos_product(x)

        terminal = TerminalSpec(evaluate=_cos_product, gaussian_smoothing=smoothing)
        if family == "cos_zero":
            driver = DriverSpec(
                evaluate=lambda t, x, v: np.zeros(np.shape(v)),
                lipschitz_L=0.0,
                affine_params=(0.0, 0.0),
            )
        elif family == "cos_affine":
            driver = _affine_driver(a, b)
            recorded.update(a=a, b=b)
        else:
            driver = DriverSpec(evaluate=lambda t, x, v: np.sin(v), lipschitz_L=1.0)
        rho = 0.0 if rho is None else float(rho)
        V0 = 1.0 if V0 is None else float(V0)
    else:
        c = params.get("c")
        if c is None:
            c = np.full(d, 0.5 / math.sqrt(d))
        else:
            c = np.asarray([float(ci) for ci in np.atleast_1d(c)], dtype=float)
            if c.shape != (d,):
                raise ProblemError(f"c must have {d} entries, got {c.shape[0]}")
        c = c.copy()
        c.setflags(write=False)
        c_sq = float(c @ c)

        def exp_terminal(x, _c=c):
            return np.exp(_dot(x, _c))

        def exp_smoothing(s, x, _c=c, _c_sq=c_sq):
            return np.exp(_dot(x, _c) + float(s) * _c_sq / 2.0)

        def exp_weight(x, _c=c, _k=1.0 / beta):
            return np.cosh(_k * _dot(x, _c))

        terminal = TerminalSpec(evaluate=exp_terminal, gaussian_smoothing=exp_smoothing)
        driver = _affine_driver(a, b)
        weight = exp_weight
        # E[cosh(k <c, x + sqrt(s) Z>)] = cosh(k <c, x>) exp(k^2 |c|^2 s / 2)
        rho = c_sq / (2.0 * beta**2) if rho is None else float(rho)
        # |g|^(1/beta) = exp(k y) <= 2 cosh(k y)
        V0 = 2.0 if V0 is None else float(V0)
        recorded.update(a=a, b=b, c=tuple(float(ci) for ci in c))

    return BsdeProblem(
        horizon_T=T,
        dim_d=d,
        driver=driver,
        terminal=terminal,
        rho=float(rho),
        beta=beta,
        lyapunov_V0=float(V0),
        lyapunov_weight=weight,
        family=family,
        params=recorded,
    )


def validate_problem(p: BsdeProblem, probes: int = 2000, seed: int = 20240601) -> list[str]:
    """Sampled sanity checks of the growth hypotheses; returns warnings.

    Checks ``max(|T f(t, x, 0)|^(1/beta), |g(x)|^(1/beta)) <= V(x)`` on a
    random probe set (the ``s = t`` case, which is the tightest), plus the
    parameter ranges. Nothing here raises.
    """
    out: list[str] = []
    if not (0.0 < p.beta <= DEFAULT_BETA):
        out.append(f"beta outside (0,1/12]: beta={p.beta}")
        if p.beta <= 0:
            return out
    rng = np.random.default_rng(seed)
    d, T = p.dim_d, p.horizon_T
    x = rng.normal(scale=1.5, size=(probes, d))
    t = rng.uniform(0.0, T, size=probes)
    with np.errstate(over="ignore"):
        fx0 = np.abs(T * p.f(t, x, np.zeros(probes)))
        gx = np.abs(p.g(x))
        inv = 1.0 / p.beta
        lhs = np.maximum(fx0**inv, gx**inv)
        weight = np.ones(probes) if p.lyapunov_weight is None else p.lyapunov_weight(x)
        rhs = p.lyapunov_V0 * weight
    bad = int(np.count_nonzero(lhs > rhs * (1.0 + 1e-12)))
    if bad:
        out.append(f"growth condition violated at {bad}/{probes} probe points")

    v = rng.normal(scale=3.0, size=probes)
    w = rng.normal(scale=3.0, size=probes)
    gap = np.abs(p.f(t, x, v) - p.f(t, x, w))
    if np.any(gap > p.driver.lipschitz_L * np.abs(v - w) + 1e-12):
        out.append(f"driver not {p.driver.lipschitz_L}-Lipschitz in v on probe set")
    return out


def problem_from_config(section: Mapping[str, str]) -> BsdeProblem:
    """Build a problem from a ``[problem]`` config section of string values."""
    if "family" not in section:
        raise ProblemError("problem section needs a 'family' key")
    family = section["family"].strip()
    d = int(section.get("d", "1"))
    params: dict = {}
    for key in ("T", "a", "b", "rho", "beta", "V0"):
        if key in section:
            params[key] = float(section[key])
    if "c" in section:
        params["c"] = [float(v) for v in section["c"].split(",") if v.strip()]
    return builtin_problem(family, d, params)

