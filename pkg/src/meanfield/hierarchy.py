"""Scalar machinery of the weighted-norm hierarchy estimate.

With ``X_k(t) = int |f_{k,N}|^q exp(lambda(t) e_k)`` the hierarchy yields

    X_k(t) <= X_k(0) + k L int_0^t X_{k+1}(s) ds,

and this module evaluates the closed-form consequences of that recursion
together with a brute-force Picard solver used to check them.  Products
of large and small factors are formed in log space.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import BoundOverflow, ConfigError, ExponentViolation, OutOfRegime

LOG_MAX = math.log(np.finfo(float).max)


def lambda_schedule(Lambda: float, t):
    """``lambda(t) = 1 / (Lambda (1 + t))``."""
    if Lambda <= 0:
        raise ConfigError("Lambda must be positive")
    return 1.0 / (Lambda * (1.0 + np.asarray(t, dtype=float))) if np.ndim(t) else \
        1.0 / (Lambda * (1.0 + t))


def lambda_constraints(q: float, sigma: float):
    """The two lower bounds on ``Lambda`` needed to absorb the error terms."""
    if q < 2 or sigma <= 0:
        raise ConfigError("need q >= 2 and sigma > 0")
    first = q / (q - 1) * sigma**2
    second = q * (1 + 2 * ((q - 2) * q - 1) ** 2 / (q * sigma**2))
    return first, second


def lambda_min(q: float, sigma: float) -> float:
    return max(lambda_constraints(q, sigma))


def dual_exponent(q: float) -> float:
    return math.inf if q == 1 else q / (q - 1)


def default_theta(q: float, d: int) -> float:
    """``(q - 2) + q d / (2 q*)``: the two powers of ``lambda`` lost per step."""
    return (q - 2) + q * d / (2 * dual_exponent(q))


@dataclass(frozen=True)
class HierarchyParams:
    q: float = 2.0
    p: float = 2.0
    d: int = 1
    sigma: float = 1.0
    Lambda: float | None = None
    C_const: float = 1.0
    theta_exp: float | None = None
    K_lp_norm: float = 1.0
    F0: float = 1.0
    F: float = 1.0
    N: int = 10

    def __post_init__(self):
        if self.q < 2:
            raise ConfigError("q must be >= 2")
        if self.p <= 1:
            raise ConfigError("p must be > 1")
        if 1 / self.p + 1 / self.q > 1 + 1e-15:
            raise ExponentViolation(f"1/p + 1/q = {1 / self.p + 1 / self.q} > 1")
        if self.sigma <= 0 or self.C_const <= 0 or self.K_lp_norm < 0:
            raise ConfigError("need sigma > 0, C_const > 0, K_lp_norm >= 0")
        if self.F0 <= 0 or self.F <= 0 or self.N < 1:
            raise ConfigError("need F0 > 0, F > 0, N >= 1")
        if self.Lambda is None:
            object.__setattr__(self, "Lambda", lambda_min(self.q, self.sigma))
        elif self.Lambda < lambda_min(self.q, self.sigma) * (1 - 1e-12):
            raise ConfigError(f"Lambda = {self.Lambda} is below lambda_min = {lambda_min(self.q, self.sigma)}")
        if self.theta_exp is None:
            object.__setattr__(self, "theta_exp", default_theta(self.q, self.d))
        elif self.theta_exp <= 0:
            raise ConfigError("theta_exp must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def growth_constant(params: HierarchyParams) -> float:
    """``L = C lambda(1)^(-theta) ||K||_p^q``."""
    lam1 = lambda_schedule(params.Lambda, 1.0)
    return params.C_const * lam1 ** (-params.theta_exp) * params.K_lp_norm**params.q


def existence_time(L: float, F0: float, F: float) -> float:
    """``min(1, 1 / (4 L max(F0, F)))``; 1 when ``L = 0``."""
    if L < 0 or F0 <= 0 or F <= 0:
        raise ConfigError("need L >= 0 and F0, F > 0")
    if L == 0:
        return 1.0
    return min(1.0, 1.0 / (4.0 * L * max(F0, F)))


def log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def _check(logv, term):
    if logv > LOG_MAX:
        raise BoundOverflow(f"term {term} exceeds the float range (log = {logv:.1f})", term=term)
    return math.exp(logv)


def induction_bound(k: int, m: int, t: float, F0: float, L: float, tail_values,
                    tail_times=None) -> float:
    """Right side of the ``m``-step induction estimate for ``X_k(t)``.

    ``sum_{l=k}^m F0^l (L t)^(l-k) binom(l-1, k-1)
    + L^(m+1-k) m!/((k-1)!(m-k)!) int_0^t X_{m+1}(s) (t-s)^(m-k) ds``.

    ``tail_values`` samples ``X_{m+1}`` on ``tail_times`` (default: a
    uniform grid over ``[0, t]``) and the integral uses the trapezoidal
    rule; a scalar means a constant tail, integrated exactly.
    """
    if not 1 <= k <= m:
        raise ConfigError("need 1 <= k <= m")
    if t < 0 or L < 0 or F0 < 0:
        raise ConfigError("need t, L, F0 >= 0")
    total = 0.0
    lF0, lLt = _log(F0), _log(L * t)
    for l in range(k, m + 1):
        if l > k and lLt == -math.inf:
            break
        logv = l * lF0 + (l - k) * lLt + log_binom(l - 1, k - 1) if l > k else k * lF0
        if logv > -math.inf:
            total += _check(logv, l)
    coef = (m + 1 - k) * _log(L) + math.lgamma(m + 1) - math.lgamma(k) - math.lgamma(m - k + 1)
    if np.ndim(tail_values) == 0:
        c = float(tail_values)
        if c > 0 and t > 0 and L > 0:
            integral = (m - k + 1) * math.log(t) - math.log(m - k + 1) + math.log(c)
            total += _check(coef + integral, m + 1)
        return total
    vals = np.asarray(tail_values, dtype=float)
    s = np.linspace(0.0, t, vals.size) if tail_times is None else np.asarray(tail_times, dtype=float)
    if L == 0 or t == 0:
        return total
    integral = trapezoid(vals * (t - s) ** (m - k), s)
    if integral > 0:
        total += _check(coef + math.log(integral), m + 1)
    return total


def final_marginal_bound(k: int, N: int, F0: float, F: float, L: float, t: float) -> float:
    """``2^k F0^k + F^k 2^(2k-N-1)``, valid while ``4 L t max(F0, F) < 1``."""
    if not 1 <= k <= N:
        raise ConfigError("need 1 <= k <= N")
    if 4 * L * t * max(F0, F) >= 1:
        raise OutOfRegime(f"4 L t max(F0, F) = {4 * L * t * max(F0, F):.4g} >= 1")
    a = k * (math.log(2) + math.log(F0))
    b = k * math.log(F) + (2 * k - N - 1) * math.log(2)
    return _check(a, "2^k F0^k") + _check(b, "F^k 2^(2k-N-1)")


def uniqueness_decay(k: int, m: int, t: float, L_tilde: float, M_tilde: float) -> float:
    """``2^k M^k (2 L M t)^(m+1-k)`` for the difference of two solutions."""
    if m < k:
        raise ConfigError("need m >= k")
    base = 2 * L_tilde * M_tilde * t
    if base == 0:
        return 0.0
    return _check(k * math.log(2 * M_tilde) + (m + 1 - k) * math.log(base), "decay")


def binomial_bound_holds(l_max: int = 60) -> bool:
    """``binom(l-1, k-1) <= 2^(l-1)`` for all ``1 <= k <= l <= l_max``, in exact integers."""
    return all(math.comb(l - 1, k - 1) <= 2 ** (l - 1)
               for l in range(1, l_max + 1) for k in range(1, l + 1))


# --------------------------------------------------------------------------
# recursion traces and the Picard oracle


@dataclass
class RecursionTrace:
    """``values[i, j] = X_{k_min + i}(times[j])``."""

    times: np.ndarray
    values: np.ndarray
    k_min: int = 1
    L_used: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.times.size:
            raise ConfigError("values must have shape (levels, len(times))")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ConfigError("trace values must be finite and nonnegative")

    @property
    def k_max(self):
        return self.k_min + self.values.shape[0] - 1

    def X(self, k):
        return self.values[k - self.k_min]


def picard_oracle(k_max: int, t_end: float, L: float, initial, terminal: float,
                  J: int = 10_000, k_min: int = 1, tol: float = 1e-12,
                  max_iter: int = 1000) -> RecursionTrace:
    """Solve ``X_k(t) = X_k(0) + k L int_0^t X_{k+1}`` for ``k_min <= k < k_max``
    with ``X_{k_max}`` held at ``terminal``, by Picard iteration on a uniform grid.

    ``initial`` is a callable ``k -> X_k(0)`` or a scalar ``c`` meaning
    ``X_k(0) = c^k``.  Levels are updated from the top down inside each
    sweep, so the triangular system reaches its fixed point in one sweep;
    iteration stops when the relative change drops below ``tol``.
    """
    if k_max <= k_min:
        raise ConfigError("need k_max > k_min")
    times = np.linspace(0.0, t_end, J + 1)
    init = initial if callable(initial) else (lambda k, c=float(initial): c**k)
    levels = k_max - k_min + 1
    X = np.zeros((levels, J + 1))
    X[-1] = terminal
    for _ in range(max_iter):
        old = X.copy()
        for i in range(levels - 2, -1, -1):
            k = k_min + i
            X[i] = init(k) + k * L * cumulative_trapezoid(X[i + 1], times, initial=0.0)
        scale = np.maximum(np.abs(X), 1e-300)
        if np.max(np.abs(X - old) / scale) < tol:
            break
    return RecursionTrace(times, X, k_min, L)


@dataclass
class RecursionReport:
    """``margins[i, j] = allowed - X_k(t_j)`` for ``k = k_min + i``; negative means violated."""

    k_values: list
    times: np.ndarray
    margins: np.ndarray
    relative_margins: np.ndarray
    passed: bool
    rel_tol: float
    extra: dict = field(default_factory=dict)

    def worst(self):
        return float(self.relative_margins.min()) if self.relative_margins.size else 0.0


def verify_recursion(trace: RecursionTrace, L: float | None = None,
                     rel_tol: float = 1e-6) -> RecursionReport:
    """Check ``X_k(t) <= X_k(0) + k L int_0^t X_{k+1}`` along a trace.

    The integral uses the trapezoidal rule; the allowance is ``rel_tol``
    times the right side plus an estimate of the quadrature error
    (``h^2/12 * t * max|X''|`` from second differences).
    """
    if trace.values.shape[0] < 2:
        raise ConfigError("need at least two levels")
    L = trace.L_used if L is None else L
    t = trace.times
    ks, margins, rel = [], [], []
    for i in range(trace.values.shape[0] - 1):
        k = trace.k_min + i
        upper = trace.values[i + 1]
        integral = cumulative_trapezoid(upper, t, initial=0.0)
        rhs = trace.values[i, 0] + k * L * integral
        qerr = np.zeros_like(t)
        if t.size >= 3:
            h = np.diff(t)
            d2 = np.abs(np.diff(upper, 2)) / np.maximum(h[:-1] * h[1:], 1e-300)
            qerr = k * L * (h.max() ** 2 / 12) * t * float(d2.max())
        allowed = rhs * (1 + rel_tol) + qerr
        margin = allowed - trace.values[i]
        ks.append(k)
        margins.append(margin)
        rel.append(margin / np.maximum(np.abs(rhs), 1e-300))
    margins = np.array(margins)
    return RecursionReport(ks, t, margins, np.array(rel), bool(np.all(margins >= 0)), rel_tol)


# --------------------------------------------------------------------------
# summary tables


def bound_table(params: HierarchyParams, t: float | None = None, k_values=None) -> dict:
    """Everything the ``bounds`` report shows for one parameter set."""
    L = growth_constant(params)
    T = existence_time(L, params.F0, params.F)
    t = T / 2 if t is None else t
    ks = list(k_values or range(1, params.N + 1))
    rows = []
    for k in ks:
        try:
            fb = final_marginal_bound(k, params.N, params.F0, params.F, L, t)
        except OutOfRegime:
            fb = None
        ib = induction_bound(k, params.N - 1, t, params.F0, L, params.F**params.N) if k < params.N else None
        rows.append({"k": k, "final_bound": fb, "induction_bound": ib})
    return {
        "params": params.to_dict(),
        "lambda_min": lambda_min(params.q, params.sigma),
        "lambda_constraints": list(lambda_constraints(params.q, params.sigma)),
        "lambda_schedule": [{"t": s, "lambda": lambda_schedule(params.Lambda, s)}
                            for s in np.linspace(0.0, 1.0, 5).tolist()],
        "L": L,
        "T_star": T,
        "t": t,
        "table": rows,
    }
