"""Shape-agnostic numerical kernels.

Everything here works on plain callables and arrays: log-domain adaptive
quadrature, bracketed root finding for increasing functions, and the
distribution functions / goodness-of-fit statistics used by the experiments.
Integrands are passed as *log* densities so that u**d * psi(u) stays
representable at very large d.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import BracketFailure, DivergentIntegral, EmptySample, NonConvergence

# Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
_XK_HALF = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK_HALF = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG_HALF = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

XK = np.concatenate([-_XK_HALF[:-1], _XK_HALF[::-1]])
WK = np.concatenate([_WK_HALF[:-1], _WK_HALF[::-1]])
WG = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes of the half table.
WG[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n_points: int
    spacing: str = "linear"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"grid requires lo < hi, got {self.lo} >= {self.hi}")
        if self.n_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.spacing not in ("linear", "log"):
            raise ValueError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "log" and self.lo <= 0:
            raise ValueError("log spacing requires lo > 0")

    def points(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.lo, self.hi, self.n_points)
        return np.linspace(self.lo, self.hi, self.n_points)


@dataclass(frozen=True)
class QuadResult:
    log_value: float
    est_rel_error: float
    n_evals: int

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _logsumexp(values) -> float:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return -math.inf
    m = arr.max()
    if m == -math.inf:
        return -math.inf
    return float(m + math.log(np.exp(arr - m).sum()))


def _eval_log(f_log, x: np.ndarray) -> np.ndarray:
    y = np.asarray(f_log(x), dtype=float)
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape).astype(float)
    if np.isnan(y).any():
        raise ValueError(f"log-integrand returned NaN near x={x[np.isnan(y)][0]!r}")
    return y


def kronrod_log_panels(f_log, a: np.ndarray, b: np.ndarray):
    """Vectorised 15-point Kronrod rule over many panels at once.

    Returns ``(log_integral, log_error)`` arrays, one entry per panel
    ``[a_i, b_i]``. The error uses the QUADPACK heuristic on the embedded
    7-point Gauss estimate.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    center = 0.5 * (a + b)
    x = center[:, None] + half[:, None] * XK[None, :]
    y = _eval_log(f_log, x)
    m = y.max(axis=1)
    if (m == np.inf).any():
        raise DivergentIntegral("log-integrand is +inf inside the integration range")
    finite = np.isfinite(m)
    safe_m = np.where(finite, m, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(y - safe_m[:, None])
    e[~finite] = 0.0
    k = e @ WK
    g = e @ WG
    mean = k / 2.0
    resasc = np.abs(e - mean[:, None]) @ WK
    resabs = e @ WK
    diff = np.abs(k - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(resasc > 0, np.minimum(1.0, (200.0 * diff / resasc) ** 1.5), 1.0)
    err = np.maximum(resasc * scale, 50.0 * _EPS * resabs)
    err = np.where(resasc > 0, err, diff)
    with np.errstate(divide="ignore"):
        log_h = np.log(np.abs(half))
        log_k = np.where(k > 0, safe_m + log_h + np.log(np.where(k > 0, k, 1.0)), -np.inf)
        log_e = np.where(err > 0, safe_m + log_h + np.log(np.where(err > 0, err, 1.0)), -np.inf)
    log_k[~finite] = -np.inf
    log_e[~finite] = -np.inf
    return log_k, log_e


def _adaptive(f_log, edges, tol, log_ref=-math.inf, max_panels=4000):
    """Adaptive bisection over the panels defined by ``edges``.

    Stops once the summed error estimate is below ``tol`` times the larger of
    the local total and ``exp(log_ref)``.
    """
    edges = np.asarray(edges, dtype=float)
    lk, le = kronrod_log_panels(f_log, edges[:-1], edges[1:])
    n_evals = 15 * len(lk)
    heap = [(-le[i], edges[i], edges[i + 1], lk[i]) for i in range(len(lk))]
    heapq.heapify(heap)
    log_tol = math.log(tol)
    while True:
        total = _logsumexp([h[3] for h in heap])
        err = _logsumexp([-h[0] for h in heap])
        if err == -math.inf or err <= log_tol + max(total, log_ref):
            return total, err, n_evals
        if len(heap) >= max_panels:
            raise NonConvergence(
                f"adaptive quadrature exceeded {max_panels} panels "
                f"(rel. error {math.exp(err - total) if total > -math.inf else math.inf:.3g})"
            )
        # Split the worst few panels in one vectorised pass.
        n_split = max(1, min(len(heap) // 8, 64))
        worst = [heapq.heappop(heap) for _ in range(min(n_split, len(heap)))]
        lo = np.array([w[1] for w in worst])
        hi = np.array([w[2] for w in worst])
        mid = 0.5 * (lo + hi)
        if np.any((mid <= lo) | (mid >= hi)):
            raise NonConvergence("quadrature panel width reached machine resolution")
        a = np.concatenate([lo, mid])
        b = np.concatenate([mid, hi])
        lk, le = kronrod_log_panels(f_log, a, b)
        n_evals += 15 * len(lk)
        for i in range(len(lk)):
            heapq.heappush(heap, (-le[i], a[i], b[i], lk[i]))


def integrate_log(
    f_log: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    tol: float = 1e-10,
    breakpoints: Sequence[float] = (),
    max_panels: int = 4000,
    max_tail_panels: int = 1100,
) -> QuadResult:
    """Return ``log ∫ exp(f_log(u)) du`` over ``interval``.

    ``f_log`` must accept a numpy array. ``breakpoints`` seed the initial
    panel layout and should bracket the region carrying the mass (for a
    peaked integrand: a few points on either side of the peak at the scale of
    its width). An infinite upper limit is handled by marching panels of
    doubling width past the last breakpoint until three successive panels
    each carry less than ``tol/10`` of the running total.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    if not tol > 0:
        raise ValueError("tol must be positive")
    infinite = math.isinf(hi)
    inner = sorted(float(p) for p in breakpoints if lo < p < hi and math.isfinite(p))
    if infinite:
        finite_hi = inner[-1] if inner else lo + 1.0
        inner = inner[:-1] if inner else []
    else:
        finite_hi = hi
    edges = [lo, *inner, finite_hi]
    total, err, n_evals = _adaptive(f_log, edges, tol, max_panels=max_panels)

    if infinite:
        x = finite_hi
        width = max(finite_hi - lo, 1.0)
        small_run = 0
        growth_run = 0
        prev = -math.inf
        log_small = math.log(tol / 10.0)
        for _ in range(max_tail_panels):
            nxt = x + width
            if not math.isfinite(nxt) or nxt > 1e300:
                break
            lv, le, ne = _adaptive(f_log, [x, nxt], tol, log_ref=total, max_panels=max_panels)
            n_evals += ne
            total = np.logaddexp(total, lv)
            err = np.logaddexp(err, le)
            small_run = small_run + 1 if lv <= log_small + total else 0
            growth_run = growth_run + 1 if (lv >= prev and lv > -math.inf) else 0
            if small_run >= 3:
                break
            if growth_run >= 50:
                raise DivergentIntegral(
                    f"tail mass is not decaying past u={x:.6g}; integral appears infinite"
                )
            prev = lv
            x = nxt
            width *= 2.0
        else:
            raise DivergentIntegral("tail panel budget exhausted before the integrand decayed")
        if small_run < 3:
            raise DivergentIntegral(
                f"integrand still carries mass near u={x:.3g}; integral appears infinite"
            )

    if total == -math.inf:
        return QuadResult(-math.inf, 0.0, n_evals)
    return QuadResult(float(total), float(math.exp(err - total)), n_evals)


def find_root_increasing(
    g: Callable[[float], float],
    target: float,
    bracket_seed: float = 1.0,
    max_doublings: int = 200,
) -> float:
    """Solve ``g(u) = target`` for a strictly increasing ``g`` on ``u > 0``.

    The bracket is grown geometrically from ``bracket_seed`` and the root is
    then polished with Brent's method (bisection + secant/inverse quadratic
    steps).
    """
    if not bracket_seed > 0:
        raise ValueError("bracket_seed must be positive")
    lo = hi = float(bracket_seed)
    g_hi = g(hi)
    if g_hi == target:
        return hi
    if g_hi < target:
        for _ in range(max_doublings):
            lo, hi = hi, hi * 2.0
            g_hi = g(hi)
            if g_hi >= target:
                break
        else:
            raise BracketFailure(
                f"g stays below target {target:.6g} up to u={hi:.3g}; "
                "g may be bounded (non-integrable shape?)"
            )
    else:
        g_lo = g_hi
        for _ in range(max_doublings):
            hi, lo = lo, lo / 2.0
            g_lo = g(lo)
            if g_lo <= target:
                break
        else:
            raise BracketFailure(f"g stays above target {target:.6g} down to u={lo:.3g}")
    root = optimize.brentq(lambda u: g(u) - target, lo, hi, xtol=1e-300, rtol=4 * _EPS, maxiter=1000)
    resid = abs(g(root) - target)
    if resid > max(1e-10 * abs(target), 1e-12):
        raise NonConvergence(f"root residual {resid:.3g} too large at u={root!r}")
    return float(root)


def ks_statistic(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample KS distance between sorted ``samples`` and ``cdf``."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise EmptySample("KS statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - f)), np.max(np.abs((i - 1) / n - f))))


def ks_two_sample(x, y) -> float:
    """Two-sample KS statistic sup |F_x - F_y|."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        raise EmptySample("two-sample KS needs non-empty samples")
    pooled = np.concatenate([x, y])
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fy = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def kolmogorov_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value c(alpha)/sqrt(n)."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c / math.sqrt(n)


def two_sample_critical(n: int, m: int, c_alpha: float = 1.358) -> float:
    return c_alpha * math.sqrt((n + m) / (n * m))


def gamma_cdf(x, k: float, rate: float):
    """Gamma(k, rate) distribution function, the regularized P(k, rate*x)."""
    if not (k > 0 and rate > 0):
        raise ValueError("gamma_cdf needs k > 0 and rate > 0")
    x = np.asarray(x, dtype=float)
    out = special.gammainc(k, rate * np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


def normal_cdf(x):
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def normal_ppf(p):
    out = special.ndtri(np.asarray(p, dtype=float))
    return float(out) if out.ndim == 0 else out
