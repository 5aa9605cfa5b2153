"""The magnitude law with density c_d u**d psi(u) and its limit laws.

A :class:`RadialLaw` caches the normalising constant, the concentration
radius and scale, and a tabulated CDF dense enough to serve as the exact
law for inverse-CDF sampling and for deterministic KS distances.

Compact shapes are integrated in the variable ``v = ((u_star - u)/u_star)**(b+1)``,
which removes an integrable boundary singularity when ``-1 < b < 0`` and puts
the O(1/d) boundary layer on a scale the panels can resolve. Non-compact shapes
are integrated in ``u`` with panels laid out around ``u_d`` at the width
``u_d / sqrt(nu_d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from . import shapes as sh
from .errors import BracketFailure, MissingTail, NumericalError, RegularityFailure
from .numerics import (
    GridSpec,
    QuadResult,
    find_root_increasing,
    gamma_cdf,
    integrate_log,
    kronrod_log_panels,
    normal_cdf,
)
from .shapes import ShapeSpec

TABLE_POINTS = 4096
CORE_HALF_WIDTH = 12.0
TAIL_MASS = 1e-14
COMPACT_S_MIN = 1e-13
QUANTILE_RESID = 1e-9
NEWTON_STEPS = 3

_NONCOMPACT_BREAKS = (-40, -20, -12, -8, -5, -3, -2, -1, 0, 1, 2, 3, 5, 8, 12, 20, 40)
_COMPACT_BREAKS = (1e-3, 1e-2, 0.1, 0.5, 1, 2, 4, 8, 16, 32, 64, 128)


def mode_radius(shape: ShapeSpec, d: float) -> float:
    """u_d = L^{-1}(d), the mode of u**d psi(u) for a non-compact shape."""
    if shape.is_compact:
        raise sh.ShapeDomainError("mode_radius is defined for non-compact shapes only")
    seed = max(shape.u_ddag, 1.0)
    return find_root_increasing(lambda u: sh.big_L(shape, u), float(d), bracket_seed=seed)


def concentration_scale(shape: ShapeSpec, d: float, u_d: Optional[float] = None) -> float:
    """nu_d = u_d L'(u_d)."""
    if u_d is None:
        u_d = mode_radius(shape, d)
    return float(u_d * sh.big_L_prime(shape, u_d))


def example1_ud_asymptotic(params: Union[ShapeSpec, Mapping], d: float) -> float:
    """Closed-form growth of u_d for Lambda(u) = c log(u+a)**alpha (u+b)**beta."""
    if isinstance(params, ShapeSpec):
        params = params.params
    c, alpha, beta = float(params["c"]), float(params["alpha"]), float(params["beta"])
    if not d > 1:
        raise ValueError("the asymptotic formula needs d > 1")
    return (c ** (-1 / beta) * beta ** ((alpha - 1) / beta)
            * math.log(d) ** (-alpha / beta) * d ** (1 / beta))


@dataclass(frozen=True)
class LimitLaw:
    """Limit distribution together with its standardising map.

    ``family`` is ``"gamma"`` (compact; t = d (u_star - u)) or ``"normal"``
    (non-compact; t = sqrt(nu_d) (u / u_d - 1)).
    """

    family: str
    d: float
    u_ref: float
    k: Optional[float] = None
    rate: Optional[float] = None
    nu: Optional[float] = None

    def standardize(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "gamma":
            t = self.d * (self.u_ref - u)
        else:
            t = math.sqrt(self.nu) * (u / self.u_ref - 1.0)
        return float(t) if t.ndim == 0 else t

    def cdf(self, t):
        if self.family == "gamma":
            return gamma_cdf(t, self.k, self.rate)
        return normal_cdf(t)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        if self.family == "gamma":
            out = special.gammaincinv(self.k, p) / self.rate
        else:
            out = special.ndtri(p)
        return float(out) if out.ndim == 0 else out

    def describe(self) -> str:
        if self.family == "gamma":
            return f"Gamma(shape={self.k:g}, rate={self.rate:g})"
        return "N(0,1)"


class RadialLaw:
    """Distribution of U_d = |X_d| with density c_d u**d psi(u).

    Build with :func:`build_law`. Instances are immutable.
    """

    def __init__(self, shape, d, log_inv_cd, u_d, nu_d, quad, tol, _coord, _table):
        self.shape: ShapeSpec = shape
        self.d = float(d)
        self.log_inv_cd = float(log_inv_cd)
        self.u_d = float(u_d)
        self.nu_d = None if nu_d is None else float(nu_d)
        self.quad: QuadResult = quad
        self.tol = tol
        self._coord = _coord
        (self.u_grid, self.cdf_grid, self.sf_grid, self._log_total) = _table
        for arr in (self.u_grid, self.cdf_grid, self.sf_grid):
            arr.setflags(write=False)
        self._inverse = None

    def __repr__(self):
        return (f"RadialLaw(shape={self.shape.shape_id}, d={self.d:g}, "
                f"log_inv_cd={self.log_inv_cd:.12g}, u_d={self.u_d:.12g}, nu_d={self.nu_d})")

    @property
    def descriptor(self) -> dict:
        return {**self.shape.descriptor(), "d": self.d}

    @property
    def table_log_mass(self) -> float:
        """log of the unnormalised mass summed over the CDF table."""
        return self._log_total + self._coord.offset

    # -- densities -------------------------------------------------------

    def log_pdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -self.log_inv_cd + self.d * np.log(u) + self.shape.log_psi(u)
        out = np.where(u < 0, -np.inf, out)
        out = np.where(np.isnan(out), -np.inf, out)
        return float(out) if out.ndim == 0 else out

    def pdf(self, u):
        return np.exp(self.log_pdf(u))

    def _table_log_pdf(self, u):
        # Density normalised by the table mass, consistent with cdf().
        return self.log_pdf(u) + self.log_inv_cd - self.table_log_mass

    # -- distribution function ------------------------------------------

    def _log_mass(self, u1, u2):
        """log of the unnormalised mass on [u1, u2] (elementwise, u1 <= u2)."""
        return self._coord.log_mass(np.atleast_1d(u1), np.atleast_1d(u2))

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u).astype(float)
        out = np.empty_like(flat)
        g = self.u_grid
        below = flat <= g[0]
        above = flat >= g[-1]
        mid = ~(below | above)
        out[below] = [self._coord.mass_below(x, self._log_total) for x in flat[below]]
        out[above] = [1.0 - self._coord.mass_above(x, self._log_total) for x in flat[above]]
        if mid.any():
            x = flat[mid]
            j = np.searchsorted(g, x, side="right") - 1
            part = np.exp(self._log_mass(g[j], x) - self._log_total)
            out[mid] = np.minimum(self.cdf_grid[j] + part, 1.0)
        return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)

    def sf(self, u):
        """Survival function, accurate in the upper tail."""
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u).astype(float)
        out = np.empty_like(flat)
        g = self.u_grid
        below = flat <= g[0]
        above = flat >= g[-1]
        mid = ~(below | above)
        out[below] = [1.0 - self._coord.mass_below(x, self._log_total) for x in flat[below]]
        out[above] = [self._coord.mass_above(x, self._log_total) for x in flat[above]]
        if mid.any():
            x = flat[mid]
            j = np.searchsorted(g, x, side="right") - 1
            part = np.exp(self._log_mass(x, g[j + 1]) - self._log_total)
            out[mid] = np.minimum(self.sf_grid[j + 1] + part, 1.0)
        return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)

    def gap_cdf(self, s):
        """P(1 - U/u_star <= s) for a compact law, computed in the gap variable.

        Unlike ``sf(u_star * (1 - s))`` this keeps full relative precision for
        gaps far below the spacing of doubles near ``u_star``.
        """
        if not self.shape.is_compact:
            raise sh.ShapeDomainError("gap_cdf is only defined for compact laws")
        s = np.asarray(s, dtype=float)
        flat = np.clip(np.atleast_1d(s).astype(float), 0.0, 1.0)
        coord = self._coord
        gaps = coord.s_grid[::-1]
        below = self.sf_grid[::-1]
        j = np.clip(np.searchsorted(gaps, flat, side="right") - 1, 0, gaps.size - 2)
        part = np.exp(coord.log_mass_v(gaps[j] ** (coord.b + 1.0), flat ** (coord.b + 1.0))
                      - self._log_total)
        out = np.minimum(np.where(flat >= 1.0, 1.0, below[j] + part), 1.0)
        return float(out[0]) if s.ndim == 0 else out.reshape(s.shape)

    def quantile(self, p):
        """Generalised inverse of :meth:`cdf`.

        Monotone cubic interpolation of the table, with a bisection on the
        exact CDF wherever the interpolated value misses by more than 1e-9.
        """
        p = np.asarray(p, dtype=float)
        flat = np.atleast_1d(p).astype(float)
        if np.any((flat < 0) | (flat > 1) | np.isnan(flat)):
            raise ValueError("quantile needs p in [0, 1]")
        out = np.empty_like(flat)
        out[flat == 0] = 0.0
        out[flat == 1] = self.u_grid[-1]
        inner = (flat > 0) & (flat < 1)
        if inner.any():
            out[inner] = self._quantile_inner(flat[inner])
        return float(out[0]) if p.ndim == 0 else out.reshape(p.shape)

    def _quantile_inner(self, p):
        if self._inverse is None:
            # Knots with denormal-scale increments overflow the interpolant's
            # slopes; quantiles down there go through the bisection instead.
            keep = np.concatenate([[True], np.diff(self.cdf_grid) > 0]) & (self.cdf_grid > 1e-100)
            self._inverse = PchipInterpolator(self.cdf_grid[keep], self.u_grid[keep],
                                              extrapolate=False)
        lo_cdf, hi_cdf = self.cdf_grid[0], self.cdf_grid[-1]
        q = self._inverse(np.clip(p, lo_cdf, hi_cdf))
        q = np.where(np.isnan(q), self.u_grid[0], q)
        # Newton steps on the exact CDF, repeated only where the step is still
        # above rounding level; bisection below guards the result.
        active = np.ones(q.shape, dtype=bool)
        for _ in range(NEWTON_STEPS):
            qa, pa = q[active], p[active]
            dens = np.exp(self._table_log_pdf(qa))
            step = np.where(dens > 0, self._excess(qa, pa) / np.where(dens > 0, dens, 1.0), 0.0)
            cand = qa - step
            ok = (cand > self.u_grid[0]) & (cand < self.u_grid[-1]) & np.isfinite(cand)
            q[active] = np.where(ok, cand, qa)
            moving = ok & (np.abs(step) > 1e-14 * np.abs(qa))
            active[active] = moving
            if not active.any():
                break
        resid = np.abs(self._excess(q, p))
        bad = resid > np.minimum(QUANTILE_RESID, 1e-6 * np.minimum(p, 1 - p))
        if bad.any():
            q[bad] = self._bisect(p[bad])
        return q

    def _excess(self, q, p):
        """F(q) - p, taken from the survival function in the upper half.

        1 - p is exact for p > 1/2, so the upper tail keeps relative rather
        than absolute precision.
        """
        out = np.empty_like(q)
        upper = p > 0.5
        if upper.any():
            out[upper] = (1.0 - p[upper]) - self.sf(q[upper])
        if (~upper).any():
            out[~upper] = self.cdf(q[~upper]) - p[~upper]
        return out

    def _bisect(self, p):
        g = self.u_grid
        j = np.searchsorted(self.cdf_grid, p, side="left") - 1
        j = np.clip(j, 0, g.size - 2)
        lo = g[j].copy()
        hi = g[j + 1].copy()
        # Targets beyond the table edges fall back to an open-ended search.
        lo = np.where(p <= self.cdf_grid[0], 0.0, lo)
        hi = np.where(p >= self.cdf_grid[-1], self._coord.upper_search(g[-1]), hi)
        for _ in range(1100):
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break
            go_right = self._excess(mid, p) < 0
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        return hi


# --------------------------------------------------------------------------
# Integration coordinates


class _NonCompactCoord:
    """Integration in u, with log integrand measured relative to the mode."""

    def __init__(self, shape, d, u_d, nu_d, tol):
        self.shape, self.d, self.u_d, self.tol = shape, d, u_d, tol
        self.sigma = u_d / math.sqrt(nu_d)
        self.log_psi_ud = float(shape.log_psi(np.array(u_d)))
        self.offset = d * math.log(u_d) + self.log_psi_ud

    def f(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.d * np.log(u / self.u_d) + self.shape.log_psi(u) - self.log_psi_ud
        return np.where(u <= 0, -np.inf, out)

    def breakpoints(self):
        return [self.u_d + k * self.sigma for k in _NONCOMPACT_BREAKS]

    def log_mass(self, u1, u2):
        out = np.full(u1.shape, -np.inf)
        ok = u2 > u1
        if ok.any():
            out[ok], _ = kronrod_log_panels(self.f, u1[ok], u2[ok])
        return out

    def _tail(self, lo, hi):
        brk = [b for b in self.breakpoints() if lo < b < hi]
        return integrate_log(self.f, (lo, hi), tol=1e-8, breakpoints=brk).log_value

    def mass_below(self, x, log_total):
        if x <= 0:
            return 0.0
        return float(math.exp(self._tail(0.0, x) - log_total))

    def mass_above(self, x, log_total):
        if math.isinf(x):
            return 0.0
        return float(math.exp(self._tail(x, math.inf) - log_total))

    def upper_search(self, top):
        return top + 64 * self.sigma + top

    def table(self, log_inv_rel):
        s = self.sigma
        lo_core = self.u_d - CORE_HALF_WIDTH * s
        hi_core = self.u_d + CORE_HALF_WIDTH * s
        if lo_core <= 0:
            core = np.linspace(0.0, hi_core, TABLE_POINTS)
        else:
            core = np.linspace(lo_core, hi_core, TABLE_POINTS)
        cutoff = log_inv_rel + math.log(TAIL_MASS)

        right = []
        x, step = core[-1], 0.25 * s
        while True:
            batch = []
            for _ in range(8):
                x += step
                step *= 1.15
                batch.append(x)
            right.extend(batch)
            if self._tail(x, math.inf) < cutoff:
                break
            if len(right) > 2000:
                raise NumericalError("CDF table right tail did not close")
        left = []
        if core[0] > 0:
            x, step = core[0], 0.25 * s
            while True:
                batch = []
                for _ in range(8):
                    x -= step
                    step *= 1.15
                    if x <= 0:
                        break
                    batch.append(x)
                left.extend(batch)
                if x <= 0:
                    left.append(0.0)
                    break
                if self._tail(0.0, x) < cutoff:
                    break
                if len(left) > 2000:
                    raise NumericalError("CDF table left tail did not close")
        grid = np.concatenate([np.array(left[::-1]), core, np.array(right)])
        cell = self.log_mass(grid[:-1], grid[1:])
        below = self._tail(0.0, grid[0]) if grid[0] > 0 else -math.inf
        above = self._tail(grid[-1], math.inf)
        return grid, cell, below, above


class _CompactCoord:
    """Integration in v = s**(b+1), s = 1 - u/u_star."""

    def __init__(self, shape, d, tol):
        self.shape, self.d, self.tol = shape, d, tol
        self.u_star = shape.u_star
        self.b = shape.tail.b if shape.tail is not None else 0.0
        self.p = 1.0 / (self.b + 1.0)
        self.log_jac = math.log(self.u_star / (self.b + 1.0))
        self.offset = d * math.log(self.u_star)

    def f(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = v ** self.p
            if self.shape.log_psi_gap is not None:
                lp = self.shape.log_psi_gap(s)
            else:
                lp = self.shape.log_psi(self.u_star * (1.0 - s))
            out = self.d * np.log1p(-s) + lp + self.log_jac + (self.p - 1.0) * np.log(v)
        return np.where((v <= 0) | (v > 1) | np.isnan(out), -np.inf, out)

    def v_of_u(self, u):
        s = np.clip((self.u_star - np.asarray(u, dtype=float)) / self.u_star, 0.0, 1.0)
        return s ** (self.b + 1.0)

    def breakpoints(self):
        return [(t / self.d) ** (self.b + 1.0) for t in _COMPACT_BREAKS if t / self.d < 1]

    def log_mass_v(self, va, vb):
        va, vb = np.atleast_1d(va), np.atleast_1d(vb)
        out = np.full(va.shape, -np.inf)
        ok = vb > va
        if ok.any():
            out[ok], _ = kronrod_log_panels(self.f, va[ok], vb[ok])
        return out

    def log_mass(self, u1, u2):
        # v decreases in u, so [u1, u2] maps to [v(u2), v(u1)].
        return self.log_mass_v(self.v_of_u(u2), self.v_of_u(u1))

    def mass_below(self, x, log_total):
        return 0.0

    def mass_above(self, x, log_total):
        return 0.0

    def upper_search(self, top):
        return top

    def table(self, log_inv_rel):
        s = np.concatenate([np.geomspace(1.0, COMPACT_S_MIN, TABLE_POINTS - 1), [0.0]])
        self.s_grid = s
        grid = self.u_star * (1.0 - s)
        grid[0] = 0.0
        grid[-1] = self.u_star
        cell = self.log_mass(grid[:-1], grid[1:])
        return grid, cell, -math.inf, -math.inf


def _assemble_table(grid, log_cells, log_below, log_above):
    parts = np.concatenate([[log_below], log_cells, [log_above]])
    m = parts.max()
    w = np.exp(parts - m)
    total = w.sum()
    log_total = m + math.log(total)
    cum = np.cumsum(w[:-1]) / total
    rcum = np.cumsum(w[::-1][:-1])[::-1] / total
    cdf = np.minimum(cum, 1.0)
    sf = np.minimum(rcum, 1.0)
    return grid, cdf, sf, float(log_total)


# --------------------------------------------------------------------------
# Construction


def build_law(shape: ShapeSpec, d: float, tol: float = 1e-10) -> RadialLaw:
    """Normalise u**d psi(u), locate its concentration radius and tabulate the CDF."""
    d = float(d)
    if not d >= 1:
        raise ValueError(f"build_law needs d >= 1, got {d}")
    if shape.is_compact:
        coord = _CompactCoord(shape, d, tol)
        quad = integrate_log(coord.f, (0.0, 1.0), tol=tol, breakpoints=coord.breakpoints())
        u_d, nu_d = shape.u_star, None
    else:
        try:
            u_d = mode_radius(shape, d)
        except BracketFailure:
            # L never reaches d: u**d psi(u) keeps growing. Let the quadrature
            # confirm the divergence; it raises DivergentIntegral if so.
            integrate_log(
                lambda u: d * np.log(u) + shape.log_psi(u), (0.0, math.inf), tol=tol
            )
            raise
        nu_d = concentration_scale(shape, d, u_d)
        if not (math.isfinite(nu_d) and nu_d > 0):
            raise RegularityFailure(f"nu_d = {nu_d} at u_d = {u_d}; L is not increasing there")
        coord = _NonCompactCoord(shape, d, u_d, nu_d, tol)
        quad = integrate_log(coord.f, (0.0, math.inf), tol=tol, breakpoints=coord.breakpoints())
    if not math.isfinite(quad.log_value):
        raise NumericalError(f"u^d psi(u) integrates to zero for {shape.shape_id}")
    table = _assemble_table(*coord.table(quad.log_value))
    return RadialLaw(shape, d, quad.log_value + coord.offset, u_d, nu_d, quad, tol, coord, table)


def asym_log_inv_cd(law: RadialLaw) -> float:
    """Leading-order asymptotic value of log(1/c_d).

    Non-compact: 0.5 log(2 pi / nu_d) + (d+1) log u_d + log psi(u_d).
    Compact: log(a u_star**(d+b+1) B(d+1, b+1)).
    """
    d = law.d
    if law.shape.is_compact:
        a, b, u_star = sh.tail_params(law.shape)
        log_beta = special.gammaln(d + 1) + special.gammaln(b + 1) - special.gammaln(d + b + 2)
        return float(math.log(a) + log_beta + (d + b + 1) * math.log(u_star))
    return float(0.5 * math.log(2 * math.pi / law.nu_d) + (d + 1) * math.log(law.u_d)
                 + law.shape.log_psi(np.array(law.u_d)))


def regularity_grid(shape: ShapeSpec, u_d: float) -> GridSpec:
    lo = max(shape.u_ddag, 1.0) * (1 + 1e-6)
    hi = max(100.0 * u_d, 1e3 * lo)
    return GridSpec(lo, hi, 2000, "log")


def limit_law(law: RadialLaw, check: bool = True) -> LimitLaw:
    if law.shape.is_compact:
        if law.shape.tail is None:
            raise MissingTail(f"{law.shape.shape_id}: the Gamma limit needs a declared tail")
        b = law.shape.tail.b
        return LimitLaw("gamma", law.d, law.shape.u_star, k=b + 1.0, rate=1.0 / law.shape.u_star)
    if check:
        report = sh.check_regularity(law.shape, regularity_grid(law.shape, law.u_d))
        if not report.passed:
            raise RegularityFailure(f"{law.shape.shape_id} fails the L/M regularity checks: {report}")
    return LimitLaw("normal", law.d, law.u_d, nu=law.nu_d)


def deterministic_ks(law: RadialLaw, limit: Optional[LimitLaw] = None,
                     n_points: int = 100_000) -> float:
    """sup_t |P(T_d <= t) - F_limit(t)| for the standardised exact law T_d.

    Evaluated on ``n_points`` limit-law quantiles, so no sampling is involved.
    """
    limit = limit or limit_law(law)
    p = (np.arange(n_points) + 0.5) / n_points
    t = limit.ppf(p)
    ref = limit.cdf(t)
    if limit.family == "gamma":
        exact = law.gap_cdf(t / (limit.d * limit.u_ref))
    else:
        u = limit.u_ref * (1.0 + t / math.sqrt(limit.nu))
        exact = np.where(u <= 0, 0.0, law.cdf(np.maximum(u, 0.0)))
    return float(np.max(np.abs(exact - ref)))
