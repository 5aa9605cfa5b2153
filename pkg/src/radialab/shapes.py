"""Shape functions psi and the analytic accessories the limit theorems use.

A shape is always described through ``log psi`` so that ``u**d * psi(u)``
can be handled in the log domain. Non-compact shapes additionally carry
``Lambda = -log psi`` and its derivatives, from which

    L(u) = u * Lambda'(u),        M(u) = L(u) / log(u)

are derived. Compact shapes carry the supremum of their support ``u_star``
and, optionally, the boundary power law ``psi(u) ~ a (u_star - u)**b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, MissingTail, ShapeDomainError
from .numerics import GridSpec

ArrayFn = Callable[[np.ndarray], np.ndarray]

_FD_REL_STEP = 1e-6
_FD_REL_STEP_L = 1e-4


@dataclass(frozen=True)
class PowerTail:
    """Boundary behaviour ``psi(u) ~ a (u_star - u)**b`` as ``u -> u_star``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"tail coefficient a must be positive, got {self.a}")
        if not self.b > -1:
            raise ValueError(f"tail exponent b must exceed -1, got {self.b}")


@dataclass(frozen=True, eq=False)
class ShapeSpec:
    """Immutable description of a shape function.

    A shape is compact iff ``u_star`` is set; in that case any non-compact
    accessories are ignored. Callables must be numpy-vectorised.

    ``log_psi_gap(s)``, when given, returns ``log psi(u_star * (1 - s))``
    computed from the relative gap ``s`` itself, which keeps the boundary
    behaviour exact where ``u_star - u`` underflows relative to ``u_star``.
    """

    name: str
    log_psi: ArrayFn
    u_star: Optional[float] = None
    tail: Optional[PowerTail] = None
    lam: Optional[ArrayFn] = None
    lam_prime: Optional[ArrayFn] = None
    lam_second: Optional[ArrayFn] = None
    u_ddag: float = 0.0
    params: dict = field(default_factory=dict)
    log_psi_gap: Optional[ArrayFn] = None

    def __post_init__(self):
        if self.u_star is not None:
            if not self.u_star > 0:
                raise ValueError(f"u_star must be positive, got {self.u_star}")
        elif self.lam is None:
            raise ValueError("a non-compact shape needs Lambda (lam)")
        if self.u_ddag < 0:
            raise ValueError("u_ddag must be nonnegative")

    @property
    def kind(self) -> str:
        return "compact" if self.u_star is not None else "non-compact"

    @property
    def is_compact(self) -> bool:
        return self.u_star is not None

    @property
    def shape_id(self) -> str:
        if not self.params:
            return self.name
        inner = ";".join(f"{k}={_fmt(v)}" for k, v in self.params.items())
        return f"{self.name}[{inner}]"

    def descriptor(self) -> dict:
        return {"name": self.name, **{k: v for k, v in self.params.items()}}


def _fmt(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _arr(u) -> np.ndarray:
    return np.asarray(u, dtype=float)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


# --------------------------------------------------------------------------
# Accessors


def log_psi(shape: ShapeSpec, u):
    """Evaluate log psi(u); ``-inf`` where psi vanishes."""
    return _scalar_or_array(shape.log_psi(_arr(u)))


def lam(shape: ShapeSpec, u):
    _require_noncompact(shape, "Lambda")
    return _scalar_or_array(shape.lam(_arr(u)))


def lam_prime(shape: ShapeSpec, u):
    _require_noncompact(shape, "Lambda'")
    u = _arr(u)
    if shape.lam_prime is not None:
        return _scalar_or_array(shape.lam_prime(u))
    h = u * _FD_REL_STEP
    return _scalar_or_array((shape.lam(u + h) - shape.lam(u - h)) / (2 * h))


def big_L(shape: ShapeSpec, u):
    """L(u) = u * Lambda'(u)."""
    _require_noncompact(shape, "L")
    u = _arr(u)
    return _scalar_or_array(u * lam_prime(shape, u))


def big_L_prime(shape: ShapeSpec, u):
    """L'(u) = Lambda'(u) + u Lambda''(u), by central differences on L if needed."""
    _require_noncompact(shape, "L'")
    u = _arr(u)
    if shape.lam_prime is not None and shape.lam_second is not None:
        return _scalar_or_array(shape.lam_prime(u) + u * shape.lam_second(u))
    h = u * _FD_REL_STEP_L
    return _scalar_or_array((big_L(shape, u + h) - big_L(shape, u - h)) / (2 * h))


def big_M(shape: ShapeSpec, u):
    """M(u) = L(u) / log(u), defined for u > 1."""
    _require_noncompact(shape, "M")
    u = _arr(u)
    if np.any(u <= 1):
        raise ShapeDomainError("M(u) requires u > 1 (log u must be positive)")
    return _scalar_or_array(big_L(shape, u) / np.log(u))


def tail_params(shape: ShapeSpec) -> tuple[float, float, float]:
    """The declared boundary triple ``(a, b, u_star)`` of a compact shape."""
    if not shape.is_compact:
        raise ShapeDomainError(f"{shape.shape_id} is not compactly supported")
    if shape.tail is None:
        raise MissingTail(f"{shape.shape_id} has no declared boundary power law")
    return shape.tail.a, shape.tail.b, shape.u_star


def _require_noncompact(shape: ShapeSpec, what: str):
    if shape.is_compact:
        raise ShapeDomainError(f"{what} is only defined for non-compact shapes ({shape.shape_id})")


@dataclass(frozen=True)
class RegularityReport:
    L_increasing: bool
    M_eventually_increasing: bool
    M_exceeds_threshold: bool
    M_at_max: float
    threshold: float
    ratios: dict
    n_points: int

    @property
    def ratio_conditions(self) -> bool:
        ok = True
        for (eps, side), r in self.ratios.items():
            if side == "minus":
                ok &= bool(r <= 1.0 + 1e-9)
            else:
                ok &= bool(r >= 1.0 - 1e-9)
        return ok

    @property
    def passed(self) -> bool:
        return (
            self.L_increasing
            and self.M_eventually_increasing
            and self.M_exceeds_threshold
            and self.ratio_conditions
        )


def check_regularity(
    shape: ShapeSpec,
    grid: GridSpec,
    threshold: float = 10.0,
    epsilons: tuple[float, ...] = (0.1, 0.5),
) -> RegularityReport:
    """Finite-grid evidence for the L/M growth conditions.

    Nothing is raised; the report says which checks held on the grid. The
    ratio entries are ``M((1 -/+ eps) u_max) / M(u_max)``.
    """
    _require_noncompact(shape, "check_regularity")
    u = grid.points()
    u = u[u >= shape.u_ddag]
    with np.errstate(all="ignore"):
        L = np.asarray(big_L(shape, u), dtype=float)
    L_inc = bool(u.size >= 2 and np.all(np.isfinite(L)) and np.all(np.diff(L) > 0))

    um = u[u > 1.0]
    if um.size < 10:
        return RegularityReport(L_inc, False, False, math.nan, threshold, {}, int(u.size))
    with np.errstate(all="ignore"):
        M = np.asarray(big_M(shape, um), dtype=float)
    inc = np.diff(M) > 0
    bad = np.flatnonzero(~inc)
    start = bad[-1] + 1 if bad.size else 0
    # Require the final increasing run to cover at least a tenth of the grid.
    M_inc = bool(np.all(np.isfinite(M[-10:])) and (inc.size - start) >= max(1, inc.size // 10))
    u_max = float(um[-1])
    M_max = float(M[-1])
    ratios = {}
    for eps in epsilons:
        with np.errstate(all="ignore"):
            lo_u = (1 - eps) * u_max
            ratios[(eps, "minus")] = float(big_M(shape, lo_u) / M_max) if lo_u > 1 else math.nan
            ratios[(eps, "plus")] = float(big_M(shape, (1 + eps) * u_max) / M_max)
    return RegularityReport(
        L_increasing=L_inc,
        M_eventually_increasing=M_inc,
        M_exceeds_threshold=bool(M_max > threshold),
        M_at_max=M_max,
        threshold=threshold,
        ratios=ratios,
        n_points=int(u.size),
    )


def verify_tail(shape: ShapeSpec, s_lo: float = 1e-7, s_hi: float = 1e-3, n: int = 40):
    """Estimate ``(a, b)`` by log-log regression of psi near u_star.

    Only meant as a sanity check of a declared tail; boundary exponents are
    poorly conditioned to estimate.
    """
    if not shape.is_compact:
        raise ShapeDomainError("verify_tail needs a compact shape")
    dist = shape.u_star * np.geomspace(s_lo, s_hi, n)
    y = np.asarray(shape.log_psi(shape.u_star - dist), dtype=float)
    slope, intercept = np.polyfit(np.log(dist), y, 1)
    return float(math.exp(intercept)), float(slope)


# --------------------------------------------------------------------------
# Built-in families


def uniform_ball() -> ShapeSpec:
    def lp(u):
        u = _arr(u)
        return np.where(u <= 1.0, 0.0, -np.inf)

    return ShapeSpec("uniform_ball", lp, u_star=1.0, tail=PowerTail(1.0, 0.0),
                     log_psi_gap=lambda s: np.zeros_like(_arr(s)))


def triangle() -> ShapeSpec:
    def lp(u):
        u = _arr(u)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(u <= 1.0, np.log(2.0 - np.minimum(u, 1.0)), -np.inf)

    return ShapeSpec("triangle", lp, u_star=1.0, tail=PowerTail(1.0, 0.0),
                     log_psi_gap=lambda s: np.log1p(_arr(s)))


def power_tail(a: float = 1.0, b: float = 0.0, u_star: float = 1.0) -> ShapeSpec:
    """psi(u) = a (u_star - u)**b on [0, u_star]."""
    a, b, u_star = float(a), float(b), float(u_star)
    tail = PowerTail(a, b)
    log_a = math.log(a)

    def lp(u):
        u = _arr(u)
        gap = u_star - u
        with np.errstate(divide="ignore", invalid="ignore"):
            body = log_a + b * np.log(np.where(gap > 0, gap, 1.0))
        at_edge = log_a if b == 0 else (-np.inf if b > 0 else np.inf)
        return np.where(gap > 0, body, np.where(gap == 0, at_edge, -np.inf))

    def lp_gap(s):
        with np.errstate(divide="ignore"):
            return log_a + b * np.log(u_star * _arr(s))

    return ShapeSpec("power_tail", lp, u_star=u_star, tail=tail,
                     params={"a": a, "b": b, "u_star": u_star}, log_psi_gap=lp_gap)


def gaussian() -> ShapeSpec:
    return ShapeSpec(
        "gaussian",
        log_psi=lambda u: -0.5 * _arr(u) ** 2,
        lam=lambda u: 0.5 * _arr(u) ** 2,
        lam_prime=lambda u: _arr(u),
        lam_second=lambda u: np.ones_like(_arr(u)),
        u_ddag=0.0,
    )


def logpoly(a: float = 1.0, b: float = 0.0, c: float = 1.0,
            alpha: float = 0.0, beta: float = 1.0) -> ShapeSpec:
    """Lambda(u) = c * log(u + a)**alpha * (u + b)**beta.

    Where ``log(u + a) <= 0`` the power ``log(u+a)**alpha`` is only used when
    it is real and keeps psi integrable (alpha a nonnegative integer).
    Otherwise psi is continued by its limit at ``log(u + a) = 0``: 1 for
    alpha > 0 and 0 for alpha < 0. This only touches ``u < 1 - a``.
    """
    a, b, c, alpha, beta = (float(x) for x in (a, b, c, alpha, beta))
    if not a > 0:
        raise ConfigError(f"logpoly parameter a must be > 0, got {a}")
    if not b >= 0:
        raise ConfigError(f"logpoly parameter b must be >= 0, got {b}")
    if not c > 0:
        raise ConfigError(f"logpoly parameter c must be > 0, got {c}")
    if not beta > 0:
        raise ConfigError(f"logpoly parameter beta must be > 0, got {beta}")
    if not math.isfinite(alpha):
        raise ConfigError("logpoly parameter alpha must be finite")
    real_everywhere = alpha == 0 or (alpha > 0 and alpha.is_integer())

    def pieces(u):
        # f = log(u+a)**alpha and its first two derivatives, plus a mask of
        # points where psi is forced to zero.
        u = _arr(u)
        ell = np.log1p(u + (a - 1.0))
        w = u + a
        with np.errstate(all="ignore"):
            if alpha == 0:
                f = np.ones_like(u)
                f1 = np.zeros_like(u)
                f2 = np.zeros_like(u)
            else:
                f = ell ** alpha
                f1 = alpha * ell ** (alpha - 1) / w
                f2 = (alpha * (alpha - 1) * ell ** (alpha - 2) - alpha * ell ** (alpha - 1)) / w ** 2
        zero_psi = np.zeros(u.shape, dtype=bool)
        if not real_everywhere:
            degenerate = ell <= 0
            if alpha > 0:
                f = np.where(degenerate, 0.0, f)
                f1 = np.where(degenerate, 0.0, f1)
                f2 = np.where(degenerate, 0.0, f2)
            else:
                zero_psi = degenerate
        return u, f, f1, f2, zero_psi

    def lam_fn(u):
        u, f, _, _, zero = pieces(u)
        with np.errstate(all="ignore"):
            out = c * f * (u + b) ** beta
        # 0 * inf at u = 0 with b = 0 has limit 0 unless alpha + beta <= 0.
        out = np.where(np.isnan(out), 0.0 if alpha + beta > 0 else np.inf, out)
        return np.where(zero, np.inf, out)

    def lam_prime_fn(u):
        u, f, f1, _, zero = pieces(u)
        g = (u + b) ** beta
        with np.errstate(all="ignore"):
            g1 = beta * (u + b) ** (beta - 1)
            out = c * (f1 * g + f * g1)
        return np.where(zero, 0.0, out)

    def lam_second_fn(u):
        u, f, f1, f2, zero = pieces(u)
        with np.errstate(all="ignore"):
            g = (u + b) ** beta
            g1 = beta * (u + b) ** (beta - 1)
            g2 = beta * (beta - 1) * (u + b) ** (beta - 2)
            out = c * (f2 * g + 2 * f1 * g1 + f * g2)
        return np.where(zero, 0.0, out)

    return ShapeSpec(
        "logpoly",
        log_psi=lambda u: -lam_fn(u),
        lam=lam_fn,
        lam_prime=lam_prime_fn,
        lam_second=lam_second_fn,
        u_ddag=max(1.0, a, b) + 1.0,
        params={"a": a, "b": b, "c": c, "alpha": alpha, "beta": beta},
    )


_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("log", "log1p", "exp", "expm1", "sqrt", "sin", "cos", "tanh",
                 "arctan", "abs", "pi", "e", "minimum", "maximum", "where")
}


def from_lambda_expression(expr: str, u_ddag: float = 0.0) -> ShapeSpec:
    """Non-compact shape from a numpy expression for Lambda in the variable ``u``.

    Derivatives come from central differences.
    """
    try:
        code = compile(expr, "<shape-lambda>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse Lambda expression {expr!r}: {exc.msg}") from None
    bad = [n for n in code.co_names if n not in _EXPR_NAMESPACE and n != "u"]
    if bad:
        raise ConfigError(f"unknown names in Lambda expression: {', '.join(bad)}")

    def lam_fn(u):
        u = _arr(u)
        with np.errstate(all="ignore"):
            out = eval(code, {"__builtins__": {}}, {**_EXPR_NAMESPACE, "u": u})
        return np.broadcast_to(np.asarray(out, dtype=float), u.shape)

    try:
        lam_fn(np.array([1.0, 2.0]))
    except Exception as exc:  # noqa: BLE001 - any evaluation failure is a config problem
        raise ConfigError(f"cannot evaluate Lambda expression {expr!r}: {exc}") from None
    return ShapeSpec("custom", log_psi=lambda u: -lam_fn(u), lam=lam_fn,
                     u_ddag=float(u_ddag), params={"lambda": expr})


def scaled(shape: ShapeSpec, s: float) -> ShapeSpec:
    """The shape u -> psi(u / s)."""
    s = float(s)
    if not s > 0:
        raise ValueError("scale must be positive")
    params = {**shape.params, "scale": s}
    if shape.is_compact:
        tail = None
        if shape.tail is not None:
            tail = PowerTail(shape.tail.a * s ** (-shape.tail.b), shape.tail.b)
        # The relative gap is scale free, so log_psi_gap carries over as is.
        return ShapeSpec(shape.name, lambda u: shape.log_psi(_arr(u) / s),
                         u_star=shape.u_star * s, tail=tail, params=params,
                         log_psi_gap=shape.log_psi_gap)
    lp = shape.lam_prime
    ls = shape.lam_second
    return ShapeSpec(
        shape.name,
        log_psi=lambda u: shape.log_psi(_arr(u) / s),
        lam=lambda u: shape.lam(_arr(u) / s),
        lam_prime=None if lp is None else (lambda u: lp(_arr(u) / s) / s),
        lam_second=None if ls is None else (lambda u: ls(_arr(u) / s) / s ** 2),
        u_ddag=shape.u_ddag * s,
        params=params,
    )


BUILTINS = {
    "uniform_ball": uniform_ball,
    "triangle": triangle,
    "gaussian": gaussian,
    "logpoly": logpoly,
    "power_tail": power_tail,
}

_ALIASES = {"uniform": "uniform_ball", "ball": "uniform_ball", "normal": "gaussian",
            "power": "power_tail"}


def from_config(block: dict) -> ShapeSpec:
    """Build a shape from a config block such as ``{"kind": "logpoly", "beta": 2}``.

    ``kind`` may also be ``"custom"`` with a ``lambda`` expression.
    """
    block = dict(block)
    kind = block.pop("kind", None) or block.pop("name", None)
    if kind is None:
        raise ConfigError("shape block needs a 'kind'")
    kind = _ALIASES.get(str(kind).lower(), str(kind).lower())
    if kind == "custom":
        expr = block.pop("lambda", None)
        if expr is None:
            raise ConfigError("custom shape needs a 'lambda' expression")
        return from_lambda_expression(expr, **block)
    if kind not in BUILTINS:
        raise ConfigError(f"unknown shape {kind!r}; choose from {', '.join(BUILTINS)}")
    scale = block.pop("scale", None)
    try:
        shape = BUILTINS[kind](**{k: float(v) for k, v in block.items()})
    except TypeError as exc:
        raise ConfigError(f"bad parameters for shape {kind!r}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"shape {kind!r}: {exc}") from None
    return scaled(shape, float(scale)) if scale is not None else shape
