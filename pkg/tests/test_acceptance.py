"""Acceptance gate: one test per criterion, each checked against an oracle
that does not share code with the implementation under test."""

import math
import time

import numpy as np
from scipy import integrate, special, stats

from radialab import shapes as sh
from radialab.cli import main
from radialab.distributions import (
    asym_log_inv_cd,
    build_law,
    deterministic_ks,
    example1_ud_asymptotic,
    limit_law,
    mode_radius,
)
from radialab.experiments import make_config, run_experiment
from radialab.numerics import kolmogorov_critical, ks_statistic
from radialab.sampling import sample_magnitudes, sample_vectors


def gaussian_log_inv_cd(d):
    """log of int_0^inf u^d exp(-u^2/2) du = 2^((d-1)/2) Gamma((d+1)/2)."""
    return (d - 1) / 2 * math.log(2) + special.gammaln((d + 1) / 2)


def strictly_decreasing(xs):
    return all(b < a for a, b in zip(xs, xs[1:]))


def fmt(xs):
    return ", ".join(f"{x:.3g}" for x in xs)


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_gaussian_exactness(criterion):
    start = time.perf_counter()
    worst_c = worst_u = worst_nu = 0.0
    for d in range(1, 51):
        law = build_law(sh.gaussian(), d)
        exact = gaussian_log_inv_cd(d)
        # At d = 1 the exact value is log 1 = 0, so the error is scaled by
        # max(|exact|, 1) to keep the relative criterion meaningful.
        worst_c = max(worst_c, abs(law.log_inv_cd - exact) / max(abs(exact), 1.0))
        worst_u = max(worst_u, abs(law.u_d / math.sqrt(d) - 1))
        worst_nu = max(worst_nu, abs(law.nu_d / (2 * d) - 1))
    elapsed = time.perf_counter() - start
    ok = worst_c <= 1e-9 and worst_u <= 1e-10 and worst_nu <= 1e-10 and elapsed < 5
    criterion(1, "Gaussian log(1/c_d), u_d, nu_d for d = 1..50", ok,
              f"rel err c={worst_c:.2e}, u_d={worst_u:.2e}, nu_d={worst_nu:.2e}; {elapsed:.2f}s")
    assert ok


# -- 2 ----------------------------------------------------------------------


def gap_cdf_oracle(name, d, s):
    """P(1 - U_d <= s) in closed form via regularized incomplete Beta functions.

    uniform_ball: U ~ Beta(d+1, 1). triangle: u^d (2-u) = u^d + u^d (1-u) is a
    mixture of Beta(d+1, 1) and Beta(d+1, 2) with weights 1/(d+1) and
    1/((d+1)(d+2)). power tail 3(1-u)^2: U ~ Beta(d+1, 3).
    """
    s = np.clip(s, 0.0, 1.0)
    if name == "uniform_ball":
        return special.betainc(1, d + 1, s)
    if name == "triangle":
        w1, w2 = 1 / (d + 1), 1 / ((d + 1) * (d + 2))
        return (w1 * special.betainc(1, d + 1, s) + w2 * special.betainc(2, d + 1, s)) / (w1 + w2)
    return special.betainc(3, d + 1, s)


def test_criterion_2_compact_gamma_limit(criterion):
    start = time.perf_counter()
    shapes = {"uniform_ball": sh.uniform_ball(), "triangle": sh.triangle(), "power_tail": sh.power_tail(3, 2)}
    dims = (10, 100, 1000)
    ok = True
    details = []
    for name, shape in shapes.items():
        ks, oracle_ks = [], []
        for d in dims:
            law = build_law(shape, d)
            lim = limit_law(law)
            ks.append(deterministic_ks(law, lim))
            p = (np.arange(100_000) + 0.5) / 100_000
            t = lim.ppf(p)
            ref = special.gammainc(lim.k, lim.rate * t)
            oracle_ks.append(float(np.max(np.abs(gap_cdf_oracle(name, d, t / d) - ref))))
        agree = max(abs(a - b) for a, b in zip(ks, oracle_ks))
        this = strictly_decreasing(ks) and ks[-1] <= 0.01 and agree < 1e-9
        ok &= this
        details.append(f"{name}: {fmt(ks)} (oracle gap {agree:.1e})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    criterion(2, "compact KS to Gamma(b+1, 1/u_star) decreasing, <= 0.01 at d=1e3", ok,
              "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


# -- 3 ----------------------------------------------------------------------


def cdf_by_scipy(law, u):
    """Independent CDF route: scipy adaptive quadrature of exp(log_pdf)."""
    sd = law.u_d / math.sqrt(law.nu_d)
    lo = max(0.0, law.u_d - 40 * sd)
    pieces = [lo] + [x for x in law.u_d + sd * np.array([-10, -4, -1, 0, 1, 4, 10]) if lo < x < u] + [u]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(lambda x: math.exp(law.log_pdf(x)), a, b, epsabs=1e-15, epsrel=1e-12,
                                limit=200)[0]
    return total


def test_criterion_3_noncompact_normal_limit(criterion):
    start = time.perf_counter()
    shapes = {"gaussian": sh.gaussian()}
    for beta in (1, 2, 3):
        for alpha in (0, 1):
            s = sh.logpoly(alpha=alpha, beta=beta)
            shapes[s.shape_id] = s
    dims = (10, 100, 1000, 10_000)
    ok = True
    details = []
    worst_oracle = 0.0
    for name, shape in shapes.items():
        ks = []
        for d in dims:
            law = build_law(shape, d)
            lim = limit_law(law)
            ks.append(deterministic_ks(law, lim))
            # Cross-check the exact CDF that feeds the KS at points spread
            # over the bulk of the law.
            t = np.array([-3.0, -1.0, 0.0, 0.5, 2.0])
            u = law.u_d * (1 + t / math.sqrt(law.nu_d))
            if name == "gaussian":
                oracle = stats.chi(d + 1).cdf(u)
            else:
                oracle = np.array([cdf_by_scipy(law, x) for x in u])
            worst_oracle = max(worst_oracle, float(np.max(np.abs(law.cdf(u) - oracle))))
        this = strictly_decreasing(ks) and ks[-1] <= 0.02
        ok &= this
        details.append(f"{name}: {fmt(ks)}")
    elapsed = time.perf_counter() - start
    ok &= worst_oracle < 1e-9 and elapsed < 120
    criterion(3, "non-compact KS to N(0,1) decreasing, <= 0.02 at d=1e4", ok,
              "; ".join(details) + f"; cdf oracle gap {worst_oracle:.1e}; {elapsed:.1f}s")
    assert ok


# -- 4 ----------------------------------------------------------------------


def test_criterion_4_constant_asymptotics(criterion):
    start = time.perf_counter()
    dims = (100, 1000, 10_000)
    # Lambda(u) = u^2 for logpoly(beta=2), so int u^d exp(-u^2) = Gamma((d+1)/2) / 2.
    closed = {
        "gaussian": (sh.gaussian(), gaussian_log_inv_cd, 0.01),
        "logpoly_beta2": (sh.logpoly(beta=2), lambda d: special.gammaln((d + 1) / 2) - math.log(2), 0.05),
    }
    ok = True
    details = []
    for name, (shape, exact_fn, bound) in closed.items():
        gaps, oracle_gaps, quad_err = [], [], []
        for d in dims:
            law = build_law(shape, d)
            asym = asym_log_inv_cd(law)
            gaps.append(abs(asym - law.log_inv_cd))
            oracle_gaps.append(abs(asym - exact_fn(d)))
            quad_err.append(abs(law.log_inv_cd - exact_fn(d)) / abs(exact_fn(d)))
        this = strictly_decreasing(gaps) and gaps[-1] <= bound and max(quad_err) < 1e-10
        this &= strictly_decreasing(oracle_gaps) and oracle_gaps[-1] <= bound
        ok &= this
        details.append(f"{name}: |delta| {fmt(gaps)}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    criterion(4, "asymptotic log(1/c_d) gap decreasing; <= 0.01 Gaussian, <= 0.05 logpoly(beta=2) at d=1e4",
              ok, "; ".join(details) + f"; {elapsed:.2f}s")
    assert ok


# -- 5 ----------------------------------------------------------------------


def logpoly_L(u, a, b, c, alpha, beta):
    """u Lambda'(u) for Lambda = c log(u+a)^alpha (u+b)^beta, written out by hand."""
    ell = math.log(u + a)
    return c * u * (alpha * ell ** (alpha - 1) / (u + a) * (u + b) ** beta
                    + ell ** alpha * beta * (u + b) ** (beta - 1))


def test_criterion_5_example1_growth(criterion):
    start = time.perf_counter()
    ok = True
    details = []
    worst_resid = 0.0
    for beta in (1, 2, 3):
        params = dict(a=1.0, b=0.0, c=1.0, alpha=0.0, beta=float(beta))
        shape = sh.logpoly(**params)
        ratios = []
        for d in (10, 100, 1e4, 1e6, 1e8):
            ud = mode_radius(shape, d)
            worst_resid = max(worst_resid, abs(logpoly_L(ud, **params) / d - 1))
            ratios.append(ud / example1_ud_asymptotic(params, d))
        ok &= all(0.999 <= r <= 1.001 for r in ratios)
        details.append(f"alpha=0,beta={beta}: max |r-1| {max(abs(r - 1) for r in ratios):.1e}")
    for alpha, beta in ((1, 1), (-1, 2)):
        params = dict(a=1.0, b=0.0, c=1.0, alpha=float(alpha), beta=float(beta))
        shape = sh.logpoly(**params)
        dev = []
        for d in (1e4, 1e6, 1e8):
            ud = mode_radius(shape, d)
            worst_resid = max(worst_resid, abs(logpoly_L(ud, **params) / d - 1))
            dev.append(abs(ud / example1_ud_asymptotic(params, d) - 1))
        ok &= strictly_decreasing(dev)
        details.append(f"alpha={alpha},beta={beta}: |r-1| {fmt(dev)}")
    elapsed = time.perf_counter() - start
    ok &= worst_resid < 1e-10 and elapsed < 10
    criterion(5, "u_d vs closed-form growth law", ok,
              "; ".join(details) + f"; root residual {worst_resid:.1e}; {elapsed:.2f}s")
    assert ok


# -- 6 ----------------------------------------------------------------------


def test_criterion_6_sampling_correctness(criterion):
    start = time.perf_counter()
    n = 100_000
    bound = kolmogorov_critical(n, 0.01)
    builtins = {name: factory() for name, factory in sh.BUILTINS.items()}
    worst = 0.0
    ok = True
    details = []
    for name, shape in builtins.items():
        for d in (3, 100):
            law = build_law(shape, d)
            x = sample_magnitudes(law, n, master_seed=20_231_101, stream_id=int(d)).values
            stat = ks_statistic(np.sort(law.cdf(x)), lambda p: p)
            if name == "gaussian":
                # Second route: the exact chi law with d + 1 degrees of freedom.
                stat = max(stat, ks_statistic(np.sort(x), stats.chi(d + 1).cdf))
            worst = max(worst, stat)
            ok &= stat < bound
    details.append(f"worst PIT KS {worst:.4f} vs bound {bound:.4f}")
    vb = sample_vectors(build_law(sh.gaussian(), 9), n, master_seed=20_231_101, stream_id=0)
    coord_ks = [ks_statistic(np.sort(vb.values[:, j]), special.ndtr) for j in range(vb.ambient_dim)]
    ok &= max(coord_ks) < bound
    details.append(f"Gaussian d=9 coordinate KS max {max(coord_ks):.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    criterion(6, "PIT uniformity for every built-in at d in {3, 100}; Gaussian vector coordinates",
              ok, "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


# -- 7 ----------------------------------------------------------------------


def power_trend_ok(power, se):
    """Nonincreasing, except for at most one rise within 2 combined standard errors."""
    rises = [(i, power[i + 1] - power[i]) for i in range(len(power) - 1) if power[i + 1] > power[i]]
    if len(rises) > 1:
        return False
    return all(rise <= 2 * math.hypot(se[i], se[i + 1]) for i, rise in rises)


def test_criterion_7_indistinguishability(criterion):
    start = time.perf_counter()
    dims = [2, 10, 50, 250]
    cfg = make_config("indistinguishability", dims=dims, n=[200], replicates=500, seed=7)
    rep = run_experiment(cfg)
    power = [r.value for r in rep.values("power")]
    se = [r.value for r in rep.values("power_se")]
    null_cfg = make_config("indistinguishability", shapes=[{"kind": "uniform_ball"}] * 2,
                           dims=[2, 250], n=[200], replicates=500, seed=7)
    null = [r.value for r in run_experiment(null_cfg).values("power")]
    elapsed = time.perf_counter() - start
    ok = (power_trend_ok(power, se) and power[-1] <= 0.15
          and all(abs(p - 0.05) <= 0.03 for p in null) and elapsed < 180)
    criterion(7, "two-sample KS power ball vs triangle fades with d at n=200", ok,
              f"power {fmt(power)} (se {fmt(se)}); null {fmt(null)}; {elapsed:.1f}s")
    assert ok


# -- 8 ----------------------------------------------------------------------


REPRO_RUNS = [
    ["sweep", "--shape", "logpoly", "--params", "alpha=1", "--dims", "10,100", "--n", "2000", "--replicates", "3"],
    ["limit-ks", "--shape", "triangle", "--dims", "10,100", "--n", "1000", "--replicates", "2"],
    ["constant-check", "--shape", "gaussian", "--dims", "100,1000"],
    ["ud-check", "--shape", "logpoly", "--params", "alpha=1,beta=1", "--dims", "1e4,1e6"],
    ["indistinguishability", "--dims", "2,50", "--n", "100", "--replicates", "20", "--format", "json"],
]


def test_criterion_8_reproducibility(criterion, tmp_path, monkeypatch, capsys):
    start = time.perf_counter()
    out = tmp_path / "report.out"
    identical = []
    for argv in REPRO_RUNS:
        blobs = []
        for threads in ("1", "8"):
            monkeypatch.setenv("RADIALAB_THREADS", threads)
            assert main(argv + ["--seed", "99", "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
            out.unlink()
        identical.append(blobs[0] == blobs[1])
    capsys.readouterr()
    elapsed = time.perf_counter() - start
    ok = all(identical)
    criterion(8, "reports byte-identical with RADIALAB_THREADS=1 and 8", ok,
              f"{sum(identical)}/{len(identical)} experiments identical; {elapsed:.1f}s")
    assert ok
