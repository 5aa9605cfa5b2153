"""Experiment runners producing tabular, reproducible reports.

Each runner turns one of the concentration / weak-limit statements into a
table of ``(experiment, shape_id, d, n, replicate, statistic, value)`` rows.
Rows computed per replicate carry the replicate index; per-cell aggregates
(deterministic KS, normalising constants, power estimates) use replicate -1,
and statistics that do not depend on the sample size use n = 0.

Work is fanned out over a thread pool capped by ``RADIALAB_THREADS``; every
random draw is keyed by ``(master_seed, stream_id)`` and rows are sorted
before writing, so reports are byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import shapes as sh
from .distributions import (
    RadialLaw,
    asym_log_inv_cd,
    build_law,
    deterministic_ks,
    example1_ud_asymptotic,
    limit_law,
    mode_radius,
)
from .errors import ConfigError
from .numerics import ks_statistic, ks_two_sample, two_sample_critical
from .sampling import SampleBatch, sample_magnitudes, transform_to_limit, write_batch

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

EXPERIMENT_NAMES = ("sweep", "limit-ks", "constant-check", "ud-check", "indistinguishability")
CSV_HEADER = "experiment,shape_id,d,n,replicate,statistic,value"
SWEEP_EPSILONS = (0.01, 0.05, 0.1)
KS_C_ALPHA = 1.358

_DEFAULTS = {
    "sweep": {"dims": [10, 100, 1000], "n": [10_000], "replicates": 1},
    "limit-ks": {"dims": [10, 100, 1000, 10_000], "n": [10_000], "replicates": 1},
    "constant-check": {"dims": [100, 1000, 10_000], "n": [0], "replicates": 1},
    "ud-check": {"dims": [1e4, 1e6, 1e8], "n": [0], "replicates": 1},
    "indistinguishability": {"dims": [2, 10, 50, 250], "n": [200], "replicates": 500},
}
_DEFAULT_SHAPES = {
    "indistinguishability": [{"kind": "uniform_ball"}, {"kind": "triangle"}],
}


@dataclass
class ExperimentConfig:
    experiment: str
    shapes: list = field(default_factory=lambda: [{"kind": "gaussian"}])
    d_grid: list = field(default_factory=list)
    n: list = field(default_factory=list)
    replicates: int = 1
    master_seed: int = 0
    tol: float = 1e-10
    output: Optional[str] = None
    format: str = "csv"
    dump_samples: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENT_NAMES:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENT_NAMES)}"
            )
        if not self.d_grid:
            raise ConfigError("d grid must not be empty")
        if any(not (isinstance(d, (int, float)) and math.isfinite(d)) for d in self.d_grid):
            raise ConfigError("d grid must contain finite numbers")
        if any(b <= a for a, b in zip(self.d_grid, self.d_grid[1:])):
            raise ConfigError(f"d grid must be strictly increasing, got {self.d_grid}")
        min_d = 1.0
        if self.d_grid[0] < min_d or (self.experiment == "ud-check" and self.d_grid[0] <= 1):
            raise ConfigError(f"every d must be >= 1 (> 1 for ud-check), got {self.d_grid[0]}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        sampled = self.experiment in ("sweep", "limit-ks", "indistinguishability")
        if not self.n or (sampled and any(int(k) < 1 for k in self.n)):
            raise ConfigError(f"n must be a positive count, got {self.n}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        want = 2 if self.experiment == "indistinguishability" else 1
        if len(self.shapes) != want:
            raise ConfigError(f"{self.experiment} needs exactly {want} shape(s), got {len(self.shapes)}")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Row:
    experiment: str
    shape_id: str
    d: float
    n: int
    replicate: int
    statistic: str
    value: float

    def sort_key(self):
        return (self.shape_id, self.d, self.n, self.replicate, self.statistic)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list

    def __post_init__(self):
        self.rows = sorted(self.rows, key=Row.sort_key)

    def values(self, statistic: str, shape_id: Optional[str] = None) -> list:
        return [r for r in self.rows if r.statistic == statistic
                and (shape_id is None or r.shape_id == shape_id)]

    def to_csv(self) -> str:
        cfg = json.dumps(self.config.as_dict(), sort_keys=True)
        lines = [
            "# radialab report",
            f"# config: {cfg}",
            f"# seed: {self.config.master_seed}",
            CSV_HEADER,
        ]
        for r in self.rows:
            lines.append(",".join([
                r.experiment,
                _csv_field(r.shape_id),
                "%.17g" % r.d,
                str(r.n),
                str(r.replicate),
                r.statistic,
                "%.17g" % r.value,
            ]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "config": self.config.as_dict(),
            "seed": self.config.master_seed,
            "rows": [asdict(r) for r in self.rows],
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    def render(self) -> str:
        return self.to_json() if self.config.format == "json" else self.to_csv()

    def write(self, path) -> Path:
        """Write atomically: temp file in the target directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", newline="\n") as fh:
                fh.write(self.render())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path


def _csv_field(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def read_csv_report(text: str) -> list:
    """Parse the rows of a CSV report back into :class:`Row` objects."""
    import csv
    import io

    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    return [Row(r["experiment"], r["shape_id"], float(r["d"]), int(r["n"]),
                int(r["replicate"]), r["statistic"], float(r["value"])) for r in reader]


# --------------------------------------------------------------------------
# Execution plumbing


def worker_count() -> int:
    raw = os.environ.get("RADIALAB_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"RADIALAB_THREADS must be an integer, got {raw!r}") from None
    if k < 0:
        raise ConfigError("RADIALAB_THREADS must be >= 0")
    return k or (os.cpu_count() or 1)


def _pmap(fn: Callable, items: list) -> list:
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _Context:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.shapes = [sh.from_config(block) for block in config.shapes]
        self._laws: dict = {}

    def build_laws(self):
        keys = [(i, float(d)) for i in range(len(self.shapes)) for d in self.config.d_grid]
        laws = _pmap(lambda k: build_law(self.shapes[k[0]], k[1], tol=self.config.tol), keys)
        self._laws = dict(zip(keys, laws))

    def law(self, shape_index: int, d: float) -> RadialLaw:
        return self._laws[(shape_index, float(d))]

    def stream_id(self, replicate: int, shape_index: int) -> int:
        return replicate * len(self.shapes) + shape_index

    def draw(self, shape_index, d, n, replicate) -> SampleBatch:
        law = self.law(shape_index, d)
        batch = sample_magnitudes(law, n, self.config.master_seed,
                                  self.stream_id(replicate, shape_index))
        if self.config.dump_samples:
            out = Path(self.config.dump_samples)
            out.mkdir(parents=True, exist_ok=True)
            write_batch(out / sample_filename(self.config.experiment,
                                              self.shapes[shape_index].shape_id, d, n, replicate),
                        batch)
        return batch

    def cells(self, with_n=True):
        ns = [int(k) for k in self.config.n] if with_n else [0]
        return [(float(d), n, r) for d in self.config.d_grid for n in ns
                for r in range(self.config.replicates)]


def sample_filename(experiment: str, shape_id: str, d: float, n: int, replicate: int) -> str:
    safe = "".join(c if c.isalnum() or c in "-_.=" else "_" for c in shape_id)
    return f"{experiment}__{safe}__d{'%.17g' % d}__n{n}__r{replicate}.radb"


def _row(cfg, shape_id, d, n, rep, stat, value) -> Row:
    return Row(cfg.experiment, shape_id, float(d), int(n), int(rep), stat, float(value))


def _flatten(chunks) -> list:
    return [row for chunk in chunks for row in chunk]


# --------------------------------------------------------------------------
# Runners


def sweep_statistics(values: np.ndarray, u_ref: float, epsilons=SWEEP_EPSILONS) -> dict:
    ratio = np.asarray(values, dtype=float) / u_ref
    stats = {
        "mean_ratio": float(ratio.mean()),
        "sd_ratio": float(ratio.std(ddof=1)) if ratio.size > 1 else 0.0,
    }
    for eps in epsilons:
        stats[f"p_exceed_{eps:g}"] = float(np.mean(np.abs(ratio - 1.0) > eps))
    return stats


def run_concentration_sweep(config: ExperimentConfig) -> ExperimentReport:
    """Empirical concentration of U_d / u_ref around 1 along the d grid."""
    config.validate()
    ctx = _Context(config)
    ctx.build_laws()
    shape_id = ctx.shapes[0].shape_id

    def cell(c):
        d, n, rep = c
        law = ctx.law(0, d)
        batch = ctx.draw(0, d, n, rep)
        stats = sweep_statistics(batch.values, law.u_d)
        return [_row(config, shape_id, d, n, rep, k, v) for k, v in stats.items()]

    return ExperimentReport(config, _flatten(_pmap(cell, ctx.cells())))


def run_limit_ks(config: ExperimentConfig) -> ExperimentReport:
    """KS distance of the standardised magnitude to its limit law.

    Emits a sampled KS per replicate and the deterministic KS between the
    exact standardised law and the limit (n = 0, replicate = -1).
    """
    config.validate()
    ctx = _Context(config)
    ctx.build_laws()
    shape_id = ctx.shapes[0].shape_id
    limits = {d: limit_law(ctx.law(0, d)) for d in map(float, config.d_grid)}

    def cell(c):
        d, n, rep = c
        limit = limits[d]
        t = np.sort(transform_to_limit(ctx.draw(0, d, n, rep), limit))
        return [_row(config, shape_id, d, n, rep, "ks_sampled", ks_statistic(t, limit.cdf))]

    def exact(d):
        return [_row(config, shape_id, d, 0, -1, "ks_deterministic",
                     deterministic_ks(ctx.law(0, d), limits[d]))]

    rows = _flatten(_pmap(cell, ctx.cells())) + _flatten(_pmap(exact, list(limits)))
    return ExperimentReport(config, rows)


def run_constant_check(config: ExperimentConfig) -> ExperimentReport:
    """Quadrature log(1/c_d) against its leading-order asymptotic value."""
    config.validate()
    ctx = _Context(config)
    ctx.build_laws()
    shape_id = ctx.shapes[0].shape_id

    def cell(d):
        law = ctx.law(0, d)
        asym = asym_log_inv_cd(law)
        return [
            _row(config, shape_id, d, 0, -1, "log_inv_cd", law.log_inv_cd),
            _row(config, shape_id, d, 0, -1, "asym_log_inv_cd", asym),
            _row(config, shape_id, d, 0, -1, "delta", asym - law.log_inv_cd),
            _row(config, shape_id, d, 0, -1, "quad_rel_error", law.quad.est_rel_error),
        ]

    return ExperimentReport(config, _flatten(_pmap(cell, list(map(float, config.d_grid)))))


def run_ud_asymptotic_check(config: ExperimentConfig) -> ExperimentReport:
    """Ratio of the numerically solved u_d to the closed-form growth law."""
    config.validate()
    block = config.shapes[0]
    shape = sh.from_config(block)
    if shape.name != "logpoly":
        raise ConfigError("ud-check needs a logpoly shape")
    shape_id = shape.shape_id

    def cell(d):
        ud = mode_radius(shape, d)
        asym = example1_ud_asymptotic(shape, d)
        return [
            _row(config, shape_id, d, 0, -1, "mode_radius", ud),
            _row(config, shape_id, d, 0, -1, "ud_asymptotic", asym),
            _row(config, shape_id, d, 0, -1, "ratio", ud / asym),
        ]

    return ExperimentReport(config, _flatten(_pmap(cell, list(map(float, config.d_grid)))))


def run_indistinguishability(config: ExperimentConfig) -> ExperimentReport:
    """Monte Carlo power of the two-sample KS test between two shapes."""
    config.validate()
    ctx = _Context(config)
    ctx.build_laws()
    pair_id = f"{ctx.shapes[0].shape_id} vs {ctx.shapes[1].shape_id}"

    def cell(c):
        d, n, rep = c
        x = ctx.draw(0, d, n, rep).values
        y = ctx.draw(1, d, n, rep).values
        stat = ks_two_sample(x, y)
        reject = float(stat > two_sample_critical(n, n, KS_C_ALPHA))
        return [
            _row(config, pair_id, d, n, rep, "ks_two_sample", stat),
            _row(config, pair_id, d, n, rep, "reject", reject),
        ]

    rows = _flatten(_pmap(cell, ctx.cells()))
    rejects: dict = {}
    for r in rows:
        if r.statistic == "reject":
            rejects.setdefault((r.d, r.n), []).append(r.value)
    for (d, n), vals in rejects.items():
        power = float(np.mean(vals))
        se = math.sqrt(power * (1 - power) / len(vals))
        rows.append(_row(config, pair_id, d, n, -1, "power", power))
        rows.append(_row(config, pair_id, d, n, -1, "power_se", se))
    return ExperimentReport(config, rows)


RUNNERS = {
    "sweep": run_concentration_sweep,
    "limit-ks": run_limit_ks,
    "constant-check": run_constant_check,
    "ud-check": run_ud_asymptotic_check,
    "indistinguishability": run_indistinguishability,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    config.validate()
    return RUNNERS[config.experiment](config)


# --------------------------------------------------------------------------
# Configuration loading


def parse_params(text: str) -> dict:
    """``"a=1,beta=2"`` -> ``{"a": 1.0, "beta": 2.0}``."""
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"malformed parameter {item!r}; expected key=value")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"parameter {key.strip()!r} must be numeric, got {val!r}") from None
    return out


def parse_number_list(text: str, kind=float) -> list:
    try:
        return [kind(float(x)) if kind is int else kind(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def load_config_file(path) -> dict:
    """Flatten a TOML config into keyword overrides for :func:`make_config`."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    exp = doc.get("experiment", {})
    out: dict = {}
    for key in ("name", "dims", "n", "replicates", "seed", "tol"):
        if key in exp:
            out[key] = exp[key]
    shape = doc.get("shape")
    if isinstance(shape, dict):
        if "A" in shape or "B" in shape:
            out["shapes"] = [shape[k] for k in ("A", "B") if k in shape]
        else:
            out["shapes"] = [shape]
    output = doc.get("output", {})
    for key, dest in (("path", "output"), ("format", "format"), ("dump_samples", "dump_samples")):
        if key in output:
            out[dest] = output[key]
    return out


def make_config(experiment: str, **overrides) -> ExperimentConfig:
    """Assemble a validated config from defaults plus overrides.

    Recognised keys: ``shapes``, ``dims``, ``n``, ``replicates``, ``seed``,
    ``tol``, ``output``, ``format``, ``dump_samples``.
    """
    if experiment not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENT_NAMES)}")
    defaults = _DEFAULTS[experiment]

    def pick(key, default):
        value = overrides.get(key)
        return default if value is None else value

    dims = pick("dims", defaults["dims"])
    n = pick("n", defaults["n"])
    if isinstance(n, (int, float)):
        n = [n]
    if isinstance(dims, (int, float)):
        dims = [dims]
    shapes = pick("shapes", _DEFAULT_SHAPES.get(experiment, [{"kind": "gaussian"}]))
    try:
        cfg = ExperimentConfig(
            experiment=experiment,
            shapes=[dict(s) for s in shapes],
            d_grid=[float(d) for d in dims],
            n=[int(k) for k in n],
            replicates=int(pick("replicates", defaults["replicates"])),
            master_seed=int(pick("seed", 0)),
            tol=float(pick("tol", 1e-10)),
            output=overrides.get("output"),
            format=pick("format", "csv"),
            dump_samples=overrides.get("dump_samples"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from None
    # Fail on bad shape parameters before any work starts.
    for block in cfg.shapes:
        sh.from_config(block)
    return cfg.validate()
