"""Experiment driver: seeded sample loops, parameter sweeps, timing profiles
and CSV/JSON result tables.

Every (sweep value, sample) pair gets one channel that all requested
methods consume, so method comparisons are paired. Seeds are derived from a
stable hash of (master seed, sweep value, sample index), so extending a
sweep never changes the samples already drawn.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import gmml
from . import sysmetrics as sm
from .chanmodel import ChannelPair, CorruptionSpec, corrupt_csi, draw_channel
from .config import SystemConfig, dbm_to_watt
from .errors import DegenerateInputError, NumericFailure

log = logging.getLogger(__name__)

SWEEP_KINDS = ("power", "ris_elements", "antennas", "cee", "convergence", "timing", "width", "depth")
METHODS = ("GMML", "GML", "ML", "AO", "RandomPhase", "UpperBound")
LEARNED = ("GMML", "GML", "ML")
TIMING_METHODS = ("GMML", "AO")
COLUMNS = ("value", "method", "mean_se", "std_se", "mean_time_s", "n", "failures")
TIMING_COLUMN = "mean_time_s"
SCHEMA_VERSION = 1

# sweeps whose value changes the channel dimensions; the others reuse the
# same channel draws at every sweep point
_DIMENSIONAL = ("ris_elements", "antennas", "timing")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    values: tuple[float, ...]
    n_samples: int = 20
    methods: tuple[str, ...] = ("GMML", "AO", "RandomPhase")
    base: SystemConfig = field(default_factory=SystemConfig)
    hyper: gmml.GmmlHyper = field(default_factory=gmml.GmmlHyper)
    seed: int = 0
    restarts: int = 20
    repeats: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}; expected one of {SWEEP_KINDS}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.values:
            raise ValueError("need at least one sweep value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unrecognized methods {bad}; expected a subset of {METHODS}")
        if self.kind == "timing" and any(m not in TIMING_METHODS for m in self.methods):
            raise ValueError(f"timing sweeps accept only {TIMING_METHODS}")
        if self.kind in ("width", "depth", "convergence"):
            if any(float(v) != int(v) or v < 1 for v in self.values):
                raise ValueError(f"{self.kind} values must be positive integers")
        if self.restarts < 1 or self.repeats < 1 or self.workers < 1:
            raise ValueError("restarts, repeats and workers must be >= 1")


@dataclass(frozen=True)
class ResultRow:
    value: float
    method: str
    mean_se: float
    std_se: float
    mean_time_s: float
    n: int
    failures: int = 0


@dataclass
class ResultTable:
    kind: str
    rows: list[ResultRow] = field(default_factory=list)
    # per (value, method): per-sample SEs, NaN where the method failed
    samples: dict = field(default_factory=dict, repr=False, compare=False)
    # per (value, sample, method): sha256 of the channel the method consumed
    channel_digests: dict = field(default_factory=dict, repr=False, compare=False)
    errors: list[str] = field(default_factory=list, repr=False, compare=False)

    def row(self, value, method) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.value == float(value):
                return r
        raise KeyError((value, method))

    @property
    def failed(self) -> bool:
        return any(r.failures for r in self.rows)

    def rounded(self) -> "ResultTable":
        """Copy with every float cut to the 9 significant digits used on disk."""
        rnd = lambda x: float(f"{x:.9g}")
        rows = [
            ResultRow(rnd(r.value), r.method, rnd(r.mean_se), rnd(r.std_se), rnd(r.mean_time_s), r.n, r.failures)
            for r in self.rows
        ]
        return ResultTable(self.kind, rows)


# ---------------------------------------------------------------------------
# seeding

def derive_seed(master: int, *parts) -> np.random.SeedSequence:
    """Stable seed from the master seed and a tuple of labels.

    Floats are normalized so that 10 and 10.0 give the same stream.
    """
    norm = [repr(float(p)) if isinstance(p, (int, float, np.integer, np.floating)) and not isinstance(p, bool) else repr(p)
            for p in parts]
    digest = hashlib.sha256("|".join([repr(int(master)), *norm]).encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def _rng(master, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))


def channel_digest(ch: ChannelPair) -> str:
    return hashlib.sha256(ch.to_text().encode()).hexdigest()


# ---------------------------------------------------------------------------
# per-sample work

def point_config(spec: ExperimentSpec, value) -> tuple[SystemConfig, gmml.GmmlHyper]:
    cfg, hyper = spec.base, spec.hyper
    if spec.kind == "power":
        cfg = cfg.replace(P=dbm_to_watt(float(value)))
    elif spec.kind == "ris_elements":
        cfg = cfg.replace(N=int(value))
    elif spec.kind in ("antennas", "timing"):
        cfg = cfg.replace(M=int(value))
    elif spec.kind == "width":
        hyper = hyper.replace(hidden=int(value))
    elif spec.kind == "depth":
        hyper = hyper.replace(depth=int(value))
    elif spec.kind == "convergence":
        hyper = hyper.replace(N_e=int(max(spec.values)))
    return cfg, hyper


def sample_channels(spec: ExperimentSpec, value, sample: int, cfg: SystemConfig):
    """(design channel, true channel) for one sample of one sweep point."""
    key = value if spec.kind in _DIMENSIONAL else None
    true = draw_channel(cfg, _rng(spec.seed, "channel", key, sample))
    if spec.kind == "cee":
        design = corrupt_csi(true, CorruptionSpec(float(value)), _rng(spec.seed, "csi", value, sample))
    else:
        design = true
    return design, true


def _best_ao(design, true, cfg, restarts, rng):
    best = None
    for s in rng.spawn(restarts):
        res = bl.ao(design, cfg, rng=s)
        if best is None or res.se > best.se:
            best = res
    return best


def solve(method, design, true, cfg, hyper, rng, restarts=20):
    """Run one method; returns (SE on the true channel, seconds, extra).

    ``extra`` is the RunTrace for learned methods and the AoResult otherwise.
    """
    t0 = time.perf_counter()
    if method in LEARNED:
        trace = gmml.run(design, true, cfg, hyper.replace(mode=method), rng)
        return trace.best_eval, time.perf_counter() - t0, trace
    if method == "AO":
        res = bl.ao(design, cfg, rng=rng)
    elif method == "RandomPhase":
        res = bl.random_phase_solve(design, cfg, rng)
    elif method == "UpperBound":
        res = _best_ao(design, true, cfg, restarts, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0
    se = res.se if design is true else sm.spectral_efficiency(res.W, res.theta, true, cfg)
    return se, elapsed, res


_FAILURES = (NumericFailure, DegenerateInputError, FloatingPointError, np.linalg.LinAlgError)


def _run_sample(args):
    spec, value, sample = args
    cfg, hyper = point_config(spec, value)
    design, true = sample_channels(spec, value, sample, cfg)
    digest = channel_digest(design)
    out = {}
    for method in spec.methods:
        rng = _rng(spec.seed, "method", value, sample, "learned" if method in LEARNED else method)
        try:
            se, secs, extra = solve(method, design, true, cfg, hyper, rng, spec.restarts)
        except _FAILURES as exc:
            out[method] = (math.nan, math.nan, None, f"{method} value={value} sample={sample}: {exc}")
            continue
        curve = None
        if spec.kind == "convergence":
            if method in LEARNED:
                curve = [(extra.best_se[int(v) - 1], extra.elapsed_ms[int(v) - 1] / 1e3) for v in spec.values]
            else:
                curve = [(se, secs)] * len(spec.values)
        out[method] = (se, secs, curve, None)
    return value, sample, digest, out


def _stats(xs):
    arr = np.asarray([x for x in xs if np.isfinite(x)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run every method on every (value, sample) and aggregate paired stats."""
    tasks = [(spec, v, s) for v in spec.values for s in range(spec.n_samples)]
    if spec.workers > 1 and spec.kind != "timing":
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_sample, tasks))
    else:
        results = [_run_sample(t) for t in tasks]

    table = ResultTable(spec.kind)
    per = {}
    for value, sample, digest, out in results:
        for method, (se, secs, curve, err) in out.items():
            table.channel_digests[(float(value), sample, method)] = digest
            if err:
                table.errors.append(err)
                log.warning(err)
            if spec.kind == "convergence":
                for ep, (c_se, c_t) in zip(spec.values, curve or [(math.nan, math.nan)] * len(spec.values)):
                    per.setdefault((float(ep), method), []).append((c_se, c_t))
            else:
                per.setdefault((float(value), method), []).append((se, secs))
    for value in spec.values:
        for method in spec.methods:
            pairs = per[(float(value), method)]
            ses = [p[0] for p in pairs]
            mean, std = _stats(ses)
            tmean, _ = _stats([p[1] for p in pairs])
            n_ok = int(np.isfinite(ses).sum())
            table.rows.append(ResultRow(float(value), method, mean, std, tmean, n_ok, len(ses) - n_ok))
            table.samples[(float(value), method)] = ses
    return table


# ---------------------------------------------------------------------------
# timing

def timing_profile(spec: ExperimentSpec) -> ResultTable:
    """Wall-clock seconds per full solve, single worker.

    At each sweep point one untimed warm-up solve runs first (JIT compilation,
    caches); every sample is then solved ``spec.repeats`` times and its
    median time kept. Rows report the mean of those medians over samples.
    """
    if spec.kind != "timing":
        spec = dataclasses.replace(spec, kind="timing")
    table = ResultTable("timing")
    for value in spec.values:
        cfg, hyper = point_config(spec, value)
        warm_design, warm_true = sample_channels(spec, value, -1, cfg)
        for method in spec.methods:
            solve(method, warm_design, warm_true, cfg, hyper, _rng(spec.seed, "warmup", value, method))
            ses, times, fails = [], [], 0
            for sample in range(spec.n_samples):
                design, true = sample_channels(spec, value, sample, cfg)
                table.channel_digests[(float(value), sample, method)] = channel_digest(design)
                reps = []
                try:
                    for _ in range(spec.repeats):
                        rng = _rng(spec.seed, "method", value, sample, method)
                        se, secs, _ = solve(method, design, true, cfg, hyper, rng)
                        reps.append(secs)
                except _FAILURES as exc:
                    fails += 1
                    table.errors.append(f"{method} value={value} sample={sample}: {exc}")
                    ses.append(math.nan)
                    continue
                ses.append(se)
                times.append(float(np.median(reps)))
            mean, std = _stats(ses)
            tmean, _ = _stats(times)
            table.rows.append(ResultRow(float(value), method, mean, std, tmean, len(times), fails))
            table.samples[(float(value), method)] = ses
    return table


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# serialization

def _fmt(x) -> str:
    return f"{x:.9g}"


def table_to_csv(table: ResultTable, include_timing: bool = True) -> str:
    cols = [c for c in COLUMNS if include_timing or c != TIMING_COLUMN]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in table.rows:
        rec = {
            "value": _fmt(r.value), "method": r.method, "mean_se": _fmt(r.mean_se),
            "std_se": _fmt(r.std_se), "mean_time_s": _fmt(r.mean_time_s), "n": r.n, "failures": r.failures,
        }
        w.writerow([rec[c] for c in cols])
    return buf.getvalue()


def table_to_json(table: ResultTable, include_timing: bool = True) -> str:
    cols = [c for c in COLUMNS if include_timing or c != TIMING_COLUMN]
    rows = []
    for r in table.rounded().rows:
        rec = dict(zip(COLUMNS, (r.value, r.method, r.mean_se, r.std_se, r.mean_time_s, r.n, r.failures)))
        rows.append([None if isinstance(rec[c], float) and math.isnan(rec[c]) else rec[c] for c in cols])
    obj = {"schema_version": SCHEMA_VERSION, "kind": table.kind, "columns": cols, "rows": rows}
    return json.dumps(obj, indent=1) + "\n"


def emit(table: ResultTable, path, fmt: str = "csv", include_timing: bool = True) -> Path:
    """Write the table; returns the path. I/O errors name the path."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = table_to_csv(table, include_timing) if fmt == "csv" else table_to_json(table, include_timing)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def _parse_row(rec: dict) -> ResultRow:
    num = lambda v: math.nan if v in (None, "", "nan") else float(v)
    return ResultRow(
        num(rec["value"]), str(rec["method"]), num(rec["mean_se"]), num(rec["std_se"]),
        num(rec.get("mean_time_s", math.nan)), int(rec["n"]), int(rec["failures"]),
    )


def parse_table(text: str, kind: str = "") -> ResultTable:
    """Inverse of :func:`table_to_csv` / :func:`table_to_json`."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        obj = json.loads(stripped)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {obj.get('schema_version')!r}")
        rows = [_parse_row(dict(zip(obj["columns"], r))) for r in obj["rows"]]
        return ResultTable(obj.get("kind", kind), rows)
    reader = csv.DictReader(io.StringIO(text))
    return ResultTable(kind, [_parse_row(rec) for rec in reader])


def load_table(path, kind: str = "") -> ResultTable:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc
    return parse_table(text, kind)
