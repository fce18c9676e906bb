"""Experiment orchestration behind the command-line tool.

Every CSV written here starts with a ``# manifest=<id>`` line; the id hashes
the command, configuration, catalog, gains, seeds and tool version, so two
runs with the same inputs produce the same id and the same CSV body. Wall
clock timestamps live only in the manifest JSON.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .closed_loop import closed_loops, design_gains, eigen_table_csv
from .errors import ValidationError
from .features import LabeledDataset, generate_dataset, stratified_split
from .grid_model import build_small_signal_model, load_grid
from .identifier import (
    Identifier,
    load_bank,
    precompute_bank,
    results_csv,
    save_bank,
    score_run,
)
from .knn import evaluate, knn_train
from .scenarios import ContingencyClass, build_catalog
from .simulator import (
    NOISE_OFF,
    DiscreteCache,
    ProbeSpec,
    SimConfig,
    generate_switching_sequence,
    run_sequence,
)

SEED_ENV = "SHS_SENTINEL_SEED"
DEFAULT_TAU0_LIST = (0.02, 0.05, 0.08)
DEFAULT_NOISE_LEVELS = (-200.0, -150.0, -100.0)


# -- configuration ------------------------------------------------------------


def default_seed():
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def parse_noise(text):
    t = str(text).strip().lower()
    if t in ("-inf", "off", "none"):
        return NOISE_OFF
    try:
        return float(t)
    except ValueError as exc:
        raise ValidationError(f"bad noise level {text!r}") from exc


def parse_float_list(text, what="value"):
    try:
        out = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad {what} list {text!r}") from exc
    if not out:
        raise ValidationError(f"empty {what} list")
    return out


_FLOAT_KEYS = ("t_s", "tau", "tau0", "tau1")


def read_config_file(path):
    """``[sim]`` keys of an INI file as SimConfig-ready overrides."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    if not parser.has_section("sim"):
        return {}
    sec = parser["sim"]
    out = {}
    known = set(_FLOAT_KEYS) | {"noise_db", "seed", "probe_amplitude", "probe_frequencies",
                                "probe_kind", "probe_mode", "mitigation"}
    unknown = set(sec) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        for key in _FLOAT_KEYS:
            if key in sec:
                out[key] = float(sec[key])
        if "noise_db" in sec:
            out["noise_db"] = parse_noise(sec["noise_db"])
        if "seed" in sec:
            out["seed"] = int(sec["seed"])
        for key in ("probe_mode", "mitigation", "probe_kind"):
            if key in sec:
                out[key] = sec[key].strip()
        if "probe_amplitude" in sec:
            out["probe_amplitude"] = float(sec["probe_amplitude"])
        if "probe_frequencies" in sec:
            out["probe_frequencies"] = tuple(parse_float_list(sec["probe_frequencies"], "frequency"))
    except ValueError as exc:
        raise ValidationError(f"bad value in config {path}: {exc}") from exc
    return out


def build_config(file_values=None, overrides=None):
    """Defaults, then config-file values, then flag overrides."""
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    merged.setdefault("seed", default_seed())
    probe_kw = {}
    for src, dst in (("probe_kind", "kind"), ("probe_amplitude", "amplitude"),
                     ("probe_frequencies", "frequencies")):
        if src in merged:
            probe_kw[dst] = merged.pop(src)
    if probe_kw:
        merged["probe"] = ProbeSpec(**probe_kw)
    try:
        return SimConfig(**merged)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def config_snapshot(cfg):
    d = asdict(cfg)
    d["noise_db"] = "-inf" if cfg.noise_db == NOISE_OFF else cfg.noise_db
    d["probe"]["frequencies"] = list(cfg.probe.frequencies)
    return d


# -- setup --------------------------------------------------------------------


@dataclass
class Setup:
    grid: object
    nominal: object
    catalog: object
    gains: object
    _caches: dict = field(default_factory=dict)

    def cache(self, t_s):
        if t_s not in self._caches:
            self._caches[t_s] = DiscreteCache(self.catalog, self.gains, t_s)
        return self._caches[t_s]

    def gains_hash(self):
        h = hashlib.sha256()
        for a in (self.gains.K, self.gains.G):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def build_setup(grid_path=None, catalog_spec=None):
    try:
        grid = load_grid(grid_path or "ieee33")
    except FileNotFoundError as exc:
        raise ValidationError(f"grid file not found: {grid_path}") from exc
    nominal = build_small_signal_model(grid)
    catalog = build_catalog(grid, nominal, catalog_spec)
    return Setup(grid, nominal, catalog, design_gains(nominal))


# -- manifest -----------------------------------------------------------------


@dataclass
class ExperimentManifest:
    command: str
    config: dict
    catalog_hash: str
    gains_hash: str
    seeds: dict
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float = None

    @property
    def id(self):
        body = json.dumps(
            {"command": self.command, "config": self.config, "catalog": self.catalog_hash,
             "gains": self.gains_hash, "seeds": self.seeds, "version": self.version},
            sort_keys=True, default=str)
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def header(self):
        return f"manifest={self.id}"

    def finish(self):
        self.finished = time.time()
        return self

    def to_json(self):
        d = asdict(self)
        d["id"] = self.id
        return json.dumps(d, indent=2, sort_keys=True, default=str) + "\n"


def new_manifest(command, setup, cfg=None, seeds=None, **params):
    config = config_snapshot(cfg) if cfg is not None else {}
    config.update(params)
    return ExperimentManifest(
        command=command,
        config=config,
        catalog_hash=setup.catalog.fingerprint() if setup is not None else "",
        gains_hash=setup.gains_hash() if setup is not None else "",
        seeds=dict(seeds or {}),
    )


def with_header(manifest, body):
    return f"# {manifest.header()}\n{body}"


# -- experiments --------------------------------------------------------------


def catalog_csv(setup):
    """Scenario list plus closed-loop stability of each scenario."""
    loops = closed_loops(setup.catalog, setup.gains)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("alpha", "class", "transform", "parameter", "stable", "max_real_eig"))
    for alpha, cls, transform, parameter in setup.catalog.manifest_rows():
        ev = loops[alpha].eigenvalues
        w.writerow((alpha, cls, transform, parameter, int(loops[alpha].stable),
                    f"{float(np.max(ev.real)):.6g}"))
    return buf.getvalue()


def eigen_csv(setup):
    return eigen_table_csv(setup.catalog, setup.gains, closed_loops(setup.catalog, setup.gains))


def make_dataset(setup, cfg, per_class, noise_levels, seed):
    return generate_dataset(setup.catalog, setup.gains, cfg, per_class, noise_levels, seed)


@dataclass(frozen=True)
class TrainReport:
    noise_db: float
    train_accuracy: float
    test_accuracy: float
    confusion: np.ndarray
    n_train: int
    n_test: int


def train_and_evaluate(dataset, seed, k=1, standardize=False, test_fraction=0.2):
    train, test = stratified_split(dataset, test_fraction, seed)
    model = knn_train(train, k, standardize)
    tr_acc, _ = evaluate(model, train)
    te_acc, conf = evaluate(model, test)
    levels = dataset.noise_levels()
    level = levels[0] if len(levels) == 1 else float("nan")
    return model, TrainReport(level, tr_acc, te_acc, conf, len(train), len(test))


def _fmt_db(db):
    return "-inf" if db == NOISE_OFF else f"{db:g}"


def train_report_csv(reports, algorithm="knn"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [c.label for c in ContingencyClass]
    w.writerow(["algorithm", "noise_db", "train_accuracy", "test_accuracy", "n_train", "n_test"]
               + [f"conf_{a}_{b}" for a in names for b in names])
    for r in reports:
        db = "mixed" if isinstance(r.noise_db, float) and math.isnan(r.noise_db) else _fmt_db(r.noise_db)
        w.writerow([algorithm, db, f"{r.train_accuracy:.6f}", f"{r.test_accuracy:.6f}",
                    r.n_train, r.n_test] + [int(v) for v in r.confusion.ravel()])
    return buf.getvalue()


def noise_sweep(setup, cfg, levels, per_class, seed, k=1):
    """One dataset and model per noise level; returns (models, reports)."""
    models, reports = {}, []
    for db in levels:
        data = make_dataset(setup, cfg.replace(noise_db=db), per_class, [db], seed)
        model, rep = train_and_evaluate(data, seed, k)
        models[db] = model
        reports.append(rep)
    return models, reports


def nearest_model(models, noise_db):
    """Classifier trained at the noise level closest to ``noise_db``."""
    if not models:
        raise ValidationError("no trained classifiers")

    def dist(db):
        if db == noise_db:
            return 0.0
        if math.isinf(db) or math.isinf(noise_db):
            return math.inf
        return abs(db - noise_db)

    return models[min(models, key=lambda db: (dist(db), -db if not math.isinf(db) else math.inf))]


def bank_for(setup, cfg, cache_dir=None):
    cache = setup.cache(cfg.t_s)
    if cache_dir is None:
        return precompute_bank(setup.catalog, setup.gains, cfg, cache)
    key = hashlib.sha256(json.dumps(
        [setup.catalog.fingerprint(), setup.gains_hash(), cfg.t_s, cfg.tau0,
         config_snapshot(cfg)["probe"]], sort_keys=True).encode()).hexdigest()
    path = Path(cache_dir) / f"bank-{key[:20]}.npz"
    bank = load_bank(path, key) if path.exists() else None
    if bank is None:
        bank = precompute_bank(setup.catalog, setup.gains, cfg, cache)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_bank(bank, path, key)
    return bank


@dataclass
class SwitchingRun:
    tau0: float
    sequence: object
    results: dict  # method -> list of IdentificationResult

    def metrics(self, catalog):
        return {m: score_run(r, self.sequence, catalog) for m, r in self.results.items()}


def run_switching(setup, cfg, length, seed, classifier=None, methods=("shs", "lshs"),
                  channels="all", bank_cache=None, repeats=1):
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if "lshs" in methods and classifier is None:
        raise ValidationError("LSHS needs a trained classifier")
    seq = generate_switching_sequence(setup.catalog, length, seed)
    records = run_sequence(setup.catalog, setup.gains, seq, cfg, setup.cache(cfg.t_s))
    ident = Identifier(bank_for(setup, cfg, bank_cache), channels)
    calls = {
        "shs": lambda rec: ident.shs(rec.window, rec.k),
        "lshs": lambda rec: ident.lshs(rec.window, classifier, cfg.n0, rec.k),
    }
    results = {}
    for method in methods:
        if method not in calls:
            raise ValidationError(f"unknown method {method!r}")
        results[method] = [_timed(calls[method], rec, repeats) for rec in records]
    return SwitchingRun(cfg.tau0, seq, results)


def _timed(call, rec, repeats):
    # median-of-n timing for noisy timers; the answer itself is deterministic
    tries = [call(rec) for _ in range(repeats)]
    return sorted(tries, key=lambda r: r.elapsed)[len(tries) // 2]


def switching_results_csv(runs, catalog, timing=True):
    rows = []
    for run in runs:
        for method, results in run.results.items():
            for res, a in zip(results, run.sequence.alphas):
                rows.append((res, a, method, run.tau0, catalog))
    return results_csv(rows, timing=timing)


def accuracy_csv(runs, catalog):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    classes = list(ContingencyClass)
    w.writerow(["method", "tau0", "intervals", "exact_accuracy", "class_accuracy", "mean_scanned"]
               + [f"{c.label}_{kind}" for c in classes for kind in ("count", "exact", "class")])
    for run in runs:
        for method, m in run.metrics(catalog).items():
            row = [method, f"{run.tau0:g}", len(run.sequence), f"{m.exact_accuracy:.6f}",
                   f"{m.class_accuracy:.6f}", f"{m.mean_scanned:.3f}"]
            for c in classes:
                b = m.per_class[c]
                row += [b.count, f"{b.exact_accuracy:.6f}" if b.count else "",
                        f"{b.class_accuracy:.6f}" if b.count else ""]
            w.writerow(row)
    return buf.getvalue()


def timing_csv(runs, catalog, window=20):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "tau0", "k", "elapsed_us", "moving_avg_us"])
    for run in runs:
        for method, m in run.metrics(catalog).items():
            for res, ma in zip(run.results[method], m.moving_average):
                w.writerow([method, f"{run.tau0:g}", res.k, f"{res.elapsed * 1e6:.3f}",
                            f"{ma * 1e6:.3f}"])
    return buf.getvalue()


def compare_identifiers(setup, cfg, tau0_list, sequences, seed, classifier, bank_cache=None,
                        channels="all", repeats=1):
    """Matched runs: every tau0 uses the same switching sequence and noise."""
    runs = []
    for tau0 in tau0_list:
        c = cfg.replace(tau0=tau0)
        runs.append(run_switching(setup, c, sequences, seed, classifier, ("shs", "lshs"),
                                  channels, bank_cache, repeats))
    return runs


# -- report -------------------------------------------------------------------


def summarize_results(text):
    """Plain-text summary table of a results CSV (accuracy and timing)."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise ValidationError("results file has no rows")
    missing = {"method", "tau0", "alpha_true", "alpha_hat", "class_true", "class_hat"} - set(rows[0])
    if missing:
        raise ValidationError(f"not a results file (missing {', '.join(sorted(missing))})")
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["tau0"]), []).append(r)
    out = [f"{'method':<8}{'tau0':>7}{'n':>6}{'exact':>8}{'class':>8}{'mean_us':>10}"
           + "".join(f"{c.label:>13}" for c in ContingencyClass)]
    for (method, tau0), rs in sorted(groups.items(), key=lambda kv: (float(kv[0][1]), kv[0][0])):
        n = len(rs)
        exact = sum(r["alpha_true"] == r["alpha_hat"] for r in rs) / n
        cls = sum(r["class_true"] == r["class_hat"] for r in rs) / n
        times = [float(r["elapsed_us"]) for r in rs if r.get("elapsed_us")]
        mean_us = f"{np.mean(times):10.1f}" if times else f"{'-':>10}"
        per = ""
        for c in ContingencyClass:
            sub = [r for r in rs if r["class_true"] == c.label]
            per += f"{sum(r['alpha_true'] == r['alpha_hat'] for r in sub) / len(sub):13.3f}" if sub \
                else f"{'-':>13}"
        out.append(f"{method:<8}{tau0:>7}{n:>6}{exact:8.3f}{cls:8.3f}{mean_us}{per}")
    out.append("per-class columns: exact-scenario accuracy by true class")
    return "\n".join(out) + "\n"


def load_dataset(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from exc
    try:
        return LabeledDataset.from_csv(text)
    except (ValueError, IndexError, StopIteration) as exc:
        raise ValidationError(f"malformed dataset {path}: {exc}") from exc
