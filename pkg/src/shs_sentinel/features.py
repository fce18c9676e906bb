"""Log-error features and labeled dataset generation.

Per channel i of y_c and sample l of the classification window,
e_i(l) = |y_c,i(l) - y_nom,i(l)| against the noiseless nominal response from
the same start, aggregated as E_i = log(sum_l e_i(l) + eps).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .closed_loop import assemble_closed_loop
from .errors import DimensionError, ValidationError
from .grid_model import build_small_signal_model
from .scenarios import (
    ContingencyClass,
    Identity,
    LineOutage,
    apply_contingency,
    class_of,
    scale_input,
    scale_sensor,
)
from .simulator import NOISE_OFF, discretize, make_probe, noise_samples, noise_sigma
from . import kernels

EPSILON = 1e-12

# Random factors closer than this to 1 are redrawn: they are not
# distinguishable from normal operation even in the spectrum.
_MIN_FACTOR_GAP = 1e-3


@dataclass(frozen=True)
class FeatureVector:
    E: np.ndarray
    label: ContingencyClass = None
    alpha: int = 0
    noise_db: float = NOISE_OFF

    def __len__(self):
        return len(self.E)


def error_series(traj, nominal):
    """(r+n) x N matrix of absolute deviations from the nominal reference.

    Both arguments may be Trajectory objects or plain (N, r+n) arrays.
    """
    a = np.asarray(getattr(traj, "yc", traj), dtype=float)
    b = np.asarray(getattr(nominal, "yc", nominal), dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"trajectory shape {a.shape} does not match nominal {b.shape}")
    return np.abs(a - b).T


def aggregate_features(errors, epsilon=EPSILON, label=None, alpha=0, noise_db=NOISE_OFF):
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    E = np.log(np.asarray(errors, dtype=float).sum(axis=1) + epsilon)
    return FeatureVector(E, label, alpha, noise_db)


def window_features(yc, expected, epsilon=EPSILON):
    """Feature vector straight from a window and its nominal expectation."""
    return np.log(np.abs(np.asarray(yc) - np.asarray(expected)).sum(axis=0) + epsilon)


@dataclass
class LabeledDataset:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def class_counts(self):
        counts = {c: 0 for c in ContingencyClass}
        for row in self.rows:
            counts[row.label] += 1
        return counts

    @property
    def X(self):
        if not self.rows:
            return np.zeros((0, 0))
        return np.vstack([row.E for row in self.rows])

    @property
    def y(self):
        return np.array([int(row.label) for row in self.rows], dtype=int)

    def subset(self, indices):
        return LabeledDataset([self.rows[i] for i in indices])

    def at_noise(self, noise_db):
        return LabeledDataset([r for r in self.rows if r.noise_db == noise_db])

    def noise_levels(self):
        return sorted({r.noise_db for r in self.rows}, reverse=True)

    def to_csv(self, seed=0, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        dim = len(self.rows[0].E) if self.rows else 0
        w.writerow([f"E_{i + 1}" for i in range(dim)] + ["alpha", "class", "noise_db", "seed"])
        for row in self.rows:
            w.writerow([repr(float(e)) for e in row.E]
                       + [row.alpha, row.label.label, _fmt_db(row.noise_db), seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        dim = sum(1 for h in header if h.startswith("E_"))
        rows = []
        for rec in reader:
            E = np.array([float(x) for x in rec[:dim]])
            rows.append(FeatureVector(E, ContingencyClass.parse(rec[dim + 1]), int(rec[dim]),
                                      _parse_db(rec[dim + 2])))
        return cls(rows)


def _fmt_db(db):
    return "-inf" if db == NOISE_OFF else f"{db:g}"


def _parse_db(text):
    return NOISE_OFF if text.strip() in ("-inf", "off", "none") else float(text)


def stratified_split(dataset, test_fraction=0.2, seed=0):
    """Per-class shuffled split; returns (train, test)."""
    rng = np.random.default_rng([int(seed), 0x53504C4954])
    labels = dataset.y
    train_idx, test_idx = [], []
    for c in ContingencyClass:
        idx = np.flatnonzero(labels == int(c))
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


class _ScenarioSampler:
    """Random-parameter contingencies per class, following the catalog grid."""

    def __init__(self, catalog, gains, cfg):
        self.catalog = catalog
        self.gains = gains
        self.cfg = cfg
        self.nominal = catalog.nominal
        self.grid = catalog.grid
        self.lines = [s.transform.line_id for s in catalog.scenarios if isinstance(s.transform, LineOutage)]
        self._outage_A = {}
        self._alpha_of = {s.transform: s.alpha for s in catalog.scenarios}

    def draw(self, cls, rng):
        if cls == ContingencyClass.NORMAL:
            return Identity()
        if cls == ContingencyClass.PHYSICAL:
            if not self.lines:
                raise ValidationError("grid has no removable line for physical samples")
            return LineOutage(self.lines[int(rng.integers(len(self.lines)))])
        factor = 1.0
        while abs(factor - 1.0) < _MIN_FACTOR_GAP:
            factor = float(rng.uniform(0.0, 2.0))
        if cls == ContingencyClass.CONTROL:
            return scale_input(int(rng.integers(self.nominal.p)), factor)
        return scale_sensor(int(rng.integers(self.nominal.r)), factor)

    def model(self, transform):
        if isinstance(transform, LineOutage):
            if transform.line_id not in self._outage_A:
                topo = set(self.grid.line_ids) - {transform.line_id}
                self._outage_A[transform.line_id] = build_small_signal_model(self.grid, topo).A
            return self.nominal.replace(A=self._outage_A[transform.line_id])
        return apply_contingency(self.nominal, self.grid, transform)

    def alpha(self, transform):
        return self._alpha_of.get(transform, 0)


def nominal_reference(catalog, gains, cfg, samples=None):
    """Noiseless nominal y_c from the zero state under the standard probe."""
    samples = cfg.n0 if samples is None else samples
    dm = discretize(assemble_closed_loop(catalog.nominal, gains), cfg.t_s)
    v = make_probe(cfg.probe, samples * cfg.t_s, cfg.t_s, catalog.nominal.p)
    w = np.hstack([v, np.zeros((samples, dm.r))])
    Y, _ = kernels.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, np.zeros(dm.nz), w)
    return Y


def generate_dataset(catalog, gains, cfg, per_class, noise_levels, seed, epsilon=EPSILON):
    """``per_class`` rows of each class at every noise level.

    Rows are ordered (noise level, class, index). Row j draws its scenario
    from Philox key (seed, 2j) and its measurement noise from window 2j+1,
    so any row can be regenerated on its own.
    """
    if per_class < 1:
        raise ValidationError("per_class must be >= 1")
    sampler = _ScenarioSampler(catalog, gains, cfg)
    n0 = cfg.n0
    p, r = catalog.nominal.p, catalog.nominal.r
    v = make_probe(cfg.probe, cfg.tau1, cfg.t_s, p)
    y_nom = nominal_reference(catalog, gains, cfg, n0)
    z0 = np.zeros(2 * catalog.nominal.n)
    disc = {}
    rows = []
    j = 0
    for noise_db in noise_levels:
        sigma = noise_sigma(noise_db)
        for cls in ContingencyClass:
            for _ in range(per_class):
                rng = np.random.Generator(
                    np.random.Philox(key=np.array([int(seed), 2 * j], dtype=np.uint64)))
                t = sampler.draw(cls, rng)
                if t not in disc:
                    cl = assemble_closed_loop(sampler.model(t), gains)
                    disc[t] = discretize(cl, cfg.t_s)
                dm = disc[t]
                noise = noise_samples(seed, 2 * j + 1, n0, r, sigma)
                Y, _ = kernels.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, z0, np.hstack([v, noise]))
                E = window_features(Y, y_nom, epsilon)
                rows.append(FeatureVector(E, class_of(t), sampler.alpha(t), noise_db))
                j += 1
    return LabeledDataset(rows)
