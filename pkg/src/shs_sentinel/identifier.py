"""Scenario identification: exhaustive residual matching (SHS) and
classify-then-match (LSHS).

The response bank holds, per scenario, the noiseless closed-loop output over
the identification window in two parts: the forced response to the standard
probe from rest, and the free-response operator mapping the interval-entry
state to output. The entry state is read off the x_hat channels of the
window's first sample, so expected outputs stay exact for any carried state.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ValidationError
from .features import EPSILON, window_features
from .knn import knn_classify
from .scenarios import ContingencyClass
from .simulator import DiscreteCache, make_probe

BANK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ResponseBank:
    alphas: tuple
    classes: np.ndarray
    forced: np.ndarray  # (m, N * c)
    free: np.ndarray  # (m, N * c, n)
    n_samples: int
    r: int
    n: int
    t_s: float
    unstable: tuple = ()

    @property
    def channels(self):
        return self.r + self.n

    @property
    def m(self):
        return len(self.alphas)

    def positions_of(self, cls):
        return np.flatnonzero(self.classes == int(cls))

    def expected(self, alpha, x0=None, samples=None):
        """(samples, r+n) expected y_c for ``alpha`` from entry estimate x0."""
        i = self.alphas.index(alpha)
        samples = self.n_samples if samples is None else samples
        L = samples * self.channels
        out = self.forced[i, :L].copy()
        if x0 is not None:
            out += self.free[i, :L] @ np.asarray(x0, dtype=float)
        return out.reshape(samples, self.channels)

    def y_only(self):
        """Bank restricted to the measured-output channels."""
        m, c = self.m, self.channels
        f = self.forced.reshape(m, self.n_samples, c)[:, :, : self.r]
        fr = self.free.reshape(m, self.n_samples, c, self.n)[:, :, : self.r, :]
        return (np.ascontiguousarray(f.reshape(m, -1)),
                np.ascontiguousarray(fr.reshape(m, -1, self.n)))

    def key(self):
        h = hashlib.sha256()
        for a in (self.forced, self.free):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def precompute_bank(catalog, gains, cfg, cache=None, samples=None, check_distinct=True):
    """Noiseless expected responses of every scenario over tau0."""
    cache = DiscreteCache(catalog, gains, cfg.t_s) if cache is None else cache
    N = cfg.n_ident if samples is None else samples
    nom = catalog.nominal
    n, p, r = nom.n, nom.p, nom.r
    c = r + n
    v = make_probe(cfg.probe, N * cfg.t_s, cfg.t_s, p)
    w = np.hstack([v, np.zeros((N, r))])
    m = catalog.m
    forced = np.empty((m, N * c))
    free = np.empty((m, N * c, n))
    unstable = []
    embed = np.vstack([np.eye(n), np.zeros((n, n))])
    for i, alpha in enumerate(range(1, m + 1)):
        dm = cache[alpha]
        if not cache.loop(alpha).stable:
            unstable.append(alpha)
        Y, _ = kernels.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, np.zeros(dm.nz), w)
        forced[i] = Y.ravel()
        Z = embed
        blocks = np.empty((N, c, n))
        for l in range(N):
            blocks[l] = dm.C @ Z
            Z = dm.Ad @ Z
        free[i] = blocks.reshape(N * c, n)
    if not (np.all(np.isfinite(forced)) and np.all(np.isfinite(free))):
        raise ValidationError("bank contains non-finite responses")
    bank = ResponseBank(
        alphas=tuple(range(1, m + 1)),
        classes=np.array([int(s.cls) for s in catalog.scenarios]),
        forced=forced,
        free=free,
        n_samples=N,
        r=r,
        n=n,
        t_s=cfg.t_s,
        unstable=tuple(unstable),
    )
    if check_distinct:
        dup = duplicate_pairs(bank)
        if dup:
            raise ValidationError(f"bank responses are not pairwise distinct: {dup[:5]}")
    return bank


def duplicate_pairs(bank, rtol=1e-12):
    """Scenario pairs whose forced responses and free operators coincide."""
    stacked = np.hstack([bank.forced, bank.free.reshape(bank.m, -1)])
    scale = np.abs(stacked).max() or 1.0
    out = []
    for i in range(bank.m):
        d = np.abs(stacked[i + 1:] - stacked[i]).max(axis=1)
        for j in np.flatnonzero(d <= rtol * scale):
            out.append((bank.alphas[i], bank.alphas[i + 1 + j]))
    return out


def save_bank(bank, path, cache_key):
    np.savez(
        path,
        version=BANK_FORMAT_VERSION,
        cache_key=cache_key,
        alphas=np.array(bank.alphas),
        classes=bank.classes,
        forced=bank.forced,
        free=bank.free,
        meta=np.array([bank.n_samples, bank.r, bank.n]),
        t_s=bank.t_s,
        unstable=np.array(bank.unstable, dtype=int),
    )


def load_bank(path, cache_key):
    """Cached bank, or None when the file is missing, stale or another version."""
    try:
        with np.load(path, allow_pickle=False) as z:
            if int(z["version"]) != BANK_FORMAT_VERSION or str(z["cache_key"]) != cache_key:
                return None
            N, r, n = (int(x) for x in z["meta"])
            return ResponseBank(
                tuple(int(a) for a in z["alphas"]), z["classes"], z["forced"], z["free"],
                N, r, n, float(z["t_s"]), tuple(int(a) for a in z["unstable"]),
            )
    except (OSError, KeyError, ValueError):
        return None


# -- identification -----------------------------------------------------------


@dataclass(frozen=True)
class IdentificationResult:
    alpha_hat: int
    residual: float
    elapsed: float
    k: int = 0
    class_hat: ContingencyClass = None
    scanned: int = 0


def _window_arrays(measured, bank):
    yc = np.asarray(getattr(measured, "yc", measured), dtype=float)
    if yc.ndim != 2 or yc.shape[1] != bank.channels:
        raise DimensionError(f"measured window must have {bank.channels} channels")
    if yc.shape[0] > bank.n_samples or yc.shape[0] == 0:
        raise DimensionError(
            f"measured window has {yc.shape[0]} samples; bank holds {bank.n_samples}")
    return yc


class Identifier:
    """Bank-backed identifier; caches channel-restricted bank views."""

    def __init__(self, bank, channels="all"):
        if channels not in ("all", "y"):
            raise ValidationError("channels must be 'all' or 'y'")
        self.bank = bank
        self.channels = channels
        if channels == "y":
            self._forced, self._free = bank.y_only()
            self._width = bank.r
        else:
            self._forced, self._free = bank.forced, bank.free
            self._width = bank.channels
        self._all = np.arange(bank.m)
        self._by_class = {c: bank.positions_of(c) for c in ContingencyClass}

    def _target(self, yc):
        if self.channels == "y":
            yc = yc[:, : self.bank.r]
        return np.ascontiguousarray(yc).ravel()

    def shs(self, measured, k=0):
        """Exhaustive SSE argmin over every scenario (ties: lowest alpha)."""
        t0 = time.perf_counter()
        yc = _window_arrays(measured, self.bank)
        x0 = yc[0, self.bank.r:]
        L = yc.shape[0] * self._width
        pos, res = kernels.residual_scan(self._forced, self._free, x0, self._target(yc),
                                         self._all, L)
        elapsed = time.perf_counter() - t0
        return IdentificationResult(self.bank.alphas[pos], res, elapsed, k, None, self.bank.m)

    def lshs(self, measured, classifier, n0, k=0, epsilon=EPSILON):
        """Classify on the first ``n0`` samples, then scan only that class."""
        t0 = time.perf_counter()
        yc = _window_arrays(measured, self.bank)
        bank = self.bank
        x0 = yc[0, bank.r:]
        c = bank.channels
        L1 = n0 * c
        expected = (bank.forced[0, :L1] + bank.free[0, :L1] @ x0).reshape(n0, c)
        head = yc[:n0]
        cls = knn_classify(classifier, window_features(head, expected, epsilon))
        if cls == ContingencyClass.NORMAL:
            res = float(np.sum((head - expected) ** 2))
            elapsed = time.perf_counter() - t0
            return IdentificationResult(bank.alphas[0], res, elapsed, k, cls, 0)
        cand = self._by_class[cls]
        if cand.size == 0:
            res = float(np.sum((head - expected) ** 2))
            elapsed = time.perf_counter() - t0
            return IdentificationResult(bank.alphas[0], res, elapsed, k, cls, 0)
        L = yc.shape[0] * self._width
        pos, res = kernels.residual_scan(self._forced, self._free, x0, self._target(yc), cand, L)
        elapsed = time.perf_counter() - t0
        return IdentificationResult(bank.alphas[cand[pos]], res, elapsed, k, cls, int(cand.size))


def identify_shs(measured, bank, k=0, channels="all"):
    return Identifier(bank, channels).shs(measured, k)


def identify_lshs(measured, classifier, bank, n0, k=0, channels="all"):
    return Identifier(bank, channels).lshs(measured, classifier, n0, k)


def naive_residual_argmin(measured, bank):
    """Scenario-by-scenario scan without the kernels; reference for identify_shs."""
    yc = np.asarray(getattr(measured, "yc", measured), dtype=float)
    L = yc.size
    y = yc.ravel()
    x0 = yc[0, bank.r:]
    best, best_res = None, None
    for i, alpha in enumerate(bank.alphas):
        pred = bank.forced[i, :L] + bank.free[i, :L] @ x0
        total = float(np.dot(y - pred, y - pred))
        if best_res is None or total < best_res:
            best, best_res = alpha, total
    return best, best_res


# -- scoring ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassBreakdown:
    cls: ContingencyClass
    count: int
    exact_correct: int
    class_correct: int

    @property
    def exact_accuracy(self):
        return self.exact_correct / self.count if self.count else float("nan")

    @property
    def class_accuracy(self):
        return self.class_correct / self.count if self.count else float("nan")


@dataclass(frozen=True)
class RunMetrics:
    exact_accuracy: float
    class_accuracy: float
    per_class: dict
    mean_elapsed: float
    moving_average: np.ndarray
    mean_scanned: float


def moving_average(x, window=20):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty(x.size)
    for i in range(x.size):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def score_run(results, truth, catalog, window=20):
    alphas = list(truth.alphas if hasattr(truth, "alphas") else truth)
    if not results:
        raise ValidationError("cannot score an empty run")
    if len(results) != len(alphas):
        raise DimensionError(f"{len(results)} results for {len(alphas)} intervals")
    per = {c: [0, 0, 0] for c in ContingencyClass}
    exact = cls_ok = 0
    for res, a in zip(results, alphas):
        true_cls = catalog.scenario(a).cls
        hat_cls = res.class_hat if res.class_hat is not None else catalog.scenario(res.alpha_hat).cls
        e = int(res.alpha_hat == a)
        c = int(hat_cls == true_cls)
        exact += e
        cls_ok += c
        per[true_cls][0] += 1
        per[true_cls][1] += e
        per[true_cls][2] += c
    elapsed = np.array([r.elapsed for r in results])
    return RunMetrics(
        exact_accuracy=exact / len(results),
        class_accuracy=cls_ok / len(results),
        per_class={c: ClassBreakdown(c, *v) for c, v in per.items()},
        mean_elapsed=float(elapsed.mean()),
        moving_average=moving_average(elapsed, window),
        mean_scanned=float(np.mean([r.scanned for r in results])),
    )


RESULT_COLUMNS = ("k", "alpha_true", "alpha_hat", "class_true", "class_hat", "residual",
                  "elapsed_us", "method", "tau0")


def results_csv(rows, header_comment=None, timing=True):
    """``rows`` are (IdentificationResult, alpha_true, method, tau0, catalog).

    With ``timing=False`` the elapsed column is left empty, which makes the
    file reproducible byte for byte.
    """
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for res, a_true, method, tau0, catalog in rows:
        hat_cls = res.class_hat if res.class_hat is not None else catalog.scenario(res.alpha_hat).cls
        w.writerow([
            res.k, a_true, res.alpha_hat, catalog.scenario(a_true).cls.label, hat_cls.label,
            f"{res.residual:.17g}", f"{res.elapsed * 1e6:.3f}" if timing else "", method,
            f"{tau0:g}",
        ])
    return buf.getvalue()
