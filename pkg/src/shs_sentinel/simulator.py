"""Sampled simulation of the closed loop over the time-splitting framework.

Every interval [k tau, (k+1) tau) opens with an identification segment of
length tau0 (probe active); its first tau1 seconds are the classification
window. Switches happen only at interval boundaries and the state carries
across them.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import kernels
from .closed_loop import assemble_closed_loop, design_recovery_gains
from .errors import SimulationError, ValidationError

NOISE_OFF = -math.inf
MITIGATIONS = ("recovery", "nominal", "none")

# Philox key word reserved for switching draws, so they never share a stream
# with per-window measurement noise.
_SWITCH_STREAM = 0x5357_4954_4348


@dataclass(frozen=True)
class ProbeSpec:
    """Per-channel multi-sine, cosine phase so the excitation is on from the
    first sample. Channel c uses frequencies ``f + c * channel_offset``."""

    kind: str = "multisine"
    amplitude: float = 0.05
    frequencies: tuple = (1.3, 2.7, 4.1)
    channel_offset: float = 0.37

    def __post_init__(self):
        if self.kind not in ("multisine", "zero"):
            raise ValidationError(f"unknown probe kind {self.kind!r}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ValidationError("probe amplitude must be finite and >= 0")
        if self.kind == "multisine" and not self.frequencies:
            raise ValidationError("multi-sine probe needs at least one frequency")

    @classmethod
    def zero(cls):
        return cls(kind="zero")


def _n_samples(duration, t_s, what):
    q = duration / t_s
    k = round(q)
    if k < 1 or abs(q - k) > 1e-9 * max(1.0, q):
        raise ValidationError(f"{what} ({duration}) must be a positive multiple of t_s ({t_s})")
    return k


def make_probe(spec, duration, t_s, channels=1):
    """Probe samples, shape (duration / t_s, channels)."""
    N = _n_samples(duration, t_s, "probe duration")
    if spec.kind == "zero" or spec.amplitude == 0:
        return np.zeros((N, channels))
    t = np.arange(N) * t_s
    v = np.zeros((N, channels))
    for c in range(channels):
        for f in spec.frequencies:
            v[:, c] += np.cos(2.0 * np.pi * (f + c * spec.channel_offset) * t)
    return spec.amplitude * v


@dataclass(frozen=True)
class SimConfig:
    """Timing, noise and probe settings.

    ``noise_db`` is the measurement-noise variance in dB (sigma^2 =
    10**(noise_db/10)); ``-inf`` disables noise. ``probe_mode`` is
    ``"identification"`` (probe on during [k tau, k tau + tau0) only) or
    ``"continuous"``. ``mitigation`` chooses what runs after the
    identification segment: ``"recovery"`` (the contingency is cleared and a
    fast nominal controller/observer pair returns the system to its operating
    point), ``"nominal"`` (cleared, the regular nominal loop evolves) or
    ``"none"`` (the active scenario keeps running).
    """

    t_s: float = 0.001
    tau: float = 0.5
    tau0: float = 0.08
    tau1: float = 0.02
    noise_db: float = -100.0
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    seed: int = 0
    probe_mode: str = "identification"
    mitigation: str = "recovery"

    def __post_init__(self):
        if not (0 < self.t_s <= self.tau1 <= self.tau0 < self.tau):
            raise ValidationError("need 0 < t_s <= tau1 <= tau0 < tau")
        _n_samples(self.tau0, self.t_s, "tau0")
        _n_samples(self.tau1, self.t_s, "tau1")
        _n_samples(self.tau, self.t_s, "tau")
        if self.probe_mode not in ("identification", "continuous"):
            raise ValidationError(f"unknown probe_mode {self.probe_mode!r}")
        if self.mitigation not in MITIGATIONS:
            raise ValidationError(f"unknown mitigation {self.mitigation!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in 64 bits")

    @property
    def n0(self):
        """Samples in the classification window."""
        return _n_samples(self.tau1, self.t_s, "tau1")

    @property
    def n_ident(self):
        return _n_samples(self.tau0, self.t_s, "tau0")

    @property
    def n_interval(self):
        return _n_samples(self.tau, self.t_s, "tau")

    @property
    def sigma(self):
        return noise_sigma(self.noise_db)

    def replace(self, **changes):
        return replace(self, **changes)


def noise_sigma(noise_db):
    if noise_db is None or noise_db == -math.inf:
        return 0.0
    return math.sqrt(10.0 ** (noise_db / 10.0))


def noise_samples(seed, window, count, channels, sigma):
    """Gaussian noise for one window from a counter-based generator.

    The Philox key is (seed, window); row l is the l-th sample, so results do
    not depend on which windows were drawn before.
    """
    if sigma == 0.0 or count == 0:
        return np.zeros((count, channels))
    bitgen = np.random.Philox(key=np.array([int(seed), int(window)], dtype=np.uint64))
    return sigma * np.random.Generator(bitgen).standard_normal((count, channels))


@dataclass(frozen=True)
class DiscreteClosedLoop:
    Ad: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    t_s: float
    n: int
    p: int
    r: int

    @property
    def nz(self):
        return self.Ad.shape[0]


def zoh(A, B, t_s):
    """Exact zero-order-hold pair via the augmented matrix exponential."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    nz, q = A.shape[0], B.shape[1]
    M = np.zeros((nz + q, nz + q))
    M[:nz, :nz] = A * t_s
    M[:nz, nz:] = B * t_s
    E = expm(M)
    return E[:nz, :nz], E[:nz, nz:]


def discretize(cl, t_s):
    if not t_s > 0:
        raise ValidationError("t_s must be positive")
    Ad, Bd = zoh(cl.A_cl, cl.B_cl, t_s)
    # y_c = C_cl z + [N; 0]: measurement noise feeds straight into y only
    D = np.zeros((cl.r + cl.n, cl.p + cl.r))
    D[: cl.r, cl.p:] = np.eye(cl.r)
    return DiscreteClosedLoop(Ad, Bd, np.asarray(cl.C_cl), D, t_s, cl.n, cl.p, cl.r)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    yc: np.ndarray
    alpha_true: int = 0
    final_state: np.ndarray = None
    r: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def y(self):
        return self.yc[:, : self.r]

    @property
    def xhat(self):
        return self.yc[:, self.r:]

    def head(self, count):
        return Trajectory(self.times[:count], self.yc[:count], self.alpha_true, None, self.r)

    def to_csv(self):
        buf = io.StringIO()
        write_trajectory_csv(buf, [self])
        return buf.getvalue()


def write_trajectory_csv(fh, trajectories):
    if not trajectories:
        return
    r = trajectories[0].r
    n = trajectories[0].yc.shape[1] - r
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"y_{i + 1}" for i in range(r)] + [f"xhat_{i + 1}" for i in range(n)]
               + ["alpha_true"])
    for traj in trajectories:
        for t, row in zip(traj.times, traj.yc):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [traj.alpha_true])


def _inputs(v, noise):
    return np.hstack([v, noise])


def simulate_window(dmodel, x0, v, noise_db=NOISE_OFF, seed=0, window=0, t0=0.0, alpha=0):
    """Run one window from closed-loop state ``x0`` = [x; x_tilde].

    Noise for sample l comes from ``noise_samples(seed, window, ...)`` row l;
    the same N_l drives both the y output and the observer injection over
    [l t_s, (l+1) t_s).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != dmodel.p:
        raise ValidationError(f"input sequence must have shape (N, {dmodel.p})")
    z0 = np.asarray(x0, dtype=float)
    if z0.shape != (dmodel.nz,):
        raise ValidationError(f"initial state must have length {dmodel.nz}")
    N = v.shape[0]
    noise = noise_samples(seed, window, N, dmodel.r, noise_sigma(noise_db))
    Y, z = kernels.simulate_lti(dmodel.Ad, dmodel.Bd, dmodel.C, dmodel.D, z0, _inputs(v, noise))
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(z))):
        raise SimulationError(f"non-finite state in window {window} (alpha {alpha})")
    times = t0 + np.arange(N) * dmodel.t_s
    return Trajectory(times, Y, alpha, z, dmodel.r)


# -- switching ----------------------------------------------------------------


@dataclass(frozen=True)
class SwitchingSequence:
    entries: tuple
    seed: int = 0

    def __post_init__(self):
        if [k for k, _ in self.entries] != list(range(len(self.entries))):
            raise ValidationError("interval indices must be contiguous from 0")

    def __len__(self):
        return len(self.entries)

    @property
    def alphas(self):
        return [a for _, a in self.entries]

    @classmethod
    def from_alphas(cls, alphas, seed=0):
        return cls(tuple((k, int(a)) for k, a in enumerate(alphas)), seed)


def generate_switching_sequence(catalog, length, seed):
    if length <= 0:
        raise ValidationError("sequence length must be positive")
    m = catalog.m if hasattr(catalog, "m") else int(catalog)
    bitgen = np.random.Philox(key=np.array([int(seed), _SWITCH_STREAM], dtype=np.uint64))
    draws = np.random.Generator(bitgen).integers(1, m + 1, size=length)
    return SwitchingSequence.from_alphas(draws.tolist(), seed)


class DiscreteCache:
    """Lazily discretized closed loops per alpha for one (catalog, gains, t_s)."""

    def __init__(self, catalog, gains, t_s):
        self.catalog = catalog
        self.gains = gains
        self.t_s = t_s
        self._loops = {}
        self._disc = {}
        self._recovery = None

    def loop(self, alpha):
        if alpha not in self._loops:
            self._loops[alpha] = assemble_closed_loop(self.catalog.model(alpha), self.gains)
        return self._loops[alpha]

    def __getitem__(self, alpha):
        if alpha not in self._disc:
            self._disc[alpha] = discretize(self.loop(alpha), self.t_s)
        return self._disc[alpha]

    def recovery(self):
        if self._recovery is None:
            nominal = self.catalog.nominal
            loop = assemble_closed_loop(nominal, design_recovery_gains(nominal))
            self._recovery = discretize(loop, self.t_s)
        return self._recovery

    def segment(self, alpha, mitigation):
        """Loop that runs after the identification segment of ``alpha``."""
        if mitigation == "recovery":
            return self.recovery()
        return self[1] if mitigation == "nominal" else self[alpha]


@dataclass(frozen=True)
class IntervalRecord:
    k: int
    alpha: int
    window: Trajectory

    def classification_window(self, n0):
        return self.window.head(n0)


def run_sequence(catalog, gains, seq, cfg, cache=None, x0=None):
    """Simulate every interval; return one record per interval holding the
    tau0 identification window (whose first tau1 samples are the
    classification window)."""
    cache = DiscreteCache(catalog, gains, cfg.t_s) if cache is None else cache
    p, n = catalog.nominal.p, catalog.nominal.n
    n_id, n_tau = cfg.n_ident, cfg.n_interval
    n_rest = n_tau - n_id
    sigma = cfg.sigma
    probe_full = make_probe(cfg.probe, cfg.tau, cfg.t_s, p)
    probe_id = probe_full[:n_id]
    if cfg.probe_mode == "continuous":
        probe_rest = probe_full[n_id:]
    else:
        probe_rest = np.zeros((n_rest, p))
    z = np.zeros(2 * n) if x0 is None else np.asarray(x0, dtype=float)
    records = []
    for k, alpha in seq.entries:
        noise = noise_samples(cfg.seed, k, n_tau, catalog.nominal.r, sigma)
        dm = cache[alpha]
        Y, z_mid = kernels.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, z, _inputs(probe_id, noise[:n_id]))
        rest = cache.segment(alpha, cfg.mitigation)
        z = kernels.propagate(rest.Ad, rest.Bd, z_mid, _inputs(probe_rest, noise[n_id:]))
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(z))):
            raise SimulationError(f"non-finite state in interval {k} (alpha {alpha})")
        times = k * cfg.tau + np.arange(n_id) * cfg.t_s
        records.append(IntervalRecord(k, alpha, Trajectory(times, Y, alpha, z_mid, dm.r)))
    return records
