"""Observer-based closed loop and eigen-signatures.

Plant, observer and feedback

    x'    = A x + B u              y = C x + N
    xhat' = (A + G C) xhat + B u - G y
    u     = K xhat + v

in (x, xtilde = x - xhat) coordinates become block upper-triangular:

    [x' ]   [A+BK   -BK ] [x ]   [B 0] [v]
    [xt'] = [ 0    A+GC ] [xt] + [0 G] [N]

    y_c = [y; xhat] = [C 0; I -I] [x; xt] + [N; 0]

so the spectrum splits into lambda1 = eig(A+BK) and lambda2 = eig(A+GC).
K and G are designed once on the nominal model and reused under every
contingency, which is what makes the class visible in the spectrum:
B faults move only lambda1, C faults only lambda2, A faults both.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import place_poles as _scipy_place_poles

from .errors import DimensionError, PlacementError
from .grid_model import numerical_rank
from .scenarios import ContingencyClass, controllability_matrix

# Reference normal-operation spectra for the controller and observer.
DEFAULT_CONTROLLER_POLES = (
    -1.096,
    -0.833,
    -0.150,
    -0.065,
    -0.339 + 0.054j,
    -0.339 - 0.054j,
    -0.622 + 0.21j,
    -0.622 - 0.21j,
)
DEFAULT_OBSERVER_POLES = (-15.0, -14.0, -13.0, -12.0, -11.0, -9.0, -8.0, -7.0)
# Fast loop used to bring the system back to its operating point after each
# identification segment.
RECOVERY_POLES = (-20.0, -21.0, -22.0, -23.0, -24.0, -25.0, -26.0, -27.0)

PLACEMENT_RTOL = 1e-6
SIGNATURE_RTOL = 1e-6


def _as_poles(poles):
    p = np.asarray(poles, dtype=complex).ravel()
    if np.all(p.imag == 0):
        return p.real.copy()
    return p


def _conjugate_closed(p, tol=1e-12):
    p = np.asarray(p, dtype=complex)
    cost = np.abs(p[:, None] - np.conj(p)[None, :])
    rows, cols = linear_sum_assignment(cost)
    return np.all(cost[rows, cols] <= tol * np.maximum(1.0, np.abs(p[rows])))


def spectrum_mismatch(a, b):
    """Largest relative distance between two eigenvalue multisets after
    minimum-cost matching. ``inf`` when the sizes differ."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.size != b.size:
        return np.inf
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = np.maximum(np.abs(a[rows]), np.abs(b[cols]))
    dist = cost[rows, cols]
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(dist == 0.0, 0.0, dist / np.where(scale > 0, scale, 1.0))
    return float(rel.max())


def spectra_match(a, b, rtol):
    return spectrum_mismatch(a, b) <= rtol


def place_poles(A, B, desired, rtol=PLACEMENT_RTOL):
    """Gain F with eig(A + B F) = ``desired``.

    For an observer gain call it on the dual pair and transpose:
    ``G = place_poles(A.T, C.T, poles).T`` gives eig(A + G C) = poles.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if n == 0 or A.shape != (n, n) or B.shape[0] != n:
        raise DimensionError(f"incompatible shapes A{A.shape}, B{B.shape}")
    p = _as_poles(desired)
    if p.size != n:
        raise PlacementError(f"need {n} poles, got {p.size}")
    if not _conjugate_closed(p):
        raise PlacementError("desired pole set is not closed under complex conjugation")
    if numerical_rank(controllability_matrix(A, B))[0] < n:
        raise PlacementError("pair is not controllable; poles cannot be placed")

    with warnings.catch_warnings():
        # YT may stop before its robustness criterion converges; the spectrum
        # check below is what matters.
        warnings.simplefilter("ignore", UserWarning)
        try:
            res = _scipy_place_poles(A, B, p, method="YT", maxiter=100)
        except ValueError as exc:
            raise PlacementError(str(exc)) from exc
    F = -res.gain_matrix
    achieved = np.linalg.eigvals(A + B @ F)
    miss = spectrum_mismatch(achieved, p)
    if miss > rtol:
        raise PlacementError(f"achieved spectrum misses request by {miss:.3g} (rtol {rtol})")
    return F


@dataclass(frozen=True)
class GainSet:
    K: np.ndarray
    G: np.ndarray
    controller_poles: tuple
    observer_poles: tuple


def design_gains(nominal, controller_poles=DEFAULT_CONTROLLER_POLES,
                 observer_poles=DEFAULT_OBSERVER_POLES):
    K = place_poles(nominal.A, nominal.B, controller_poles)
    G = place_poles(nominal.A.T, nominal.C.T, observer_poles).T
    for a in (K, G):
        a.setflags(write=False)
    if any(np.real(p) >= 0 for p in tuple(controller_poles) + tuple(observer_poles)):
        raise PlacementError("all controller and observer poles must be strictly stable")
    return GainSet(K, G, tuple(controller_poles), tuple(observer_poles))


def design_recovery_gains(nominal, poles=RECOVERY_POLES):
    return design_gains(nominal, poles, poles)


@dataclass(frozen=True)
class ClosedLoopModel:
    A_cl: np.ndarray
    B_cl: np.ndarray
    C_cl: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    n: int
    p: int
    r: int

    @property
    def eigenvalues(self):
        return np.concatenate([self.lambda1, self.lambda2])

    @property
    def stable(self):
        return bool(np.all(self.eigenvalues.real < 0))


def assemble_closed_loop(model, gains):
    A, B, C = model.A, model.B, model.C
    K, G = np.asarray(gains.K), np.asarray(gains.G)
    n, p, r = model.n, model.p, model.r
    if K.shape != (p, n) or G.shape != (n, r):
        raise DimensionError(
            f"gain shapes K{K.shape}, G{G.shape} do not fit n={n}, p={p}, r={r}"
        )
    BK = B @ K
    top = A + BK
    bottom = A + G @ C
    A_cl = np.block([[top, -BK], [np.zeros((n, n)), bottom]])
    B_cl = np.block([[B, np.zeros((n, r))], [np.zeros((n, p)), G]])
    C_cl = np.block([[C, np.zeros((r, n))], [np.eye(n), -np.eye(n)]])
    for a in (A_cl, B_cl, C_cl):
        a.setflags(write=False)
    return ClosedLoopModel(
        A_cl, B_cl, C_cl,
        lambda1=np.linalg.eigvals(top),
        lambda2=np.linalg.eigvals(bottom),
        n=n, p=p, r=r,
    )


def eigen_signature(cl_contingency, cl_nominal, tol=SIGNATURE_RTOL):
    """(lambda1 changed, lambda2 changed) relative to nominal."""
    return (
        not spectra_match(cl_contingency.lambda1, cl_nominal.lambda1, tol),
        not spectra_match(cl_contingency.lambda2, cl_nominal.lambda2, tol),
    )


_SIGNATURE_CLASS = {
    (False, False): ContingencyClass.NORMAL,
    (True, False): ContingencyClass.CONTROL,
    (False, True): ContingencyClass.MEASUREMENT,
    (True, True): ContingencyClass.PHYSICAL,
}


def infer_class_from_signature(sig):
    return _SIGNATURE_CLASS[(bool(sig[0]), bool(sig[1]))]


def closed_loops(catalog, gains):
    return {a: assemble_closed_loop(catalog.model(a), gains) for a in range(1, catalog.m + 1)}


# -- eigen table --------------------------------------------------------------


def format_complex(z, digits=6):
    z = complex(z)
    return f"{z.real:.{digits}g}{z.imag:+.{digits}g}i"


def _ordered(ev):
    ev = np.asarray(ev, dtype=complex)
    return ev[np.lexsort((ev.imag, ev.real))]


def eigen_table_csv(catalog, gains, loops=None):
    """Lambda1 / Lambda2 of every scenario; one column per alpha."""
    loops = closed_loops(catalog, gains) if loops is None else loops
    alphas = range(1, catalog.m + 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "index"] + [f"alpha_{a}" for a in alphas])
    for section, attr in (("Lambda1", "lambda1"), ("Lambda2", "lambda2")):
        cols = [_ordered(getattr(loops[a], attr)) for a in alphas]
        for i in range(len(cols[0])):
            w.writerow([section, i + 1] + [format_complex(c[i]) for c in cols])
    return buf.getvalue()
