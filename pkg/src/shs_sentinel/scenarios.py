"""Contingency catalog: scenarios as transforms of the nominal model.

Signal-level faults are folded into matrix changes: a control input delivered
as ``f * u_i`` is equivalent to scaling column i of B by ``f`` (a lost packet
is ``f = 0``), and a sensor reporting ``f * y_j`` is equivalent to scaling
row j of C. Line outages rebuild A from the network.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError
from .grid_model import build_small_signal_model, keeps_connected, numerical_rank


class ContingencyClass(enum.IntEnum):
    NORMAL = 0
    PHYSICAL = 1
    CONTROL = 2
    MEASUREMENT = 3

    @property
    def label(self):
        return self.name.capitalize()

    @classmethod
    def parse(cls, text):
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ScenarioError(f"unknown contingency class {text!r}") from None


# -- transforms ---------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    def describe(self):
        return "Identity", ""


@dataclass(frozen=True)
class LineOutage:
    line_id: str

    def describe(self):
        return f"LineOutage:{self.line_id}", self.line_id


@dataclass(frozen=True)
class InputScale:
    index: int
    factor: float

    def __post_init__(self):
        _check_factor(self.factor)

    def describe(self):
        return f"InputScale:u{self.index + 1}", _fmt(self.factor)


@dataclass(frozen=True)
class InputLoss:
    index: int

    def describe(self):
        return f"InputLoss:u{self.index + 1}", "0"


@dataclass(frozen=True)
class SensorScale:
    index: int
    factor: float

    def __post_init__(self):
        _check_factor(self.factor)

    def describe(self):
        return f"SensorScale:y{self.index + 1}", _fmt(self.factor)


@dataclass(frozen=True)
class SensorLoss:
    index: int

    def describe(self):
        return f"SensorLoss:y{self.index + 1}", "0"


def _check_factor(f):
    if not np.isfinite(f) or f < 0:
        raise ScenarioError(f"scale factor must be finite and >= 0, got {f}")
    if f == 1.0:
        raise ScenarioError("scale factor 1.0 is not a contingency; use Identity")


def _fmt(x):
    return f"{x:.6g}"


_CLASS_OF = {
    Identity: ContingencyClass.NORMAL,
    LineOutage: ContingencyClass.PHYSICAL,
    InputScale: ContingencyClass.CONTROL,
    InputLoss: ContingencyClass.CONTROL,
    SensorScale: ContingencyClass.MEASUREMENT,
    SensorLoss: ContingencyClass.MEASUREMENT,
}


def class_of(transform):
    return _CLASS_OF[type(transform)]


def scale_input(index, factor):
    """InputScale, or InputLoss when the factor is zero."""
    return InputLoss(index) if factor == 0 else InputScale(index, factor)


def scale_sensor(index, factor):
    return SensorLoss(index) if factor == 0 else SensorScale(index, factor)


@dataclass(frozen=True)
class ContingencyScenario:
    alpha: int
    cls: ContingencyClass
    transform: object
    description: str = ""

    def __post_init__(self):
        if self.alpha < 1:
            raise ScenarioError(f"alpha must be >= 1, got {self.alpha}")
        expected = class_of(self.transform)
        if self.cls != expected:
            raise ScenarioError(
                f"{type(self.transform).__name__} belongs to class {expected.label}, "
                f"not {ContingencyClass(self.cls).label}"
            )
        if (self.alpha == 1) != isinstance(self.transform, Identity):
            raise ScenarioError("alpha 1 is reserved for (and required by) normal operation")


def apply_contingency(nominal, grid, scenario):
    """Return the scenario's (A, B, C). Only the matrix the class owns changes."""
    t = scenario.transform if isinstance(scenario, ContingencyScenario) else scenario
    if isinstance(t, Identity):
        return nominal
    if isinstance(t, LineOutage):
        if grid is None:
            raise ScenarioError("line outage needs the grid to rebuild A")
        if t.line_id not in grid.line_ids:
            raise ScenarioError(f"unknown line {t.line_id}")
        topology = set(grid.line_ids) - {t.line_id}
        rebuilt = build_small_signal_model(grid, topology)
        return nominal.replace(A=rebuilt.A)
    if isinstance(t, (InputScale, InputLoss)):
        if not 0 <= t.index < nominal.p:
            raise ScenarioError(f"input index {t.index} out of range for p={nominal.p}")
        B = np.array(nominal.B)
        B[:, t.index] *= 0.0 if isinstance(t, InputLoss) else t.factor
        return nominal.replace(B=B)
    if isinstance(t, (SensorScale, SensorLoss)):
        if not 0 <= t.index < nominal.r:
            raise ScenarioError(f"sensor index {t.index} out of range for r={nominal.r}")
        C = np.array(nominal.C)
        C[t.index, :] *= 0.0 if isinstance(t, SensorLoss) else t.factor
        return nominal.replace(C=C)
    raise ScenarioError(f"unknown transform {t!r}")


def quantize_parameter_range(low, high, step):
    """Grid ``low, low+step, ..., <= high`` with 1.0 (the healthy value) removed."""
    if not (step > 0 and low < high):
        raise ScenarioError(f"empty parameter range ({low}, {high}, step {step})")
    count = int(np.floor((high - low) / step + 1e-9))
    values = [round(low + k * step, 12) for k in range(count + 1)]
    values = [v for v in values if abs(v - 1.0) > 1e-9]
    if not values:
        raise ScenarioError(f"empty parameter range ({low}, {high}, step {step})")
    return values


# -- catalog ------------------------------------------------------------------

DEFAULT_CONTROL_FACTORS = (1.25, 1.5, 1.75, 2.0, 0.75, 0.5, 0.25, 0.0)


@dataclass(frozen=True)
class CatalogSpec:
    """What goes in a catalog.

    ``outage_lines`` lists explicit line ids; otherwise the first
    ``outage_count`` lines (file order) whose removal keeps the network
    connected are used. ``None`` inputs/sensors mean all of them.
    """

    outage_count: int = 0
    outage_lines: tuple = None
    control_inputs: tuple = ()
    control_factors: tuple = ()
    sensors: tuple = ()
    sensor_factors: tuple = ()
    expected_counts: dict = field(default=None, hash=False, compare=False)

    @classmethod
    def default(cls):
        """The 93-scenario IEEE-33 catalog: 28 outages, 4x8 control, 2x16 sensor."""
        return cls(
            outage_count=28,
            control_inputs=None,
            control_factors=DEFAULT_CONTROL_FACTORS,
            sensors=None,
            sensor_factors=tuple(quantize_parameter_range(0.2, 1.8, 0.1)),
            expected_counts={
                ContingencyClass.PHYSICAL: 28,
                ContingencyClass.CONTROL: 32,
                ContingencyClass.MEASUREMENT: 32,
            },
        )

    @classmethod
    def empty(cls):
        return cls()


def removable_lines(grid):
    """Lines (file order) whose single outage keeps the network connected."""
    all_ids = set(grid.line_ids)
    return [lid for lid in grid.line_ids if keeps_connected(grid, all_ids - {lid})]


@dataclass(frozen=True)
class Catalog:
    scenarios: tuple
    models: dict
    nominal: object
    grid: object = None

    def __post_init__(self):
        alphas = [s.alpha for s in self.scenarios]
        if alphas != list(range(1, len(alphas) + 1)):
            raise ScenarioError("catalog alphas must be contiguous 1..m")
        if set(self.models) != set(alphas):
            raise ScenarioError("catalog models must have exactly one entry per alpha")
        for a, m in self.models.items():
            if (m.n, m.p, m.r) != (self.nominal.n, self.nominal.p, self.nominal.r):
                raise ScenarioError(f"model for alpha {a} does not match nominal dimensions")

    def __len__(self):
        return len(self.scenarios)

    @property
    def m(self):
        return len(self.scenarios)

    def scenario(self, alpha):
        return self.scenarios[alpha - 1]

    def model(self, alpha):
        return self.models[alpha]

    def alphas_of(self, cls):
        return tuple(s.alpha for s in self.scenarios if s.cls == cls)

    def class_counts(self):
        counts = {c: 0 for c in ContingencyClass}
        for s in self.scenarios:
            counts[s.cls] += 1
        return counts

    def fingerprint(self):
        """Stable hash over scenario definitions and model matrices."""
        h = hashlib.sha256()
        for s in self.scenarios:
            h.update(repr((s.alpha, int(s.cls), s.transform.describe())).encode())
            m = self.models[s.alpha]
            for mat in (m.A, m.B, m.C):
                h.update(np.ascontiguousarray(mat, dtype="<f8").tobytes())
        return h.hexdigest()

    def manifest_rows(self):
        rows = []
        for s in self.scenarios:
            transform, parameter = s.transform.describe()
            rows.append((s.alpha, s.cls.label, transform, parameter))
        return rows

    def manifest_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("alpha", "class", "transform", "parameter"))
        w.writerows(self.manifest_rows())
        return buf.getvalue()


def build_catalog(grid, nominal, spec=None):
    spec = CatalogSpec.default() if spec is None else spec
    if spec.outage_lines is not None:
        outages = list(spec.outage_lines)
        for lid in outages:
            if lid not in grid.line_ids:
                raise ScenarioError(f"unknown line {lid} in catalog spec")
    elif spec.outage_count:
        candidates = removable_lines(grid)
        if len(candidates) < spec.outage_count:
            raise ScenarioError(
                f"only {len(candidates)} lines can be removed without disconnecting the "
                f"network; catalog asks for {spec.outage_count}"
            )
        outages = candidates[: spec.outage_count]
    else:
        outages = []
    inputs = range(nominal.p) if spec.control_inputs is None else spec.control_inputs
    sensors = range(nominal.r) if spec.sensors is None else spec.sensors

    transforms = [Identity()]
    transforms += [LineOutage(lid) for lid in outages]
    transforms += [scale_input(i, f) for i in inputs for f in spec.control_factors]
    transforms += [scale_sensor(j, f) for j in sensors for f in spec.sensor_factors]

    scenarios = []
    models = {}
    for alpha, t in enumerate(transforms, start=1):
        name, param = t.describe()
        s = ContingencyScenario(alpha, class_of(t), t, description=f"{name} {param}".strip())
        scenarios.append(s)
        models[alpha] = apply_contingency(nominal, grid, s)

    catalog = Catalog(tuple(scenarios), models, nominal, grid)
    if spec.expected_counts:
        counts = catalog.class_counts()
        for cls, want in spec.expected_counts.items():
            if counts[ContingencyClass(cls)] != want:
                raise ScenarioError(
                    f"catalog has {counts[cls]} {ContingencyClass(cls).label} scenarios, "
                    f"spec declares {want}"
                )
    return catalog


# -- structural properties ----------------------------------------------------


def controllability_matrix(A, B):
    blocks = [np.asarray(B, dtype=float)]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A, C):
    blocks = [np.asarray(C, dtype=float)]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_rank(model):
    return numerical_rank(controllability_matrix(model.A, model.B))[0]


def observability_rank(model):
    return numerical_rank(observability_matrix(model.A, model.C))[0]
