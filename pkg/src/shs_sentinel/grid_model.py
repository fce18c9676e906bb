"""Grid description and the small-signal swing-equation model.

Each non-slack generator contributes the state pair (delta_i, omega_i) with

    d(delta_i)/dt = omega_i
    M_i d(omega_i)/dt = -b_i omega_i + dP_in_i - dP_out_i

The electrical coupling dP_out comes from the lossless DC power flow: the bus
susceptance Laplacian is Kron-reduced onto the generator buses, the slack bus
is an infinite bus (angle pinned to zero). PMU buses that the reduction
eliminates are observed through the reduction's interpolation rows.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (
    GridFormatError,
    GridValidationError,
    SingularReductionError,
    TopologyError,
)

SECTIONS = ("buses", "lines", "generators", "pmus", "loads", "slack")

# singular values below RANK_RTOL * sigma_max count as zero
RANK_RTOL = 1e-9


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    inertia: float
    damping: float
    capacity: float


@dataclass(frozen=True)
class Pmu:
    id: str
    bus: int
    quantity: str = "angle"


@dataclass(frozen=True)
class GridNetwork:
    buses: tuple
    lines: tuple
    generators: tuple
    slack_bus: int
    pmus: tuple
    loads: tuple = ()

    @property
    def line_ids(self):
        return tuple(line.id for line in self.lines)

    def line(self, line_id):
        for line in self.lines:
            if line.id == line_id:
                return line
        raise KeyError(line_id)

    @property
    def dynamic_generators(self):
        """Generators that carry states (everything not on the slack bus)."""
        return tuple(g for g in self.generators if g.bus != self.slack_bus)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    state_labels: tuple = ()
    input_labels: tuple = ()
    output_labels: tuple = ()

    def __post_init__(self):
        A, B, C = _readonly(self.A), _readonly(self.B), _readonly(self.C)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        n = A.shape[0]
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        if C.ndim != 2 or C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.C.shape[0]

    def replace(self, **changes):
        fields = dict(
            A=self.A,
            B=self.B,
            C=self.C,
            state_labels=self.state_labels,
            input_labels=self.input_labels,
            output_labels=self.output_labels,
        )
        fields.update(changes)
        return StateSpaceModel(**fields)


@dataclass(frozen=True)
class RankReport:
    rank: int
    n: int
    singular_values: tuple = field(default=(), repr=False)

    @property
    def full_rank(self):
        return self.rank == self.n


# -- parsing -----------------------------------------------------------------


def _num(tok, lineno, path, what):
    try:
        return float(tok)
    except ValueError:
        raise GridFormatError(f"{what}: expected a number, got {tok!r}", lineno, path) from None


def _bus(tok, lineno, path, what="bus"):
    try:
        return int(tok)
    except ValueError:
        raise GridFormatError(f"{what}: expected an integer bus id, got {tok!r}", lineno, path) from None


def parse_grid(text, path=None):
    """Parse ``.grid`` text into a validated :class:`GridNetwork`."""
    buses, lines, gens, pmus, loads, slack = [], [], [], [], [], []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise GridFormatError(f"unterminated section header {line!r}", lineno, path)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise GridFormatError(f"unknown section [{section}]", lineno, path)
            continue
        if section is None:
            raise GridFormatError("record outside of any section", lineno, path)
        tok = line.split()
        if section == "buses":
            buses.extend(_bus(t, lineno, path) for t in tok)
        elif section == "lines":
            if len(tok) != 5:
                raise GridFormatError(
                    f"line record needs 5 fields (id from to R X), got {len(tok)}", lineno, path
                )
            lines.append(
                Line(
                    tok[0],
                    _bus(tok[1], lineno, path, "from"),
                    _bus(tok[2], lineno, path, "to"),
                    _num(tok[3], lineno, path, "R"),
                    _num(tok[4], lineno, path, "X"),
                )
            )
        elif section == "generators":
            if len(tok) != 5:
                raise GridFormatError(
                    f"generator record needs 5 fields (id bus M b capacity), got {len(tok)}",
                    lineno,
                    path,
                )
            gens.append(
                Generator(
                    tok[0],
                    _bus(tok[1], lineno, path),
                    _num(tok[2], lineno, path, "M"),
                    _num(tok[3], lineno, path, "b"),
                    _num(tok[4], lineno, path, "capacity"),
                )
            )
        elif section == "pmus":
            if len(tok) not in (2, 3):
                raise GridFormatError("pmu record needs fields (id bus [quantity])", lineno, path)
            quantity = tok[2].lower() if len(tok) == 3 else "angle"
            if quantity != "angle":
                raise GridFormatError(f"unsupported PMU quantity {quantity!r}", lineno, path)
            pmus.append(Pmu(tok[0], _bus(tok[1], lineno, path), quantity))
        elif section == "loads":
            if len(tok) != 2:
                raise GridFormatError("load record needs fields (bus P)", lineno, path)
            loads.append((_bus(tok[0], lineno, path), _num(tok[1], lineno, path, "P")))
        elif section == "slack":
            slack.extend(_bus(t, lineno, path, "slack") for t in tok)

    if len(slack) != 1:
        raise GridValidationError(f"exactly one slack bus required, found {len(slack)}")
    grid = GridNetwork(
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        slack_bus=slack[0],
        pmus=tuple(pmus),
        loads=tuple(loads),
    )
    validate_grid(grid)
    return grid


def load_grid(path):
    """Read and validate a ``.grid`` file.

    ``path`` may also be the bare name of a bundled grid (``"ieee33"`` or
    ``"ieee33.grid"``) when no such file exists on disk.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        name = path if path.endswith(".grid") else path + ".grid"
        bundled = resources.files("shs_sentinel") / "data" / os.path.basename(name)
        if os.path.dirname(path) == "" and bundled.is_file():
            return parse_grid(bundled.read_text(encoding="utf-8"), path=name)
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        return parse_grid(fh.read(), path=path)


def bundled_grid(name="ieee33"):
    return load_grid(name)


def validate_grid(grid):
    bus_set = set(grid.buses)
    if len(bus_set) != len(grid.buses):
        raise GridValidationError("duplicate bus ids")
    if grid.slack_bus not in bus_set:
        raise GridValidationError(f"slack bus {grid.slack_bus} is not a declared bus")
    seen = set()
    for line in grid.lines:
        if line.id in seen:
            raise GridValidationError(f"duplicate line id {line.id}")
        seen.add(line.id)
        for b in (line.from_bus, line.to_bus):
            if b not in bus_set:
                raise GridValidationError(f"line {line.id} references unknown bus {b}")
        if line.from_bus == line.to_bus:
            raise GridValidationError(f"line {line.id} is a self-loop")
        if not line.reactance > 0:
            raise GridValidationError(f"reactance must be positive (line {line.id})")
    for g in grid.generators:
        if g.bus not in bus_set:
            raise GridValidationError(f"generator {g.id} references unknown bus {g.bus}")
        if not g.inertia > 0:
            raise GridValidationError(f"inertia must be positive (generator {g.id})")
        if not g.damping > 0:
            raise GridValidationError(f"damping must be positive (generator {g.id})")
    if len({g.bus for g in grid.generators}) != len(grid.generators):
        raise GridValidationError("at most one generator per bus")
    for pmu in grid.pmus:
        if pmu.bus not in bus_set:
            raise GridValidationError(f"PMU {pmu.id} references unknown bus {pmu.bus}")
    for bus, _ in grid.loads:
        if bus not in bus_set:
            raise GridValidationError(f"load references unknown bus {bus}")
    comps = connected_components(grid.buses, grid.lines)
    if len(comps) > 1:
        raise GridValidationError(
            "line graph is not connected with all lines in service "
            f"({len(comps)} components)"
        )


# -- topology ----------------------------------------------------------------


def connected_components(buses, lines):
    """Components of the bus graph as sorted tuples, in order of first bus."""
    adj = {b: [] for b in buses}
    for line in lines:
        adj[line.from_bus].append(line.to_bus)
        adj[line.to_bus].append(line.from_bus)
    seen = set()
    comps = []
    for start in buses:
        if start in seen:
            continue
        comp = []
        queue = deque([start])
        seen.add(start)
        while queue:
            b = queue.popleft()
            comp.append(b)
            for nb in adj[b]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        comps.append(tuple(sorted(comp)))
    return comps


def keeps_connected(grid, topology):
    lines = [line for line in grid.lines if line.id in topology]
    return len(connected_components(grid.buses, lines)) == 1


def susceptance_laplacian(grid, topology=None):
    """Bus susceptance Laplacian (1/x per line), rows ordered as ``grid.buses``."""
    index = {b: i for i, b in enumerate(grid.buses)}
    L = np.zeros((len(grid.buses), len(grid.buses)))
    for line in grid.lines:
        if topology is not None and line.id not in topology:
            continue
        i, j = index[line.from_bus], index[line.to_bus]
        y = 1.0 / line.reactance
        L[i, i] += y
        L[j, j] += y
        L[i, j] -= y
        L[j, i] -= y
    return L


@dataclass(frozen=True)
class KronReduction:
    """Generator-bus coupling and interpolation of eliminated bus angles.

    ``coupling[i, j]`` is dP_out_i / d delta_j. ``interp`` maps generator
    angles to the angles of ``eliminated`` buses.
    """

    coupling: np.ndarray
    interp: np.ndarray
    gen_buses: tuple
    eliminated: tuple


def kron_reduce(grid, topology=None, allow_islands=False):
    if topology is None:
        topology = set(grid.line_ids)
    else:
        topology = set(topology)
        unknown = topology - set(grid.line_ids)
        if unknown:
            raise GridValidationError(f"unknown line ids in topology: {sorted(unknown)}")
    lines = [line for line in grid.lines if line.id in topology]
    gen_buses = tuple(g.bus for g in grid.dynamic_generators)
    slack = grid.slack_bus

    keep = set()
    for comp in connected_components(grid.buses, lines):
        cs = set(comp)
        anchored = slack in cs or any(b in cs for b in gen_buses)
        has_pmu = any(p.bus in cs for p in grid.pmus)
        if slack in cs:
            keep |= cs
            continue
        if any(b in cs for b in gen_buses) or has_pmu:
            if not allow_islands or (has_pmu and not anchored):
                raise TopologyError(
                    f"topology isolates buses {list(comp)} from slack bus {slack}",
                    component=comp,
                )
            keep |= cs

    index = {b: i for i, b in enumerate(grid.buses)}
    L = susceptance_laplacian(grid, topology)
    g_idx = [index[b] for b in gen_buses]
    eliminated = tuple(b for b in grid.buses if b in keep and b != slack and b not in gen_buses)
    e_idx = [index[b] for b in eliminated]

    Lgg = L[np.ix_(g_idx, g_idx)]
    if not e_idx:
        return KronReduction(Lgg, np.zeros((0, len(g_idx))), gen_buses, eliminated)
    Lee = L[np.ix_(e_idx, e_idx)]
    Leg = L[np.ix_(e_idx, g_idx)]
    try:
        cond = np.linalg.cond(Lee)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularReductionError(
            "eliminated-bus Laplacian block is singular; a passive island has no "
            "generator or slack anchor"
        )
    interp = -np.linalg.solve(Lee, Leg)
    coupling = Lgg + L[np.ix_(g_idx, e_idx)] @ interp
    return KronReduction(coupling, interp, gen_buses, eliminated)


def build_small_signal_model(grid, topology=None, allow_islands=False):
    """Assemble the nominal (A, B, C) for the in-service line set ``topology``.

    ``topology`` defaults to every line. With ``allow_islands`` a generator
    may sit in a component without the slack bus (its coupling is whatever the
    island provides, possibly none); otherwise that raises ``TopologyError``.
    """
    red = kron_reduce(grid, topology, allow_islands=allow_islands)
    gens = grid.dynamic_generators
    ng = len(gens)
    n = 2 * ng
    A = np.zeros((n, n))
    B = np.zeros((n, ng))
    for i, g in enumerate(gens):
        A[2 * i, 2 * i + 1] = 1.0
        A[2 * i + 1, 2 * i + 1] = -g.damping / g.inertia
        A[2 * i + 1, 0::2] = -red.coupling[i] / g.inertia
        B[2 * i + 1, i] = 1.0 / g.inertia

    C = np.zeros((len(grid.pmus), n))
    elim_pos = {b: k for k, b in enumerate(red.eliminated)}
    for k, pmu in enumerate(grid.pmus):
        if pmu.bus in red.gen_buses:
            C[k, 2 * red.gen_buses.index(pmu.bus)] = 1.0
        elif pmu.bus in elim_pos:
            C[k, 0::2] = red.interp[elim_pos[pmu.bus]]
        # PMU on the slack bus reads the reference angle: zero row

    state_labels = tuple(lab for g in gens for lab in (f"delta_{g.id}", f"omega_{g.id}"))
    return StateSpaceModel(
        A,
        B,
        C,
        state_labels=state_labels,
        input_labels=tuple(f"u_{g.id}" for g in gens),
        output_labels=tuple(f"angle_{p.id}" for p in grid.pmus),
    )


def numerical_rank(M, rtol=RANK_RTOL):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0, s
    return int(np.sum(s > rtol * s[0])), s


def check_feasibility(model):
    """Rank of A; full rank means A x + B u = 0 has a unique equilibrium."""
    rank, s = numerical_rank(model.A)
    return RankReport(rank=rank, n=model.n, singular_values=tuple(s))
