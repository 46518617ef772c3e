"""Three-phase radial distribution feeder model.

Defines the immutable feeder data structures, the JSON file format, the
per-phase extraction and balanced-approximation reductions, load scenarios
and a deterministic synthetic feeder generator.

All electrical quantities are stored in per-unit on a per-phase base:

* power base      s_base / 3          (s_base three-phase MVA)
* voltage base    v_base / sqrt(3)    (v_base line-to-line kV)
* impedance base  v_base**2 / s_base  (ohm)

so that a balanced feeder carries identical per-unit numbers on each phase.
Loads are consumption-positive complex powers.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property

import numpy as np

from .errors import (
    ArgumentError,
    MissingPhase,
    NonTransposed,
    SchemaError,
    TopologyError,
    UnitError,
)

MUTUAL_SYMMETRY_TOL = 1e-9  # pu, enforced at construction
PASSTHROUGH_IMPEDANCE = 1e-12  # pu floor for branches that skip a phase


class Phase(IntEnum):
    """Phase labels with a fixed iteration order a < b < c."""

    a = 0
    b = 1
    c = 2

    @classmethod
    def parse(cls, token: str) -> "Phase":
        try:
            return cls[token]
        except KeyError:
            raise SchemaError(f"unknown phase {token!r}, expected one of a/b/c") from None


#: slack phasor rotation: phase a at 0 deg, b at -120 deg, c at +120 deg
PHASE_ROTATION = np.array(
    [1.0, cmath.exp(-2j * math.pi / 3), cmath.exp(2j * math.pi / 3)]
)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Bus:
    """A feeder node.

    Parameters
    ----------
    id : int
        Non-negative, unique within the feeder.
    phases : frozenset of Phase
        Phases physically present at the node.
    load : (3,) complex ndarray
        Per-phase consumption, per-unit on the per-phase base; entries for
        absent phases must be zero.
    s_max : float or None
        Optional per-phase apparent-power cap, per-unit.
    """

    id: int
    phases: frozenset
    load: np.ndarray
    s_max: float | None = None

    def __post_init__(self):
        if self.id < 0:
            raise SchemaError(f"bus id {self.id} is negative")
        load = np.asarray(self.load, dtype=complex)
        if load.shape != (3,):
            raise SchemaError(f"bus {self.id}: load must have one entry per phase")
        for ph in Phase:
            if ph not in self.phases and load[ph] != 0:
                raise SchemaError(
                    f"bus {self.id}: load on absent phase {ph.name}"
                )
        if self.s_max is not None and not self.s_max > 0:
            raise SchemaError(f"bus {self.id}: apparent-power limit must be > 0")
        object.__setattr__(self, "load", _readonly(load))


@dataclass(frozen=True, eq=False)
class Branch:
    """A three-phase line section with full 3x3 per-unit impedance.

    Rows/columns follow the phase order a, b, c; rows and columns of absent
    phases are zero. The matrix must be symmetric (tolerance
    ``MUTUAL_SYMMETRY_TOL``) and diagonal entries must have a non-negative
    real part.
    """

    from_bus: int
    to_bus: int
    z3: np.ndarray

    def __post_init__(self):
        z3 = np.asarray(self.z3, dtype=complex)
        if z3.shape != (3, 3):
            raise SchemaError(
                f"branch {self.from_bus}-{self.to_bus}: impedance must be 3x3"
            )
        if np.abs(z3 - z3.T).max() > MUTUAL_SYMMETRY_TOL:
            raise SchemaError(
                f"branch {self.from_bus}-{self.to_bus}: mutual impedances are "
                f"asymmetric beyond {MUTUAL_SYMMETRY_TOL} pu"
            )
        diag = np.diag(z3)
        if np.any(diag.real < 0):
            raise SchemaError(
                f"branch {self.from_bus}-{self.to_bus}: negative series resistance"
            )
        for ph in Phase:
            if diag[ph] == 0 and (np.any(z3[ph, :] != 0) or np.any(z3[:, ph] != 0)):
                raise SchemaError(
                    f"branch {self.from_bus}-{self.to_bus}: phase {ph.name} has "
                    "zero self impedance but nonzero coupling"
                )
        if np.all(diag == 0):
            raise SchemaError(
                f"branch {self.from_bus}-{self.to_bus}: no phase present"
            )
        object.__setattr__(self, "z3", _readonly(z3))

    @property
    def phases(self) -> frozenset:
        return frozenset(ph for ph in Phase if self.z3[ph, ph] != 0)


@dataclass(frozen=True, eq=False)
class Feeder:
    """Immutable radial three-phase network rooted at the slack bus."""

    buses: tuple
    branches: tuple
    slack_bus: int
    slack_voltage: float
    s_base_mva: float
    v_base_kv: float

    def __post_init__(self):
        if self.s_base_mva <= 0 or self.v_base_kv <= 0:
            raise UnitError("power and voltage bases must be positive")
        if self.slack_voltage <= 0:
            raise UnitError("slack voltage must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate bus ids")
        if self.slack_bus not in set(ids):
            raise TopologyError(f"slack bus {self.slack_bus} not among buses")
        if len(self.branches) != len(self.buses) - 1:
            raise TopologyError(
                f"{len(self.buses)} buses need {len(self.buses) - 1} branches, "
                f"got {len(self.branches)}"
            )
        self._validate_tree()
        self._validate_phase_continuity()

    # -- topology -----------------------------------------------------------

    def _validate_tree(self):
        pos = {b.id: k for k, b in enumerate(self.buses)}
        parent = list(range(len(self.buses)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for br in self.branches:
            if br.from_bus not in pos or br.to_bus not in pos:
                raise TopologyError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus"
                )
            ri, rj = find(pos[br.from_bus]), find(pos[br.to_bus])
            if ri == rj:
                raise TopologyError(
                    f"cycle introduced by branch {br.from_bus}-{br.to_bus}"
                )
            parent[ri] = rj
        roots = {find(k) for k in range(len(self.buses))}
        if len(roots) > 1:
            raise TopologyError("branch set does not connect all buses")

    @cached_property
    def bus_pos(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def n_buses(self) -> int:
        return len(self.buses)

    @cached_property
    def _oriented(self):
        """BFS orientation away from the slack: parents, branch map, order."""
        adj = [[] for _ in range(self.n_buses)]
        for bi, br in enumerate(self.branches):
            i, j = self.bus_pos[br.from_bus], self.bus_pos[br.to_bus]
            adj[i].append((j, bi))
            adj[j].append((i, bi))
        root = self.bus_pos[self.slack_bus]
        parent_pos = np.full(self.n_buses, -1, dtype=int)
        branch_of = np.full(self.n_buses, -1, dtype=int)
        order = []
        seen = [False] * self.n_buses
        seen[root] = True
        queue = [root]
        while queue:
            i = queue.pop(0)
            for j, bi in adj[i]:
                if not seen[j]:
                    seen[j] = True
                    parent_pos[j] = i
                    branch_of[j] = bi
                    order.append(j)
                    queue.append(j)
        return _readonly(parent_pos), _readonly(branch_of), _readonly(np.array(order))

    @property
    def parent_pos(self) -> np.ndarray:
        """Parent bus position per bus position; -1 at the slack."""
        return self._oriented[0]

    @property
    def branch_of(self) -> np.ndarray:
        """Index into ``branches`` of the branch feeding each bus; -1 at slack."""
        return self._oriented[1]

    @property
    def order(self) -> np.ndarray:
        """Non-slack bus positions sorted parents-first (BFS order)."""
        return self._oriented[2]

    @cached_property
    def z3_of_node(self) -> np.ndarray:
        """(n, 3, 3) oriented branch impedance feeding ``order[k]``."""
        z = np.empty((len(self.order), 3, 3), dtype=complex)
        for k, npos in enumerate(self.order):
            z[k] = self.branches[self.branch_of[npos]].z3
        return _readonly(z)

    @cached_property
    def loads(self) -> np.ndarray:
        """(N, 3) complex per-unit consumption, bus-position indexed."""
        return _readonly(np.array([b.load for b in self.buses]))

    @cached_property
    def phase_mask(self) -> np.ndarray:
        """(N, 3) bool: phase present at bus."""
        m = np.zeros((self.n_buses, 3), dtype=bool)
        for k, b in enumerate(self.buses):
            for ph in b.phases:
                m[k, ph] = True
        return _readonly(m)

    def _validate_phase_continuity(self):
        # every loaded phase must be supplied through its entire root path
        supplied = np.ones((self.n_buses, 3), dtype=bool)
        for npos in self.order:
            z = self.branches[self.branch_of[npos]].z3
            here = np.array([z[ph, ph] != 0 for ph in Phase])
            supplied[npos] = supplied[self.parent_pos[npos]] & here
            bus = self.buses[npos]
            for ph in Phase:
                if bus.load[ph] != 0 and not supplied[npos, ph]:
                    raise TopologyError(
                        f"bus {bus.id} draws phase {ph.name} load through a "
                        "path missing that phase"
                    )

    # -- conversions and views ----------------------------------------------

    @property
    def s_base_phase_mva(self) -> float:
        return self.s_base_mva / 3.0

    def pu_to_mw(self, p_pu):
        """Per-phase per-unit active power to MW."""
        return np.asarray(p_pu) * self.s_base_phase_mva

    def mw_to_pu(self, p_mw):
        return np.asarray(p_mw) / self.s_base_phase_mva

    @property
    def total_load_mw(self) -> float:
        return float(self.loads.real.sum() * self.s_base_phase_mva)

    def with_loads(self, loads: np.ndarray) -> "Feeder":
        """Copy of the feeder with replaced (N, 3) per-unit loads."""
        buses = tuple(
            replace(b, load=np.array(loads[k]))
            for k, b in enumerate(self.buses)
        )
        return replace(self, buses=buses)

    def to_dict(self) -> dict:
        z_base = self.v_base_kv**2 / self.s_base_mva
        s_phase = self.s_base_phase_mva
        buses = []
        for b in self.buses:
            entry: dict = {"id": int(b.id), "loads": {}}
            for ph in Phase:
                if ph in b.phases:
                    s = b.load[ph] * s_phase
                    entry["loads"][ph.name] = [s.real * 1e3, s.imag * 1e3]
            if b.s_max is not None:
                entry["s_max_kva"] = b.s_max * s_phase * 1e3
            buses.append(entry)
        branches = []
        for br in self.branches:
            z = br.z3 * z_base
            branches.append(
                {
                    "from": int(br.from_bus),
                    "to": int(br.to_bus),
                    "z_ohm": [[[v.real, v.imag] for v in row] for row in z],
                }
            )
        return {
            "s_base_mva": self.s_base_mva,
            "v_base_kv": self.v_base_kv,
            "slack_bus": self.slack_bus,
            "slack_voltage_pu": self.slack_voltage,
            "buses": buses,
            "branches": branches,
        }


@dataclass(frozen=True, eq=False)
class SinglePhaseFeeder:
    """One extracted or approximated phase of a feeder.

    Shares the parent feeder's tree: bus positions, BFS order and parent
    pointers are identical, so per-phase results line up index-for-index
    across phases. Branch ``k`` feeds node ``order[k]``.
    """

    bus_ids: tuple
    slack_pos: int
    order: np.ndarray
    parent_pos: np.ndarray
    r: np.ndarray
    x: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    s_max: np.ndarray | None
    slack_voltage: float
    s_base_phase_mva: float
    provenance: tuple = ()

    def __post_init__(self):
        if np.any(self.r**2 + self.x**2 <= 0):
            raise SchemaError("every extracted branch needs nonzero impedance")
        for name in ("order", "parent_pos", "r", "x", "p_load", "q_load"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name))))
        if self.s_max is not None:
            object.__setattr__(self, "s_max", _readonly(np.asarray(self.s_max)))

    @property
    def n_branches(self) -> int:
        return len(self.order)

    @cached_property
    def pos_in_order(self) -> np.ndarray:
        """Bus position -> branch index; -1 at the slack."""
        inv = np.full(len(self.bus_ids), -1, dtype=int)
        inv[self.order] = np.arange(self.n_branches)
        return _readonly(inv)

    @cached_property
    def parent_edge(self) -> np.ndarray:
        """Branch index of the parent branch per branch; -1 below the slack."""
        pe = np.empty(self.n_branches, dtype=int)
        for k, npos in enumerate(self.order):
            pp = self.parent_pos[npos]
            pe[k] = -1 if pp == self.slack_pos else self.pos_in_order[pp]
        return _readonly(pe)

    def pu_to_mw(self, p_pu):
        return np.asarray(p_pu) * self.s_base_phase_mva


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------


def _require(cond, msg):
    if not cond:
        raise SchemaError(msg)


def parse_feeder(text: str) -> Feeder:
    """Parse feeder-file content (JSON, SI units) into a per-unit Feeder.

    Raises
    ------
    SchemaError
        Malformed or missing fields, with field diagnostics.
    TopologyError
        Branch set is not a rooted spanning tree.
    UnitError
        Non-positive bases or slack voltage.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    _require(isinstance(doc, dict), "top level must be an object")
    for key in ("s_base_mva", "v_base_kv", "slack_bus", "slack_voltage_pu",
                "buses", "branches"):
        _require(key in doc, f"missing top-level key {key!r}")
    s_base = doc["s_base_mva"]
    v_base = doc["v_base_kv"]
    _require(isinstance(s_base, (int, float)), "s_base_mva must be a number")
    _require(isinstance(v_base, (int, float)), "v_base_kv must be a number")
    if s_base <= 0 or v_base <= 0:
        raise UnitError(f"bases must be positive, got s={s_base}, v={v_base}")
    slack_v = doc["slack_voltage_pu"]
    _require(isinstance(slack_v, (int, float)), "slack_voltage_pu must be a number")
    if slack_v <= 0:
        raise UnitError(f"slack_voltage_pu must be positive, got {slack_v}")

    z_base = v_base**2 / s_base
    s_phase_mva = s_base / 3.0

    buses = []
    _require(isinstance(doc["buses"], list), "buses must be an array")
    for k, entry in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        _require("id" in entry, f"{where}: missing id")
        _require(isinstance(entry["id"], int), f"{where}.id: must be an integer")
        loads_doc = entry.get("loads", {})
        _require(isinstance(loads_doc, dict), f"{where}.loads: must be an object")
        load = np.zeros(3, dtype=complex)
        phases = set()
        for token, pair in loads_doc.items():
            ph = Phase.parse(token)
            _require(
                isinstance(pair, list) and len(pair) == 2
                and all(isinstance(v, (int, float)) for v in pair),
                f"{where}.loads.{token}: expected [p_kw, q_kvar]",
            )
            phases.add(ph)
            load[ph] = (pair[0] + 1j * pair[1]) / 1e3 / s_phase_mva
        s_max = None
        if "s_max_kva" in entry:
            raw = entry["s_max_kva"]
            _require(isinstance(raw, (int, float)), f"{where}.s_max_kva: number")
            s_max = raw / 1e3 / s_phase_mva
        # buses may exist on phases beyond those with loads: infer presence
        # from incident branches afterwards; start with load phases
        buses.append((entry["id"], phases, load, s_max, where))

    branches = []
    _require(isinstance(doc["branches"], list), "branches must be an array")
    for k, entry in enumerate(doc["branches"]):
        where = f"branches[{k}]"
        _require(isinstance(entry, dict), f"{where}: must be an object")
        for key in ("from", "to", "z_ohm"):
            _require(key in entry, f"{where}: missing {key!r}")
        z_doc = entry["z_ohm"]
        _require(
            isinstance(z_doc, list) and len(z_doc) == 3,
            f"{where}.z_ohm: expected 3x3 array",
        )
        z = np.zeros((3, 3), dtype=complex)
        for r, row in enumerate(z_doc):
            _require(
                isinstance(row, list) and len(row) == 3,
                f"{where}.z_ohm[{r}]: expected 3 [re, im] pairs",
            )
            for c, pair in enumerate(row):
                _require(
                    isinstance(pair, list) and len(pair) == 2
                    and all(isinstance(v, (int, float)) for v in pair),
                    f"{where}.z_ohm[{r}][{c}]: expected [re, im]",
                )
                z[r, c] = (pair[0] + 1j * pair[1]) / z_base
        try:
            branches.append(Branch(entry["from"], entry["to"], z))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None

    # phase presence at a bus: union of load phases and incident branch phases
    incident: dict = {}
    for br in branches:
        for bid in (br.from_bus, br.to_bus):
            incident.setdefault(bid, set()).update(br.phases)
    bus_objs = []
    for bid, phases, load, s_max, where in buses:
        present = frozenset(phases | incident.get(bid, set()))
        try:
            bus_objs.append(Bus(bid, present, load, s_max))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None

    return Feeder(
        buses=tuple(bus_objs),
        branches=tuple(branches),
        slack_bus=doc["slack_bus"],
        slack_voltage=float(slack_v),
        s_base_mva=float(s_base),
        v_base_kv=float(v_base),
    )


def serialize_feeder(feeder: Feeder) -> str:
    """Feeder back to its JSON file form (SI units), canonical key order."""
    return json.dumps(feeder.to_dict(), indent=2, sort_keys=True)


def feeder_allclose(a: Feeder, b: Feeder, tol: float = 1e-12) -> bool:
    """Field-by-field equality of two feeders within ``tol`` (per-unit)."""
    if (
        a.slack_bus != b.slack_bus
        or abs(a.slack_voltage - b.slack_voltage) > tol
        or abs(a.s_base_mva - b.s_base_mva) > tol
        or abs(a.v_base_kv - b.v_base_kv) > tol
        or [x.id for x in a.buses] != [x.id for x in b.buses]
    ):
        return False
    for ba, bb in zip(a.buses, b.buses):
        if ba.phases != bb.phases or np.abs(ba.load - bb.load).max() > tol:
            return False
        if (ba.s_max is None) != (bb.s_max is None):
            return False
        if ba.s_max is not None and abs(ba.s_max - bb.s_max) > tol:
            return False
    for ra, rb in zip(a.branches, b.branches):
        if (ra.from_bus, ra.to_bus) != (rb.from_bus, rb.to_bus):
            return False
        if np.abs(ra.z3 - rb.z3).max() > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# per-phase reductions
# ---------------------------------------------------------------------------

EXTRACTION_MODES = ("diagonal", "decoupled", "decoupled_approx")


def _subtree_phase_load(feeder: Feeder, phase: Phase) -> np.ndarray:
    """|S| of the given phase at-or-below each bus position."""
    acc = np.abs(feeder.loads[:, phase]).astype(float)
    for npos in feeder.order[::-1]:
        acc[feeder.parent_pos[npos]] += acc[npos]
    return acc


def extract_phase(
    feeder: Feeder, phase: Phase, impedance_mode: str = "diagonal"
) -> SinglePhaseFeeder:
    """Extract one phase of the feeder as a single-phase radial network.

    impedance_mode
        ``diagonal``          self impedance of the phase, unchanged;
        ``decoupled``         self minus the (identical) mutual impedance,
                              which makes the phase exact whenever phase
                              currents sum to zero on every branch;
        ``decoupled_approx``  self minus the mean of the three mutuals.

    Branches without the phase pass through with a negligible impedance as
    long as no downstream load sits on the phase; otherwise ``MissingPhase``.
    """
    if impedance_mode not in EXTRACTION_MODES:
        raise ArgumentError(f"unknown impedance mode {impedance_mode!r}")
    phase = Phase(phase)
    below = _subtree_phase_load(feeder, phase)
    n = len(feeder.order)
    r = np.empty(n)
    x = np.empty(n)
    p = np.empty(n)
    q = np.empty(n)
    s_max = np.full(n, np.inf)
    any_smax = False
    for k, npos in enumerate(feeder.order):
        z3 = feeder.z3_of_node[k]
        if z3[phase, phase] == 0:
            if below[npos] > 0:
                bus = feeder.buses[npos]
                raise MissingPhase(
                    f"phase {phase.name} is absent on the branch feeding bus "
                    f"{bus.id} but carries downstream load"
                )
            z = complex(PASSTHROUGH_IMPEDANCE, 0.0)
        elif impedance_mode == "diagonal":
            z = z3[phase, phase]
        else:
            mutuals = np.array([z3[0, 1], z3[0, 2], z3[1, 2]])
            if impedance_mode == "decoupled":
                spread = np.abs(mutuals - mutuals[0]).max()
                if spread > MUTUAL_SYMMETRY_TOL:
                    raise NonTransposed(
                        f"mutual impedances differ by {spread:.2e} pu on branch "
                        f"feeding bus {feeder.buses[npos].id}"
                    )
                zm = mutuals[0]
            else:
                zm = mutuals.mean()
            z = z3[phase, phase] - zm
        r[k], x[k] = z.real, z.imag
        bus = feeder.buses[npos]
        p[k], q[k] = bus.load[phase].real, bus.load[phase].imag
        if bus.s_max is not None:
            s_max[k] = bus.s_max
            any_smax = True
    return SinglePhaseFeeder(
        bus_ids=tuple(b.id for b in feeder.buses),
        slack_pos=feeder.bus_pos[feeder.slack_bus],
        order=feeder.order.copy(),
        parent_pos=feeder.parent_pos.copy(),
        r=r,
        x=x,
        p_load=p,
        q_load=q,
        s_max=s_max if any_smax else None,
        slack_voltage=feeder.slack_voltage,
        s_base_phase_mva=feeder.s_base_phase_mva,
        provenance=(("method", "extract_phase"), ("phase", phase.name),
                    ("impedance_mode", impedance_mode)),
    )


def balance_approximation(feeder: Feeder, variant: str = "average") -> SinglePhaseFeeder:
    """Collapse the three phases into one balanced single-phase equivalent.

    ``worst_case`` keeps, per branch, the present-phase self impedance with
    the largest magnitude and, per node, the smallest per-phase active load;
    ``average`` takes arithmetic means of present-phase impedances and loads.
    """
    if variant not in ("worst_case", "average"):
        raise ArgumentError(f"unknown balance variant {variant!r}")
    n = len(feeder.order)
    r = np.empty(n)
    x = np.empty(n)
    p = np.empty(n)
    q = np.empty(n)
    s_max = np.full(n, np.inf)
    any_smax = False
    for k, npos in enumerate(feeder.order):
        diag = np.diag(feeder.z3_of_node[k])
        present = [ph for ph in Phase if diag[ph] != 0]
        zs = np.array([diag[ph] for ph in present])
        bus = feeder.buses[npos]
        bus_present = sorted(bus.phases) or present
        loads = np.array([bus.load[ph] for ph in bus_present])
        if variant == "worst_case":
            z = zs[np.argmax(np.abs(zs))]
            s = loads[np.argmin(loads.real)]
        else:
            # mean as first + mean deviation: already-balanced inputs come
            # back bit-identical
            z = zs[0] + (zs - zs[0]).mean()
            s = loads[0] + (loads - loads[0]).mean()
        r[k], x[k] = z.real, z.imag
        p[k], q[k] = s.real, s.imag
        if bus.s_max is not None:
            s_max[k] = bus.s_max
            any_smax = True
    return SinglePhaseFeeder(
        bus_ids=tuple(b.id for b in feeder.buses),
        slack_pos=feeder.bus_pos[feeder.slack_bus],
        order=feeder.order.copy(),
        parent_pos=feeder.parent_pos.copy(),
        r=r,
        x=x,
        p_load=p,
        q_load=q,
        s_max=s_max if any_smax else None,
        slack_voltage=feeder.slack_voltage,
        s_base_phase_mva=feeder.s_base_phase_mva,
        provenance=(("method", "balance_approximation"), ("variant", variant)),
    )


# ---------------------------------------------------------------------------
# load scenarios
# ---------------------------------------------------------------------------

SCENARIOS = ("i", "ii", "iii")


def apply_scenario(feeder: Feeder, scenario: str) -> Feeder:
    """Unbalance the loads: boost phase c by 20 %, shed phase b by 20 %,
    then optionally swap two phases' loads.

    ``i``    boost/shed only;
    ``ii``   boost/shed, then swap loads of phases b and c;
    ``iii``  boost/shed, then swap loads of phases a and b.

    Power factors are preserved (p and q scale identically); topology and
    impedances are untouched.
    """
    if scenario not in SCENARIOS:
        raise ArgumentError(f"unknown scenario {scenario!r}")
    loads = feeder.loads.copy()
    loads[:, Phase.c] *= 1.20
    loads[:, Phase.b] *= 0.80
    if scenario == "ii":
        loads[:, [Phase.b, Phase.c]] = loads[:, [Phase.c, Phase.b]]
    elif scenario == "iii":
        loads[:, [Phase.a, Phase.b]] = loads[:, [Phase.b, Phase.a]]
    return feeder.with_loads(loads)


# ---------------------------------------------------------------------------
# synthetic feeder generation
# ---------------------------------------------------------------------------


def generate_synthetic_feeder(
    n_buses: int, seed: int, unbalance: float = 0.0
) -> Feeder:
    """Deterministic random radial feeder for scale and property testing.

    The tree starts with a guaranteed backbone of depth ceil(log2(n_buses));
    remaining buses attach to uniformly random existing buses. Branch
    impedances use medium-voltage magnitudes with r/x in [0.5, 2], equal
    mutual impedances around one third of the self impedance, and are
    rescaled so the estimated base-case voltage drop stays below 5 %.
    Per-phase loads are perturbed by up to +/-``unbalance``; at zero
    unbalance the feeder is perfectly transposed and balanced.
    """
    if n_buses < 2:
        raise ArgumentError(f"n_buses must be >= 2, got {n_buses}")
    if not 0 <= unbalance <= 0.5:
        raise ArgumentError(f"unbalance must be within [0, 0.5], got {unbalance}")
    rng = np.random.default_rng(seed)
    s_base, v_base = 2.0, 7.2
    z_base = v_base**2 / s_base
    s_phase = s_base / 3.0

    # topology: backbone chain guarantees depth >= log2(n)
    depth_min = max(1, math.ceil(math.log2(n_buses)))
    parents = np.empty(n_buses, dtype=int)
    parents[0] = -1
    for k in range(1, n_buses):
        if k <= depth_min:
            parents[k] = k - 1
        else:
            parents[k] = rng.integers(0, k)

    # loads: leaves always carry load, interior buses with probability 0.4
    is_parent = np.zeros(n_buses, dtype=bool)
    is_parent[parents[1:]] = True
    p_kw = np.zeros(n_buses)
    for k in range(1, n_buses):
        loaded = (not is_parent[k]) or rng.random() < 0.4
        if loaded:
            p_kw[k] = rng.uniform(8.0, 30.0)
    tan_phi = math.tan(math.acos(0.90))
    # interconnection limit per node and phase, kVA (service transformer
    # ratings keep nodal DER sizes realistic and the programs well scaled)
    s_max_kva = rng.uniform(50.0, 200.0, size=n_buses)

    # per-branch impedances, ohm
    n_br = n_buses - 1
    z_mag = rng.uniform(0.2, 1.2, size=n_br)
    rx = rng.uniform(0.5, 2.0, size=n_br)
    r_ohm = z_mag * rx / np.sqrt(1 + rx**2)
    x_ohm = z_mag / np.sqrt(1 + rx**2)
    zm_scale = rng.uniform(0.8, 1.2, size=n_br) / 3.0

    # per-phase unbalance multipliers
    mult = 1.0 + unbalance * rng.uniform(-1.0, 1.0, size=(n_buses, 3))
    self_jitter = 1.0 + 0.5 * unbalance * rng.uniform(-1.0, 1.0, size=(n_br, 3))

    # rescale impedances so the linearized base-case drop stays below 5 %:
    # squared-voltage drop of roughly 2*sum(r P + x Q) along the worst path
    p_pu = p_kw / 1e3 / s_phase
    below = p_pu.copy()
    for k in range(n_buses - 1, 0, -1):
        below[parents[k]] += below[k]
    drop = np.zeros(n_buses)
    for k in range(1, n_buses):
        rpu, xpu = r_ohm[k - 1] / z_base, x_ohm[k - 1] / z_base
        drop[k] = drop[parents[k]] + 2 * (rpu + xpu * tan_phi) * below[k]
    worst = drop.max()
    target = 0.06  # squared-voltage units, roughly a 3 % magnitude drop
    if worst > 0.08:
        scale = 0.08 / worst
    elif 0 < worst < 0.01:
        scale = min(target / worst, 50.0)
    else:
        scale = 1.0
    r_ohm *= scale
    x_ohm *= scale

    buses = [Bus(0, frozenset(Phase), np.zeros(3, dtype=complex))]
    for k in range(1, n_buses):
        s = p_pu[k] * (1 + 1j * tan_phi) * mult[k]
        buses.append(
            Bus(k, frozenset(Phase), s.astype(complex),
                s_max=s_max_kva[k] / 1e3 / s_phase)
        )
    branches = []
    for k in range(1, n_buses):
        e = k - 1
        z_self = (r_ohm[e] + 1j * x_ohm[e]) / z_base
        zm = z_self * zm_scale[e]
        z3 = np.full((3, 3), zm, dtype=complex)
        np.fill_diagonal(z3, z_self * self_jitter[e])
        branches.append(Branch(int(parents[k]), k, z3))
    return Feeder(
        buses=tuple(buses),
        branches=tuple(branches),
        slack_bus=0,
        slack_voltage=1.0,
        s_base_mva=s_base,
        v_base_kv=v_base,
    )
