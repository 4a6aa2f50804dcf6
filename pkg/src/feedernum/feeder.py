"""Radial feeder model: topology ingestion, routing matrix, link capacities.

The feeder is a tree of buses connected by lines (current-carrying links).
Every charger and base load attaches to a bus; its route is the unique
line path from the feeder head to that bus. Under the constant-voltage
assumption a load of P kW draws P*1000/V amperes, so link capacities are
simply ampacity minus the accumulated base-load current.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440

# 20 kW charger, balanced over three phases at 240 V nominal
DEFAULT_CHARGER_KW = 20.0
DEFAULT_VOLTAGE = 240.0
DEFAULT_CHARGER_MAX_A = DEFAULT_CHARGER_KW * 1000.0 / (3.0 * DEFAULT_VOLTAGE)


class FeederError(ValueError):
    """Base class for feeder ingestion/validation failures."""


class TopologyError(FeederError):
    """Graph is not a connected radial tree rooted at the source."""


class LineCodeError(FeederError):
    """A line references a code missing from the ampacity table."""


class LoadDataError(FeederError):
    """Load or load-shape data is missing or malformed."""


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    phases: int
    code: str
    ampacity: float
    length_m: float = 0.0

    def __post_init__(self):
        if self.ampacity <= 0:
            raise FeederError(f"line {self.id}: ampacity must be > 0")


@dataclass(frozen=True)
class ChargerSite:
    id: int
    bus: int
    max_rate_a: float = DEFAULT_CHARGER_MAX_A
    weight: float = 1.0

    def __post_init__(self):
        if self.max_rate_a <= 0 or self.weight <= 0:
            raise FeederError(f"charger {self.id}: max rate and weight must be > 0")


@dataclass(frozen=True)
class BaseLoad:
    id: int
    bus: int
    phase: int  # 1..3
    shape_name: str


@dataclass(frozen=True)
class LoadShape:
    bus: int
    samples: np.ndarray  # 1440 per-minute kW values

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.shape != (MINUTES_PER_DAY,):
            raise LoadDataError(
                f"load shape for bus {self.bus}: expected {MINUTES_PER_DAY} samples, "
                f"got {samples.shape}"
            )
        if np.any(samples < 0):
            raise LoadDataError(f"load shape for bus {self.bus}: negative kW sample")
        object.__setattr__(self, "samples", samples)


@dataclass
class Feeder:
    """Validated radial feeder. Immutable after construction."""

    buses: list[int]
    lines: list[Line]
    chargers: list[ChargerSite]
    loads: list[BaseLoad]
    source_bus: int
    # derived: parent line index (0-based, into self.lines) per bus
    _parent_line: dict[int, int] = field(default_factory=dict, repr=False)
    _depth: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._validate_tree()

    def _validate_tree(self):
        bus_set = set(self.buses)
        if len(bus_set) != len(self.buses):
            raise TopologyError("duplicate bus identifiers")
        if self.source_bus not in bus_set:
            raise TopologyError(f"source bus {self.source_bus} not among buses")
        if len(self.lines) != len(self.buses) - 1:
            raise TopologyError(
                f"{len(self.lines)} lines for {len(self.buses)} buses; "
                "a radial feeder needs exactly |buses|-1"
            )
        children: dict[int, list[tuple[int, int]]] = {b: [] for b in self.buses}
        for idx, ln in enumerate(self.lines):
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"line {ln.id}: self-loop at bus {ln.from_bus}")
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise TopologyError(f"line {ln.id}: endpoint not a known bus")
            children[ln.from_bus].append((ln.to_bus, idx))
            children[ln.to_bus].append((ln.from_bus, idx))

        # BFS from the source; a revisited bus means a cycle, an unreached
        # bus means a disconnected island.
        parent_line: dict[int, int] = {}
        depth = {self.source_bus: 0}
        frontier = [self.source_bus]
        while frontier:
            nxt = []
            for bus in frontier:
                for other, idx in children[bus]:
                    if other == self.source_bus or other in depth:
                        if parent_line.get(bus) == idx:
                            continue  # the edge we came in on
                        raise TopologyError(f"cycle detected through bus {other}")
                    depth[other] = depth[bus] + 1
                    parent_line[other] = idx
                    nxt.append(other)
            frontier = nxt
        missing = bus_set - set(depth)
        if missing:
            raise TopologyError(f"buses disconnected from source: {sorted(missing)[:5]}")

        for ch in self.chargers:
            if ch.bus not in bus_set:
                raise TopologyError(f"charger {ch.id} attached to unknown bus {ch.bus}")
        for ld in self.loads:
            if ld.bus not in bus_set:
                raise TopologyError(f"load {ld.id} attached to unknown bus {ld.bus}")

        self._parent_line = parent_line
        self._depth = depth

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_chargers(self) -> int:
        return len(self.chargers)

    def path_to(self, bus: int) -> list[int]:
        """0-based line indices on the unique source->bus path, head first."""
        path = []
        while bus != self.source_bus:
            idx = self._parent_line[bus]
            path.append(idx)
            ln = self.lines[idx]
            bus = ln.from_bus if ln.to_bus == bus else ln.to_bus
        path.reverse()
        return path

    def bus_depth(self, bus: int) -> int:
        return self._depth[bus]

    def head_line_index(self) -> int:
        """0-based index of the line incident to the source bus."""
        for idx, ln in enumerate(self.lines):
            if self.source_bus in (ln.from_bus, ln.to_bus):
                return idx
        raise TopologyError("no line incident to the source bus")


@dataclass(frozen=True)
class RoutingMatrix:
    """Sparse 0/1 routing matrix: links x chargers.

    Stored as per-charger route sets and per-link user sets (both 0-based
    int32 arrays). `labels[l]` is the external name of link l, e.g. "17"
    or "17.b" for the second phase link of line 17.
    """

    m: int
    n: int
    routes: tuple[np.ndarray, ...]  # per charger: link indices on its route
    users: tuple[np.ndarray, ...]   # per link: charger indices using it
    labels: tuple[str, ...]

    def dense(self) -> np.ndarray:
        r = np.zeros((self.m, self.n), dtype=np.int8)
        for i, route in enumerate(self.routes):
            r[route, i] = 1
        return r

    def route_lengths(self) -> np.ndarray:
        return np.array([len(r) for r in self.routes], dtype=np.int64)

    def users_per_link(self) -> np.ndarray:
        return np.array([len(u) for u in self.users], dtype=np.int64)

    def subset(self, charger_idx: np.ndarray) -> "RoutingMatrix":
        """Routing restricted to the given charger columns (order kept)."""
        charger_idx = np.asarray(charger_idx, dtype=np.int64)
        routes = tuple(self.routes[i] for i in charger_idx)
        return routing_from_routes(self.m, routes, self.labels)

    def truncate_links(self, m_keep: int) -> "RoutingMatrix":
        """Keep the first m_keep links; routes become their retained prefix.

        Valid when link order is head-to-leaf along every route (true for
        feeders parsed from head-ordered files): dropping a link drops all
        deeper ones, which reattaches each charger at the cut boundary.
        """
        routes = tuple(r[r < m_keep] for r in self.routes)
        if any(len(r) == 0 for r in routes):
            raise FeederError("truncation left a charger with an empty route")
        return routing_from_routes(m_keep, routes, self.labels[:m_keep])


def routing_from_routes(
    m: int, routes: tuple[np.ndarray, ...], labels: tuple[str, ...] | None = None
) -> RoutingMatrix:
    users: list[list[int]] = [[] for _ in range(m)]
    for i, route in enumerate(routes):
        for l in route:
            users[l].append(i)
    if labels is None:
        labels = tuple(str(l + 1) for l in range(m))
    return RoutingMatrix(
        m=m,
        n=len(routes),
        routes=tuple(np.asarray(r, dtype=np.int32) for r in routes),
        users=tuple(np.asarray(u, dtype=np.int32) for u in users),
        labels=tuple(labels),
    )


def default_ampacity_table() -> dict[str, float]:
    with resources.files("feedernum.data").joinpath("ampacity_default.csv").open() as fh:
        df = pd.read_csv(fh)
    return dict(zip(df["line_code"], df["ampacity_a"].astype(float)))


def load_ampacity_table(path: str | Path) -> dict[str, float]:
    df = pd.read_csv(path)
    if not {"line_code", "ampacity_a"} <= set(df.columns):
        raise FeederError(f"{path}: expected header line_code,ampacity_a")
    return dict(zip(df["line_code"], df["ampacity_a"].astype(float)))


def parse_feeder(
    lines_file: str | Path,
    codes_file: str | Path | None,
    loads_file: str | Path,
    charger_max_rate_a: float = DEFAULT_CHARGER_MAX_A,
    charger_weight: float = 1.0,
) -> Feeder:
    """Read lines/codes/loads CSVs into a validated Feeder.

    Every load site gets one co-located charger (sites are numbered in
    loads-file order). codes_file=None falls back to the built-in table.
    """
    lines_file, loads_file = Path(lines_file), Path(loads_file)
    for f in (lines_file, loads_file):
        if not f.exists():
            raise FeederError(f"input file not found: {f}")
    codes = default_ampacity_table()
    if codes_file is not None:
        if not Path(codes_file).exists():
            raise FeederError(f"input file not found: {codes_file}")
        codes.update(load_ampacity_table(codes_file))

    ldf = pd.read_csv(lines_file)
    expected = {"line_id", "from_bus", "to_bus", "phases", "line_code", "length_m"}
    if not expected <= set(ldf.columns):
        raise FeederError(f"{lines_file}: expected header {sorted(expected)}")
    lines = []
    for row in ldf.itertuples(index=False):
        code = str(row.line_code)
        if code not in codes:
            raise LineCodeError(f"line {row.line_id}: unknown line code {code!r}")
        lines.append(
            Line(
                id=int(row.line_id),
                from_bus=int(row.from_bus),
                to_bus=int(row.to_bus),
                phases=int(row.phases),
                code=code,
                ampacity=float(codes[code]),
                length_m=float(row.length_m),
            )
        )

    buses = sorted({ln.from_bus for ln in lines} | {ln.to_bus for ln in lines})
    # the feeder head is the unique bus that is never a to_bus
    to_set = {ln.to_bus for ln in lines}
    roots = [b for b in buses if b not in to_set]
    if len(roots) != 1:
        raise TopologyError(f"expected one source bus, found candidates {roots[:5]}")

    pdf = pd.read_csv(loads_file)
    expected = {"load_id", "bus", "phase", "shape_file"}
    if not expected <= set(pdf.columns):
        raise FeederError(f"{loads_file}: expected header {sorted(expected)}")
    loads, chargers = [], []
    for k, row in enumerate(pdf.itertuples(index=False)):
        loads.append(
            BaseLoad(
                id=int(row.load_id),
                bus=int(row.bus),
                phase=int(row.phase),
                shape_name=str(row.shape_file),
            )
        )
        chargers.append(
            ChargerSite(
                id=k + 1,
                bus=int(row.bus),
                max_rate_a=charger_max_rate_a,
                weight=charger_weight,
            )
        )

    return Feeder(
        buses=buses, lines=lines, chargers=chargers, loads=loads, source_bus=roots[0]
    )


def write_feeder(feeder: Feeder, lines_file: str | Path, codes_file: str | Path,
                 loads_file: str | Path) -> None:
    """Serialize back to the three CSVs (inverse of parse_feeder)."""
    with open(lines_file, "w", encoding="utf-8") as fh:
        fh.write("line_id,from_bus,to_bus,phases,line_code,length_m\n")
        for ln in feeder.lines:
            fh.write(f"{ln.id},{ln.from_bus},{ln.to_bus},{ln.phases},{ln.code},{ln.length_m:.12g}\n")
    codes = sorted({(ln.code, ln.ampacity) for ln in feeder.lines})
    with open(codes_file, "w", encoding="utf-8") as fh:
        fh.write("line_code,ampacity_a\n")
        for code, amp in codes:
            fh.write(f"{code},{amp:.12g}\n")
    with open(loads_file, "w", encoding="utf-8") as fh:
        fh.write("load_id,bus,phase,shape_file\n")
        for ld in feeder.loads:
            fh.write(f"{ld.id},{ld.bus},{ld.phase},{ld.shape_name}\n")


def read_load_shapes(feeder: Feeder, shapes_dir: str | Path) -> list[LoadShape]:
    """Load one shape file per base load, keyed by the load's bus."""
    shapes_dir = Path(shapes_dir)
    shapes = []
    for ld in feeder.loads:
        path = shapes_dir / ld.shape_name
        if not path.exists():
            raise LoadDataError(f"load {ld.id}: shape file missing: {path}")
        samples = np.loadtxt(path, dtype=float, ndmin=1)
        shapes.append(LoadShape(bus=ld.bus, samples=samples))
    return shapes


def _phase_links(route: list[int], phase: int | None) -> np.ndarray:
    """Map physical line indices to per-phase link indices.

    phase=None means balanced: all three phase links of each line.
    """
    if phase is None:
        out = np.empty(3 * len(route), dtype=np.int32)
        for k, l in enumerate(route):
            out[3 * k : 3 * k + 3] = (3 * l, 3 * l + 1, 3 * l + 2)
        return out
    return np.array([3 * l + (phase - 1) for l in route], dtype=np.int32)


def build_routing_matrix(feeder: Feeder, three_phase: bool = False) -> RoutingMatrix:
    """Routing matrix R_li = 1 iff link l lies on the path to charger i.

    Single-phase: one link per line, M = n_lines. Three-phase: each line
    expands to 3 per-phase links and chargers draw balanced current, so a
    charger's route contains all three phase links of every traversed line.
    """
    routes = []
    for ch in feeder.chargers:
        path = feeder.path_to(ch.bus)
        if not path:
            raise TopologyError(f"charger {ch.id} sits on the source bus; no route")
        if three_phase:
            routes.append(_phase_links(path, None))
        else:
            routes.append(np.asarray(path, dtype=np.int32))
    if three_phase:
        labels = []
        for ln in feeder.lines:
            labels += [f"{ln.id}.a", f"{ln.id}.b", f"{ln.id}.c"]
        m = 3 * feeder.n_lines
    else:
        labels = [str(ln.id) for ln in feeder.lines]
        m = feeder.n_lines
    return routing_from_routes(m, tuple(routes), tuple(labels))


def ampacity_vector(feeder: Feeder, three_phase: bool = False) -> np.ndarray:
    amp = np.array([ln.ampacity for ln in feeder.lines], dtype=float)
    return np.repeat(amp, 3) if three_phase else amp


def base_current(
    feeder: Feeder,
    load_shapes: list[LoadShape],
    minute: int,
    nominal_voltage: float = DEFAULT_VOLTAGE,
    three_phase: bool = False,
) -> np.ndarray:
    """Base-load current per link at the given minute.

    Single-phase mode lumps every load onto the line's single link;
    three-phase mode routes each load's current on its own phase link.
    """
    if not 0 <= minute < MINUTES_PER_DAY:
        raise LoadDataError(f"minute {minute} out of range")
    if nominal_voltage <= 0:
        raise LoadDataError("nominal voltage must be > 0")
    by_bus = {s.bus: s for s in load_shapes}
    m = 3 * feeder.n_lines if three_phase else feeder.n_lines
    cur = np.zeros(m, dtype=float)
    for ld in feeder.loads:
        shape = by_bus.get(ld.bus)
        if shape is None:
            raise LoadDataError(f"no load shape for load bus {ld.bus}")
        amps = shape.samples[minute] * 1000.0 / nominal_voltage
        path = feeder.path_to(ld.bus)
        links = _phase_links(path, ld.phase) if three_phase else np.asarray(path)
        cur[links] += amps
    return cur


def available_capacity(
    feeder: Feeder,
    load_shapes: list[LoadShape],
    minute: int,
    nominal_voltage: float = DEFAULT_VOLTAGE,
    three_phase: bool = False,
) -> np.ndarray:
    """Link headroom c = ampacity - base current, clamped at zero.

    A clamped link means the base load alone already violates ampacity;
    that is reported as a warning and shows up in loading reports.
    """
    amp = ampacity_vector(feeder, three_phase)
    c = amp - base_current(feeder, load_shapes, minute, nominal_voltage, three_phase)
    clipped = c < 0
    if np.any(clipped):
        logger.warning(
            "base load exceeds ampacity on %d link(s) at minute %d; capacity clamped to 0",
            int(clipped.sum()),
            minute,
        )
        c = np.maximum(c, 0.0)
    return c
