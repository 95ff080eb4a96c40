"""Power network graph, physical parameters and matrix operators.

Buses carry an inertia ``M``, a damping ``E`` and an active power injection
``p`` (optionally time-scheduled). Lines carry a susceptance ``b``. Each line
is oriented with its lower bus id as the positive end, so the incidence matrix
and the edge angles ``lambda = D @ theta`` are reproducible.

Internally every frequency is in rad/s. A network file declared in ``hz``
stores frequency bounds in Hz and the frequency coefficients ``M`` and ``E``
per Hz; both are rescaled by 2*pi on ingestion.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .controller import ClassK, ControlledBusSpec
from .errors import ParseError, ValidationError

TWO_PI = 2.0 * math.pi
FREQUENCY_UNITS = ("hz", "rad_s")

DATA_DIR = Path(__file__).parent / "data"


def bundled_network_path(name: str) -> Path:
    """Path of a dataset shipped with the package (``ieee39`` or ``two_bus``)."""
    path = DATA_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.exists():
        raise FileNotFoundError(path)
    return path


# ---------------------------------------------------------------------------
# Injection schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSegment:
    """Override of a bus injection on the half-open window ``[start, stop)``.

    ``kind == "constant"`` sets ``p = value``; ``kind == "sinusoid"`` sets
    ``p = (1 + amplitude_frac * sin(2*pi*t/period + phase)) * base``.
    """

    start: float
    stop: float
    kind: str
    value: float = 0.0
    amplitude_frac: float = 0.0
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "sinusoid"):
            raise ValidationError(f"unknown schedule segment kind {self.kind!r}")
        if not self.stop > self.start:
            raise ValidationError(f"empty schedule window [{self.start}, {self.stop})")
        if self.kind == "sinusoid" and not self.period > 0:
            raise ValidationError("sinusoid period must be positive")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ScheduleSegment":
        try:
            window = raw["window"]
            start = float(window[0])
            stop = math.inf if window[1] is None else float(window[1])
            kind = str(raw["kind"])
            if kind == "constant":
                return cls(start, stop, kind, value=float(raw["value"]))
            return cls(
                start,
                stop,
                kind,
                amplitude_frac=float(raw["amplitude_frac"]),
                period=float(raw["period"]),
                phase=float(raw.get("phase", 0.0)),
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ParseError(f"malformed schedule segment {raw!r}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "window": [self.start, None if math.isinf(self.stop) else self.stop],
            "kind": self.kind,
        }
        if self.kind == "constant":
            out["value"] = self.value
        else:
            out.update(amplitude_frac=self.amplitude_frac, period=self.period, phase=self.phase)
        return out


class InjectionProfile:
    """Vectorized evaluator of all bus injections ``p(t)``.

    Window membership is half-open ``[start, stop)``. With ``left=True`` the
    left limit is taken instead (``(start, stop]``), which lets a fixed-step
    integrator treat each step as lying inside a single segment.
    """

    def __init__(self, base: np.ndarray, segments: Sequence[tuple[int, ScheduleSegment]]):
        self.base = np.asarray(base, dtype=float).copy()
        self.base.setflags(write=False)
        self._segments = tuple(segments)
        seg_bus = np.array([b for b, _ in segments], dtype=int)
        self._bus = seg_bus
        self._start = np.array([s.start for _, s in segments], dtype=float)
        self._stop = np.array([s.stop for _, s in segments], dtype=float)
        self._is_sin = np.array([s.kind == "sinusoid" for _, s in segments], dtype=bool)
        self._value = np.array([s.value for _, s in segments], dtype=float)
        self._amp = np.array([s.amplitude_frac for _, s in segments], dtype=float)
        self._freq = np.array([TWO_PI / s.period for _, s in segments], dtype=float)
        self._phase = np.array([s.phase for _, s in segments], dtype=float)
        self._check_overlaps()

    def _check_overlaps(self) -> None:
        for bus in np.unique(self._bus):
            idx = np.flatnonzero(self._bus == bus)
            order = idx[np.argsort(self._start[idx])]
            if np.any(self._start[order][1:] < self._stop[order][:-1]):
                raise ValidationError(f"overlapping schedule windows on bus index {bus}")

    @property
    def segments(self) -> tuple[tuple[int, ScheduleSegment], ...]:
        return self._segments

    @property
    def is_constant(self) -> bool:
        return not self._segments

    def breakpoints(self) -> np.ndarray:
        """All finite window edges."""
        pts = np.concatenate([self._start, self._stop])
        return np.unique(pts[np.isfinite(pts)])

    def __call__(self, t: float, left: bool = False) -> np.ndarray:
        p = self.base.copy()
        if not self._segments:
            return p
        if left:
            active = (t > self._start) & (t <= self._stop)
        else:
            active = (t >= self._start) & (t < self._stop)
        if not active.any():
            return p
        bus = self._bus[active]
        vals = np.where(
            self._is_sin[active],
            (1.0 + self._amp[active] * np.sin(self._freq[active] * t + self._phase[active]))
            * self.base[bus],
            self._value[active],
        )
        p[bus] = vals
        return p


# ---------------------------------------------------------------------------
# Graph elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bus:
    id: int
    inertia_M: float
    damping_E: float
    power_p: float
    schedule: tuple[ScheduleSegment, ...] = ()
    generator: bool = False

    def __post_init__(self) -> None:
        if not (self.inertia_M > 0 and math.isfinite(self.inertia_M)):
            raise ValidationError(f"bus {self.id}: inertia M must be positive, got {self.inertia_M}")
        if not (self.damping_E > 0 and math.isfinite(self.damping_E)):
            raise ValidationError(f"bus {self.id}: damping E must be positive, got {self.damping_E}")
        if not math.isfinite(self.power_p):
            raise ValidationError(f"bus {self.id}: injection p must be finite")
        segs = sorted(self.schedule, key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.stop:
                raise ValidationError(f"bus {self.id}: overlapping schedule windows")


@dataclass(frozen=True)
class TransmissionLine:
    """Line between two buses; ``endpoints[0]`` is the positive end."""

    endpoints: tuple[int, int]
    susceptance_b: float

    def __post_init__(self) -> None:
        a, b = self.endpoints
        if a == b:
            raise ValidationError(f"line ({a}, {b}) is a self-loop")
        if not (self.susceptance_b > 0 and math.isfinite(self.susceptance_b)):
            raise ValidationError(f"line ({a}, {b}): susceptance must be positive")

    @classmethod
    def oriented(cls, i: int, j: int, b: float) -> "TransmissionLine":
        """Build a line with the lower bus id as positive end."""
        return cls((min(i, j), max(i, j)), b)


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[TransmissionLine, ...]
    controllers: tuple[ControlledBusSpec, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus ids")
        if not self.buses:
            raise ValidationError("network has no buses")
        known = set(ids)
        seen: set[tuple[int, int]] = set()
        for line in self.lines:
            for end in line.endpoints:
                if end not in known:
                    raise ValidationError(f"line {line.endpoints} references unknown bus {end}")
            key = (min(line.endpoints), max(line.endpoints))
            if key in seen:
                raise ValidationError(f"duplicate edge {key}")
            seen.add(key)
        ctrl_ids = [c.bus_id for c in self.controllers]
        if len(set(ctrl_ids)) != len(ctrl_ids):
            raise ValidationError("bus controlled twice")
        for cid in ctrl_ids:
            if cid not in known:
                raise ValidationError(f"controlled id {cid} is not a bus")
        if not self._connected():
            raise ValidationError("network graph is disconnected")

    def _connected(self) -> bool:
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for line in self.lines:
            a, b = line.endpoints
            adj[a].append(b)
            adj[b].append(a)
        start = self.buses[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == len(self.buses)

    # -- sizes and lookups ---------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def m(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @cached_property
    def _index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise ValidationError(f"unknown bus id {bus_id}") from None

    @property
    def controlled_set(self) -> frozenset[int]:
        return frozenset(c.bus_id for c in self.controllers)

    def controller_for(self, bus_id: int) -> ControlledBusSpec:
        for c in self.controllers:
            if c.bus_id == bus_id:
                return c
        raise ValidationError(f"bus {bus_id} is not controlled")

    # -- parameter vectors ---------------------------------------------------

    @cached_property
    def M(self) -> np.ndarray:
        return _frozen(np.array([b.inertia_M for b in self.buses]))

    @cached_property
    def E(self) -> np.ndarray:
        return _frozen(np.array([b.damping_E for b in self.buses]))

    @cached_property
    def b(self) -> np.ndarray:
        return _frozen(np.array([ln.susceptance_b for ln in self.lines]))

    @cached_property
    def injections(self) -> InjectionProfile:
        base = np.array([bus.power_p for bus in self.buses])
        segs = [(k, s) for k, bus in enumerate(self.buses) for s in bus.schedule]
        return InjectionProfile(base, segs)

    def p_at(self, t: float = 0.0) -> np.ndarray:
        return self.injections(t)

    # -- matrix operators ------------------------------------------------------

    @cached_property
    def D(self) -> np.ndarray:
        return _frozen(incidence_matrix(self))

    @cached_property
    def DtYb(self) -> np.ndarray:
        """``D.T @ diag(b)`` (n x m): maps ``sin(lambda)`` to nodal flows."""
        return _frozen(self.D.T * self.b)

    @cached_property
    def L(self) -> np.ndarray:
        return _frozen(weighted_laplacian(self))

    @cached_property
    def range_projector(self) -> np.ndarray:
        """Orthogonal projector ``D D^+`` onto range(D)."""
        return _frozen(self.D @ np.linalg.pinv(self.D))

    def incident_edges(self, bus_id: int) -> np.ndarray:
        return np.flatnonzero(self.D[:, self.index_of(bus_id)] != 0)

    def with_controllers(self, controllers: Iterable[ControlledBusSpec]) -> "PowerNetwork":
        return PowerNetwork(self.buses, self.lines, tuple(controllers), self.name)

    def with_schedules(self, schedules: Mapping[int, Sequence[ScheduleSegment]]) -> "PowerNetwork":
        """Copy with the schedules of the given buses replaced."""
        buses = []
        for bus in self.buses:
            if bus.id in schedules:
                bus = Bus(bus.id, bus.inertia_M, bus.damping_E, bus.power_p,
                          tuple(schedules[bus.id]), bus.generator)
            buses.append(bus)
        return PowerNetwork(tuple(buses), self.lines, self.controllers, self.name)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def incidence_matrix(net: PowerNetwork) -> np.ndarray:
    """Signed edge-node incidence matrix (m x n)."""
    D = np.zeros((net.m, net.n))
    for k, line in enumerate(net.lines):
        pos, neg = line.endpoints
        D[k, net.index_of(pos)] = 1.0
        D[k, net.index_of(neg)] = -1.0
    return D


def weighted_laplacian(net: PowerNetwork) -> np.ndarray:
    """``D.T @ Y_b @ D`` (n x n)."""
    D = net.D
    return D.T @ (net.b[:, None] * D)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _require(raw: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in raw:
        raise ParseError(f"{where}: missing key {key!r}")
    return raw[key]


def _class_k(raw: Mapping[str, Any], key: str, gamma: float | None) -> ClassK:
    spec = raw.get(key)
    if spec is None:
        if gamma is None:
            raise ParseError(f"controlled bus {raw.get('id')}: needs 'gamma' or {key!r}")
        return ClassK.linear(gamma)
    if "gamma" in spec:
        return ClassK.linear(_to_float(spec["gamma"]))
    if "table" in spec:
        return ClassK.from_table([(float(s), float(a)) for s, a in spec["table"]])
    raise ParseError(f"controlled bus {raw.get('id')}: bad class-K spec {spec!r}")


def _to_float(v: Any) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity", "+inf"):
        return math.inf
    return float(v)


def network_from_dict(raw: Mapping[str, Any], name: str = "") -> PowerNetwork:
    """Build a validated network from the documented JSON object."""
    if not isinstance(raw, Mapping):
        raise ParseError("network file must hold a JSON object")
    unit = raw.get("frequency_unit", "rad_s")
    if unit not in FREQUENCY_UNITS:
        raise ParseError(f"frequency_unit must be one of {FREQUENCY_UNITS}, got {unit!r}")
    scale = TWO_PI if unit == "hz" else 1.0
    try:
        buses = []
        for rb in _require(raw, "buses", "network"):
            bid = int(_require(rb, "id", "bus"))
            if "p_schedule" in rb:
                sched = rb["p_schedule"]
                p = float(_require(sched, "base", f"bus {bid} p_schedule"))
                segs = tuple(ScheduleSegment.from_dict(s) for s in sched.get("segments", []))
            else:
                p = float(_require(rb, "p", f"bus {bid}"))
                segs = ()
            buses.append(
                Bus(
                    bid,
                    float(_require(rb, "M", f"bus {bid}")) / scale,
                    float(_require(rb, "E", f"bus {bid}")) / scale,
                    p,
                    segs,
                    bool(rb.get("generator", False)),
                )
            )
        lines = []
        for rl in _require(raw, "lines", "network"):
            lines.append(
                TransmissionLine.oriented(
                    int(_require(rl, "from", "line")),
                    int(_require(rl, "to", "line")),
                    float(_require(rl, "b", "line")),
                )
            )
        ctrls = []
        for rc in raw.get("controlled", []):
            gamma = _to_float(rc["gamma"]) if "gamma" in rc else None
            ctrls.append(
                ControlledBusSpec(
                    bus_id=int(_require(rc, "id", "controlled")),
                    omega_lo=float(_require(rc, "omega_lo", "controlled")) * scale,
                    omega_hi=float(_require(rc, "omega_hi", "controlled")) * scale,
                    omega_lo_th=float(_require(rc, "omega_lo_th", "controlled")) * scale,
                    omega_hi_th=float(_require(rc, "omega_hi_th", "controlled")) * scale,
                    kappa_upper=_class_k(rc, "kappa_upper", gamma),
                    kappa_lower=_class_k(rc, "kappa_lower", gamma),
                    epsilon_shrink=float(rc.get("epsilon_shrink", 0.0)) * scale,
                )
            )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed network description: {exc}") from exc
    return PowerNetwork(tuple(buses), tuple(lines), tuple(ctrls), name=name or str(raw.get("name", "")))


def load_network(path: str | Path) -> PowerNetwork:
    """Read and validate a network JSON file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return network_from_dict(raw, name=raw.get("name", path.stem) if isinstance(raw, dict) else "")


def _class_k_dict(k: ClassK) -> dict[str, Any]:
    if k.table is not None:
        return {"table": [list(pt) for pt in k.table]}
    return {"gamma": "inf" if math.isinf(k.gamma) else k.gamma}


def network_to_dict(net: PowerNetwork) -> dict[str, Any]:
    """Serialize in ``rad_s`` units; reloading reproduces an equal network."""
    buses = []
    for bus in net.buses:
        rb: dict[str, Any] = {"id": bus.id, "M": bus.inertia_M, "E": bus.damping_E}
        if bus.schedule:
            rb["p_schedule"] = {"base": bus.power_p, "segments": [s.to_dict() for s in bus.schedule]}
        else:
            rb["p"] = bus.power_p
        if bus.generator:
            rb["generator"] = True
        buses.append(rb)
    return {
        "name": net.name,
        "frequency_unit": "rad_s",
        "buses": buses,
        "lines": [
            {"from": ln.endpoints[0], "to": ln.endpoints[1], "b": ln.susceptance_b} for ln in net.lines
        ],
        "controlled": [
            {
                "id": c.bus_id,
                "omega_lo": c.omega_lo,
                "omega_hi": c.omega_hi,
                "omega_lo_th": c.omega_lo_th,
                "omega_hi_th": c.omega_hi_th,
                "kappa_upper": _class_k_dict(c.kappa_upper),
                "kappa_lower": _class_k_dict(c.kappa_lower),
                "epsilon_shrink": c.epsilon_shrink,
            }
            for c in net.controllers
        ],
    }


def save_network(net: PowerNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2))
