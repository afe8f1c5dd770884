"""Continuous world state, demonstrations and the demonstration file format.

File layout (newline-delimited JSON)::

    {"format":"symskill-demo","version":1,"types":[...]}
    {"demo":0}
    {"t":0.0,"ee":{"p":[...],"q":[...]},"gripper":"open","objects":{...},"frame":"..."}
    ...

A ``{"demo": i}`` marker line starts each demonstration. Files without
markers hold a single demonstration. Floats are written with 17
significant digits so that load/save round trips are bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import IoError, MonotonicityError, ParseError, SchemaError
from .geometry import Pose

FORMAT_NAME = "symskill-demo"
FORMAT_VERSION = 1
EE = "ee"
OPEN = "open"
CLOSED = "closed"

DEFAULT_TYPES = (
    "thing_type",
    "lid_type",
    "cookware_type",
    "cabinet_type",
    "drawer_type",
    "container_type",
)


@dataclass(frozen=True, eq=False)
class WorldState:
    ee_pose: Pose
    objects: dict  # id -> (Pose, type name)
    gripper: str = OPEN

    def __post_init__(self):
        if EE in self.objects:
            raise SchemaError('"ee" is reserved and cannot be an object id')
        if self.gripper not in (OPEN, CLOSED):
            raise SchemaError(f"gripper must be open|closed, got {self.gripper!r}")

    def pose(self, obj_id: str) -> Pose:
        if obj_id == EE:
            return self.ee_pose
        return self.objects[obj_id][0]

    def type_of(self, obj_id: str) -> str:
        return self.objects[obj_id][1]

    def typed_objects(self) -> dict:
        return {k: v[1] for k, v in self.objects.items()}

    def __eq__(self, other):
        if not isinstance(other, WorldState):
            return NotImplemented
        if self.gripper != other.gripper or self.ee_pose != other.ee_pose:
            return False
        if set(self.objects) != set(other.objects):
            return False
        return all(
            self.objects[k][0] == other.objects[k][0] and self.objects[k][1] == other.objects[k][1]
            for k in self.objects
        )

    __hash__ = None


@dataclass
class Demonstration:
    records: list  # list of (t, WorldState)
    frame_refs: Optional[list] = None
    types: tuple = field(default=DEFAULT_TYPES)

    def __post_init__(self):
        validate_demonstration(self)

    def __len__(self):
        return len(self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.records])

    @property
    def object_ids(self) -> list:
        return sorted(self.records[0][1].objects)

    def state(self, i: int) -> WorldState:
        return self.records[i][1]

    def object_arrays(self, obj_id: str):
        """Stacked (T,3) positions and (T,4) quaternions for one frame."""
        poses = [s.pose(obj_id) for _, s in self.records]
        return np.array([p.position for p in poses]), np.array([p.orientation for p in poses])

    def frame_id(self, i: int, demo_index: int = 0) -> str:
        if self.frame_refs is not None and self.frame_refs[i] is not None:
            return self.frame_refs[i]
        return f"demo{demo_index}:frame{i}"

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            len(self.records) == len(other.records)
            and all(ta == tb and sa == sb for (ta, sa), (tb, sb) in zip(self.records, other.records))
            and self.frame_refs == other.frame_refs
        )


def validate_demonstration(demo: Demonstration) -> None:
    if not demo.records:
        raise SchemaError("demonstration has no records")
    ids = set(demo.records[0][1].objects)
    prev = None
    for i, (t, state) in enumerate(demo.records):
        if t < 0:
            raise SchemaError(f"record {i}: negative timestamp")
        if prev is not None and not t > prev:
            raise MonotonicityError(f"record {i}: timestamp {t} does not increase past {prev}")
        prev = t
        if set(state.objects) != ids:
            raise SchemaError(f"record {i}: object id set changed")
        for oid, (_, typ) in state.objects.items():
            if typ not in demo.types:
                raise SchemaError(f"record {i}: unknown type {typ!r} for {oid}")
    if demo.frame_refs is not None and len(demo.frame_refs) != len(demo.records):
        raise SchemaError("frame_refs must align with records")


# --------------------------------------------------------------------------
# deterministic text serialisation


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite float cannot be serialised")
    if x == 0.0:
        return "-0.0" if math.copysign(1.0, x) < 0 else "0.0"
    s = format(x, ".17g")
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats and preserved key order."""
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _pose_obj(p: Pose) -> dict:
    return {"p": list(p.position), "q": list(p.orientation)}


def state_to_record(t: float, state: WorldState, frame: Optional[str] = None) -> dict:
    rec = {
        "t": float(t),
        "ee": _pose_obj(state.ee_pose),
        "gripper": state.gripper,
        "objects": {
            oid: {**_pose_obj(state.objects[oid][0]), "type": state.objects[oid][1]}
            for oid in sorted(state.objects)
        },
    }
    if frame is not None:
        rec["frame"] = frame
    return rec


def _parse_pose(d, where: str) -> Pose:
    try:
        p = [float(v) for v in d["p"]]
        q = [float(v) for v in d["q"]]
    except KeyError as e:
        raise SchemaError(f"{where}: missing field {e}") from None
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: pose fields must be numeric lists") from None
    if len(p) != 3 or len(q) != 4:
        raise SchemaError(f"{where}: p needs 3 and q needs 4 components")
    if not all(math.isfinite(v) for v in p + q):
        raise SchemaError(f"{where}: non-finite pose component")
    if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > 1e-6:
        raise SchemaError(f"{where}: quaternion is not unit norm")
    return Pose(p, q)


def record_to_state(rec: dict, types: Sequence[str], where: str):
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: record must be an object")
    for key in ("t", "ee", "gripper", "objects"):
        if key not in rec:
            raise SchemaError(f"{where}: missing field {key!r}")
    try:
        t = float(rec["t"])
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: t must be a number") from None
    objects = {}
    if not isinstance(rec["objects"], dict):
        raise SchemaError(f"{where}: objects must be a map")
    for oid, od in rec["objects"].items():
        if "type" not in od:
            raise SchemaError(f"{where}: object {oid} missing type")
        if od["type"] not in types:
            raise SchemaError(f"{where}: unknown type {od['type']!r}")
        objects[oid] = (_parse_pose(od, f"{where} object {oid}"), od["type"])
    if rec["gripper"] not in (OPEN, CLOSED):
        raise SchemaError(f"{where}: gripper must be open|closed")
    state = WorldState(_parse_pose(rec["ee"], f"{where} ee"), objects, rec["gripper"])
    return t, state, rec.get("frame")


def demonstrations_text(demos: Iterable[Demonstration], types: Optional[Sequence[str]] = None) -> str:
    demos = list(demos)
    if types is None:
        types = demos[0].types if demos else DEFAULT_TYPES
    lines = [dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION, "types": list(types)})]
    for i, demo in enumerate(demos):
        lines.append(dumps({"demo": i}))
        for j, (t, state) in enumerate(demo.records):
            frame = demo.frame_refs[j] if demo.frame_refs is not None else None
            lines.append(dumps(state_to_record(t, state, frame)))
    return "\n".join(lines) + "\n"


def save_demonstrations(demos: Iterable[Demonstration], path, types: Optional[Sequence[str]] = None) -> None:
    text = demonstrations_text(demos, types)
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise IoError(str(e)) from e


def load_demonstrations(path) -> list[Demonstration]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(str(e)) from e
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaError("empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"line 1: {e}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise SchemaError("missing demonstration header")
    if header.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported version {header.get('version')!r}")
    types = tuple(header.get("types") or ())
    if not types:
        raise SchemaError("header declares no types")

    groups: list[list] = []
    current = None
    for n, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {n}: {e}") from None
        if isinstance(rec, dict) and set(rec) == {"demo"}:
            current = []
            groups.append(current)
            continue
        if current is None:
            current = []
            groups.append(current)
        current.append(record_to_state(rec, types, f"line {n}"))

    if not groups or not any(groups):
        raise SchemaError("file contains no records")
    demos = []
    for g in groups:
        if not g:
            raise SchemaError("demonstration with no records")
        frames = [f for _, _, f in g]
        demos.append(
            Demonstration(
                records=[(t, s) for t, s, _ in g],
                frame_refs=frames if any(f is not None for f in frames) else None,
                types=types,
            )
        )
    return demos
