"""Deterministic kinematic tabletop world.

The end effector is a free-flying frame that integrates commanded twists.
Grasping is proximity plus a close command; a grasped free object follows
the end effector rigidly, a grasped articulated handle constrains the end
effector to the joint's one-dimensional manifold. There is no contact,
gravity or friction.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import SimConfig
from .errors import ScriptInfeasible, SchemaError, UnknownObject
from .geometry import (
    Pose,
    Twist,
    compose,
    exp_rotation,
    log_rotation,
    pose_from_json,
    quat_conj,
    quat_mul,
    quat_rotate,
    relative_pose,
    yaw_quat,
)
from .world import CLOSED, OPEN, Demonstration, WorldState

FREE_RIGID = "free_rigid"
ARTICULATED = "articulated"


@dataclass
class Articulation:
    joint: str  # revolute (about joint-frame z) | prismatic (along joint-frame x)
    origin: Pose
    offset: Pose
    q_min: float
    q_max: float
    q: float = 0.0
    open_q: Optional[float] = None
    parent: Optional[str] = None
    jammed: bool = False

    def fk(self, q: float) -> Pose:
        if self.joint == "revolute":
            joint = Pose(np.zeros(3), yaw_quat(q))
        elif self.joint == "prismatic":
            joint = Pose([q, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])
        else:
            raise SchemaError(f"unknown joint kind {self.joint!r}")
        return compose(compose(self.origin, joint), self.offset)


@dataclass
class Ellipsoid:
    center: np.ndarray
    axes: np.ndarray
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    def gamma(self, x: np.ndarray) -> float:
        local = self.basis.T @ (np.asarray(x, float) - self.center)
        return float(np.sum((local / self.axes) ** 2))


@dataclass
class SimObject:
    id: str
    type: str
    pose: Pose
    kind: str = FREE_RIGID
    articulation: Optional[Articulation] = None
    grasp_radius: float = 0.06
    graspable: bool = True
    grasp_offset: Pose = field(default_factory=lambda: Pose([0, 0, 0.03], [0.0, 1.0, 0.0, 0.0]))
    place_offset: Pose = field(default_factory=lambda: Pose([0, 0, 0.03], [1.0, 0, 0, 0]))
    ellipsoid: Optional[tuple] = None  # (center offset in object frame, axes)

    def __post_init__(self):
        if self.kind == ARTICULATED:
            a = self.articulation
            if a is None:
                raise SchemaError(f"{self.id}: articulated object needs an articulation")
            a.q = min(max(a.q, a.q_min), a.q_max)
            self.pose = a.fk(a.q)

    def world_ellipsoid(self) -> Optional[Ellipsoid]:
        if self.ellipsoid is None:
            return None
        center, axes = self.ellipsoid
        return Ellipsoid(self.pose.apply(np.asarray(center, float)), np.asarray(axes, float), self.pose.rotation)


class SimWorld:
    """Mutable simulator state. The executor is its only writer."""

    def __init__(self, objects, ee_pose: Pose, gripper: str = OPEN, config: Optional[SimConfig] = None):
        self.objects: dict[str, SimObject] = {o.id: o for o in objects}
        self.ee_pose = ee_pose
        self.ee_twist = Twist.zero()
        self.gripper = gripper
        self.attached: Optional[str] = None
        self.grasp_offset: Optional[Pose] = None  # ee pose in the attached object's frame
        self.time = 0.0
        self.config = config or SimConfig()
        self.event_log: list[dict] = []

    def copy(self) -> "SimWorld":
        return copy.deepcopy(self)

    # ------------------------------------------------------------------
    def snapshot(self) -> WorldState:
        return WorldState(
            self.ee_pose,
            {oid: (o.pose, o.type) for oid, o in self.objects.items()},
            self.gripper,
        )

    def _attach_nearest(self) -> None:
        best, best_d = None, math.inf
        for oid in sorted(self.objects):
            o = self.objects[oid]
            if not o.graspable:
                continue
            d = float(np.linalg.norm(o.pose.position - self.ee_pose.position))
            if d <= o.grasp_radius and d < best_d:
                best, best_d = oid, d
        if best is not None:
            self.attached = best
            self.grasp_offset = relative_pose(self.objects[best].pose, self.ee_pose)

    def _release(self) -> None:
        self.attached = None
        self.grasp_offset = None

    def step(self, applied: Twist, gripper_cmd: Optional[str] = None, dt: float = 0.01) -> WorldState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if gripper_cmd is not None and gripper_cmd != self.gripper:
            if gripper_cmd == CLOSED:
                self.gripper = CLOSED
                self._attach_nearest()
            elif gripper_cmd == OPEN:
                self.gripper = OPEN
                self._release()
            else:
                raise ValueError(f"bad gripper command {gripper_cmd!r}")

        v = applied.linear
        w = applied.angular
        held = self.objects.get(self.attached) if self.attached else None
        if held is not None and held.kind == ARTICULATED:
            self._step_articulated(held, v, dt)
        else:
            pos = self.ee_pose.position + v * dt
            quat = quat_mul(exp_rotation(w * dt), self.ee_pose.orientation)
            self.ee_pose = Pose(pos, quat)
            if held is not None:
                held.pose = compose(self.ee_pose, self.grasp_offset.inverse())
        self.ee_twist = applied
        self.time += dt
        return self.snapshot()

    def _step_articulated(self, obj: SimObject, v: np.ndarray, dt: float) -> None:
        art = obj.articulation
        local_ee = relative_pose(art.origin, self.ee_pose).position
        v_local = quat_rotate(quat_conj(art.origin.orientation), v)
        if art.joint == "revolute":
            r = math.hypot(local_ee[0], local_ee[1])
            if r < 1e-9:
                dq = 0.0
            else:
                tangent = np.array([-local_ee[1], local_ee[0], 0.0]) / r
                dq = float(v_local @ tangent) * dt / r
        else:
            dq = float(v_local[0]) * dt
        if not art.jammed:
            art.q = min(max(art.q + dq, art.q_min), art.q_max)
        obj.pose = art.fk(art.q)
        self.ee_pose = compose(obj.pose, self.grasp_offset)

    # ------------------------------------------------------------------
    def inject(self, event: dict) -> None:
        """Apply a disturbance atomically between control steps."""
        kind = event["event"]
        oid = event.get("id")
        if kind != "detach" and oid not in self.objects:
            raise UnknownObject(f"no object {oid!r}")
        if kind in ("teleport", "move_obstacle"):
            obj = self.objects[oid]
            if obj.kind == ARTICULATED:
                raise ValueError("articulated objects cannot be teleported; use reclose")
            if self.attached == oid:
                self._release()
            obj.pose = pose_from_json(event["pose"]) if isinstance(event["pose"], dict) else event["pose"]
        elif kind == "detach":
            # a dropped grasp leaves the jaws open
            held = self.attached
            self._release()
            self.gripper = OPEN
            if event.get("drop") and held is not None and self.objects[held].kind == FREE_RIGID:
                self._drop(self.objects[held])
        elif kind == "reclose":
            obj = self.objects[oid]
            if obj.kind != ARTICULATED:
                raise ValueError("reclose needs an articulated object")
            if self.attached == oid:
                self._release()
                self.gripper = OPEN
            obj.articulation.q = obj.articulation.q_min
            obj.pose = obj.articulation.fk(obj.articulation.q)
        elif kind == "jam":
            obj = self.objects[oid]
            if obj.kind != ARTICULATED:
                raise ValueError("jam needs an articulated object")
            obj.articulation.jammed = True
        else:
            raise ValueError(f"unknown event {kind!r}")
        self.event_log.append({"t": self.time, **{k: v for k, v in event.items() if k != "pose"}})

    def _drop(self, obj: SimObject, reach: float = 0.06) -> None:
        """Let a released object fall into the highest receptacle under it and
        settle flat in its slot, keeping only its yaw. With nothing
        underneath it stays where it is."""
        best = None
        for oid in sorted(self.objects):
            f = self.objects[oid]
            if f.graspable or f.id == obj.id:
                continue
            slot = compose(f.pose, f.place_offset)
            if np.linalg.norm(slot.position[:2] - obj.pose.position[:2]) <= reach and slot.position[2] <= obj.pose.position[2] + 1e-9:
                if best is None or slot.position[2] > best.position[2]:
                    best = slot
        if best is not None:
            rel = quat_mul(quat_conj(best.orientation), obj.pose.orientation)
            x_axis = quat_rotate(rel, np.array([1.0, 0.0, 0.0]))
            yaw = math.atan2(x_axis[1], x_axis[0])
            obj.pose = Pose(best.position, quat_mul(best.orientation, yaw_quat(yaw)))

    def obstacles(self, exclude=()) -> list:
        out = []
        for oid in sorted(self.objects):
            if oid in exclude:
                continue
            e = self.objects[oid].world_ellipsoid()
            if e is not None:
                out.append((oid, e))
        return out


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    seed: int
    types: list
    objects: list  # object specs (dicts)
    ee: dict = field(default_factory=lambda: {"p": [0.4, 0.0, 0.35], "q": [0.0, 1.0, 0.0, 0.0]})
    script: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    name: str = "scenario"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "types": list(self.types),
            "ee": self.ee,
            "objects": self.objects,
            "script": self.script,
            "disturbances": self.disturbances,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        for key in ("seed", "types", "objects"):
            if key not in d:
                raise SchemaError(f"scenario missing {key!r}")
        return cls(
            seed=int(d["seed"]),
            types=list(d["types"]),
            objects=list(d["objects"]),
            ee=d.get("ee", cls.__dataclass_fields__["ee"].default_factory()),
            script=list(d.get("script", [])),
            disturbances=list(d.get("disturbances", [])),
            name=d.get("name", "scenario"),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_seed(self, seed: int) -> "Scenario":
        d = copy.deepcopy(self.to_dict())
        d["seed"] = seed
        return Scenario.from_dict(d)


def _pose_spec(d) -> Pose:
    return Pose(d.get("p", [0, 0, 0]), d.get("q", [1, 0, 0, 0]))


def build_world(scenario: Scenario, config: Optional[SimConfig] = None) -> SimWorld:
    """Instantiate a SimWorld, sampling initial-pose jitter from the scenario seed."""
    rng = np.random.default_rng(scenario.seed)
    specs = {s["id"]: s for s in scenario.objects}
    objects: dict[str, SimObject] = {}

    def make(oid: str) -> SimObject:
        if oid in objects:
            return objects[oid]
        s = specs[oid]
        if s["type"] not in scenario.types:
            raise SchemaError(f"object {oid}: type {s['type']!r} not in scenario types")
        jitter = s.get("jitter", {})
        art = None
        kind = s.get("kind", FREE_RIGID)
        if kind == ARTICULATED:
            a = s["articulation"]
            art = Articulation(
                joint=a.get("joint", "revolute"),
                origin=_pose_spec(a["origin"]),
                offset=_pose_spec(a.get("offset", {})),
                q_min=float(a["range"][0]),
                q_max=float(a["range"][1]),
                q=float(a.get("q", a["range"][0])),
                open_q=a.get("open_q"),
                parent=a.get("parent"),
            )
            pose = Pose.identity()
        elif "rest_on" in s:
            base = make(s["rest_on"])
            yaw = uniform_ball(rng, 1, jitter.get("yaw", 0.0))[0]
            shift = np.append(uniform_ball(rng, 2, jitter.get("pos", 0.0)), 0.0)
            local = Pose(base.place_offset.position + shift, quat_mul(base.place_offset.orientation, yaw_quat(yaw)))
            pose = compose(base.pose, local)
        else:
            base = _pose_spec(s["pose"])
            yaw = rng.uniform(-1, 1) * jitter.get("yaw", 0.0)
            shift = np.append(rng.uniform(-1, 1, 2) * jitter.get("pos", 0.0), 0.0)
            pose = Pose(base.position + shift, quat_mul(yaw_quat(yaw), base.orientation))
        ell = s.get("ellipsoid")
        obj = SimObject(
            id=oid,
            type=s["type"],
            pose=pose,
            kind=kind,
            articulation=art,
            grasp_radius=float(s.get("grasp_radius", (config or SimConfig()).grasp_radius)),
            graspable=bool(s.get("graspable", True)),
            grasp_offset=_pose_spec(s["grasp_offset"]) if "grasp_offset" in s else Pose([0, 0, 0.03], [0.0, 1.0, 0.0, 0.0]),
            place_offset=_pose_spec(s["place_offset"]) if "place_offset" in s else Pose([0, 0, 0.03], [1.0, 0, 0, 0]),
            ellipsoid=(ell["center"], ell["axes"]) if ell else None,
        )
        objects[oid] = obj
        return obj

    for s in scenario.objects:
        make(s["id"])
    ordered = [objects[s["id"]] for s in scenario.objects]
    return SimWorld(ordered, _pose_spec(scenario.ee), OPEN, config)


# --------------------------------------------------------------------------
# scripted demonstrator


class _Recorder:
    def __init__(self, world: SimWorld, dt: float, prefix: str):
        self.world = world
        self.dt = dt
        self.prefix = prefix
        self.records = [(0.0, world.snapshot())]
        self.v = np.zeros(3)

    @property
    def index(self) -> int:
        return len(self.records) - 1

    def step(self, twist: Twist, gripper: Optional[str] = None) -> None:
        state = self.world.step(twist, gripper, self.dt)
        self.records.append((round(self.world.time, 9), state))

    def hold(self, n: int, gripper: Optional[str] = None) -> None:
        for i in range(n):
            self.step(Twist.zero(), gripper if i == 0 else None)
        self.v = np.zeros(3)


def _profile(dist: float, prev: float, vmax: float, acc: float, dt: float) -> float:
    """Speed along a remaining distance: accel-limited, decel to rest, lands exactly."""
    v = min(vmax, math.sqrt(2.0 * acc * dist), prev + acc * dt)
    return min(v, dist / dt)


def _goto(rec: _Recorder, target: Pose, cfg: SimConfig, max_steps: int = 2000) -> None:
    world = rec.world
    w_prev = 0.0
    for _ in range(max_steps):
        err = target.position - world.ee_pose.position
        rot = log_rotation(quat_mul(target.orientation, quat_conj(world.ee_pose.orientation)))
        d, a = float(np.linalg.norm(err)), float(np.linalg.norm(rot))
        if d < 1e-7 and a < 1e-7:
            rec.v = np.zeros(3)
            return
        speed = _profile(d, float(np.linalg.norm(rec.v)), cfg.approach_speed, cfg.approach_accel, rec.dt)
        omega = _profile(a, w_prev, 1.0, 2.0, rec.dt)
        v = err / d * speed if d > 0 else np.zeros(3)
        w = rot / a * omega if a > 0 else np.zeros(3)
        rec.v, w_prev = v, omega
        rec.step(Twist(v, w))
    raise ScriptInfeasible(f"waypoint {target} not reached")


def _drive_joint(rec: _Recorder, obj: SimObject, target_q: float, cfg: SimConfig, max_steps: int = 2000) -> None:
    art = obj.articulation
    target_q = min(max(target_q, art.q_min), art.q_max)
    qdot_prev = 0.0
    for _ in range(max_steps):
        err = target_q - art.q
        if abs(err) < 1e-6:
            return
        if art.jammed:
            break
        local_ee = relative_pose(art.origin, rec.world.ee_pose).position
        if art.joint == "revolute":
            r = math.hypot(local_ee[0], local_ee[1])
            tangent = np.array([-local_ee[1], local_ee[0], 0.0]) / r
            scale = r
        else:
            tangent, scale = np.array([1.0, 0.0, 0.0]), 1.0
        qdot = _profile(abs(err), qdot_prev, cfg.approach_speed / scale, cfg.approach_accel / scale, rec.dt)
        qdot_prev = qdot
        v = quat_rotate(art.origin.orientation, tangent * math.copysign(qdot, err) * scale)
        rec.step(Twist(v, np.zeros(3)))
    raise ScriptInfeasible(f"joint of {obj.id} did not reach q={target_q:.3f}")


def uniform_ball(rng, dim: int, sigma: float) -> np.ndarray:
    """Uniform sample in a ``dim``-ball whose per-axis std is ``sigma``.

    Demonstrator noise is bounded: a placement slot or grasp has a physical
    extent, and bounded noise keeps fitted 3-sigma ellipsoids covering
    their own data.
    """
    if sigma <= 0:
        return np.zeros(dim)
    d = rng.normal(size=dim)
    d /= np.linalg.norm(d)
    return d * sigma * math.sqrt(dim + 2) * rng.random() ** (1.0 / dim)


def _jitter_pose(rng, cfg: SimConfig, planar: bool = False) -> Pose:
    ori = math.radians(cfg.jitter_ori_deg)
    if planar:
        return Pose(np.append(uniform_ball(rng, 2, cfg.jitter_pos), 0.0), yaw_quat(uniform_ball(rng, 1, ori)[0]))
    return Pose(uniform_ball(rng, 3, cfg.jitter_pos), exp_rotation(uniform_ball(rng, 3, ori)))


def _displaced(a: Pose, b: Pose, tol: float = 1e-9) -> bool:
    # re-attachment recomputes poses with ulp-level differences; ignore those
    return bool(np.max(np.abs(a.position - b.position)) > tol or np.max(np.abs(a.orientation - b.orientation)) > tol)


def _backoff(pose: Pose, dist: float) -> Pose:
    """Pose moved ``dist`` back along its own -z (approach) axis."""
    return compose(pose, Pose([0, 0, -dist], [1, 0, 0, 0]))


def generate_play(scenario: Scenario, config: Optional[SimConfig] = None):
    """Run the scripted demonstrator. Returns (Demonstration, annotations).

    Annotation entries carry ground-truth sample indices: ``start``/``stop``
    of object motion and ``premotion_start`` (first sample of the approach).
    """
    cfg = config or SimConfig()
    world = build_world(scenario, cfg)
    rng = np.random.default_rng([scenario.seed, 7])
    rec = _Recorder(world, cfg.demo_dt, scenario.name)
    annotations = []

    for step_no, item in enumerate(scenario.script):
        intent = item["intent"]
        target = item["target"]
        ref = item.get("reference")
        if target not in world.objects or (ref is not None and ref not in world.objects):
            raise ScriptInfeasible(f"script step {step_no}: unknown object")
        obj = world.objects[target]
        pre_start = rec.index + 1

        grasp = compose(obj.pose, compose(obj.grasp_offset, _jitter_pose(rng, cfg)))
        pregrasp = _backoff(grasp, cfg.lift_height)
        if item.get("double_approach", rng.random() < cfg.double_approach_prob):
            _goto(rec, pregrasp, cfg)
            _goto(rec, _backoff(grasp, 0.02), cfg)
        _goto(rec, pregrasp, cfg)
        _goto(rec, grasp, cfg)
        rec.hold(cfg.hold_samples, CLOSED)
        if world.attached != target:
            raise ScriptInfeasible(f"script step {step_no}: grasp of {target} failed")

        before = obj.pose
        if intent == "pickplace":
            refobj = world.objects[ref]
            lift = Pose(world.ee_pose.position + [0, 0, cfg.lift_height], world.ee_pose.orientation)
            _goto(rec, lift, cfg)
            place = compose(refobj.pose, compose(refobj.place_offset, _jitter_pose(rng, cfg, planar=True)))
            ee_goal = compose(place, world.grasp_offset)
            above = Pose(ee_goal.position + [0, 0, cfg.lift_height], ee_goal.orientation)
            _goto(rec, above, cfg)
            _goto(rec, ee_goal, cfg)
        elif intent in ("open", "close"):
            art = obj.articulation
            if art is None:
                raise ScriptInfeasible(f"{target} is not articulated")
            if intent == "open":
                goal_q = item.get("q", art.open_q if art.open_q is not None else art.q_max)
                goal_q += rng.normal(0, 0.03)
            else:
                goal_q = art.q_min
            _drive_joint(rec, obj, goal_q, cfg)
        else:
            raise ScriptInfeasible(f"unknown intent {intent!r}")

        # ground-truth motion window: samples where the object's pose changed
        moved = [
            i
            for i in range(pre_start, rec.index + 1)
            if _displaced(rec.records[i - 1][1].pose(target), rec.records[i][1].pose(target))
        ]
        if not moved or not _displaced(before, obj.pose):
            raise ScriptInfeasible(f"script step {step_no}: {target} did not move")
        t_stop_time = rec.records[moved[-1]][0]
        rec.hold(cfg.hold_samples)
        rec.hold(1, OPEN)
        _goto(rec, _backoff(world.ee_pose, cfg.lift_height), cfg)
        while rec.records[-1][0] < t_stop_time + cfg.post_wait_s:
            rec.hold(1)
        annotations.append(
            {
                "intent": intent,
                "motion_object": target,
                "reference": ref,
                "premotion_start": pre_start,
                "start": moved[0],
                "stop": moved[-1],
            }
        )

    frames = [f"{scenario.name}:{i:05d}" for i in range(len(rec.records))]
    demo = Demonstration(records=rec.records, frame_refs=frames, types=tuple(scenario.types))
    return demo, annotations
