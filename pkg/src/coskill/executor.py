"""Closed-loop execution of plan skeletons.

The loop plans from the current abstraction, runs each ground operator's
skill while its maintain atoms hold, checks effects once the skill has
converged, and replans after any failure. Instances that failed are kept
in a failure memory; running one of them again first resamples its goal
pose from the effect predicate's Gaussian.
"""

from __future__ import annotations

import csv
import logging
import math
import queue
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .bundle import ModelBundle
from .config import ExecutorConfig
from .errors import SearchBudgetExceeded, Unreachable
from .geometry import Pose, Twist, compose, log_rotation, quat_conj, quat_mul, relative_pose
from .operators import MOTION, PREMOTION, GroundOp, ground_all
from .planner import Goal, plan
from .predicates import abstract, sample_pose
from .simulator import ARTICULATED, Ellipsoid, SimWorld
from .skills import Skill, twist_to_world
from .world import OPEN, WorldState, dumps

log = logging.getLogger(__name__)

SUCCESS = "Success"
FAILURE = "Failure"


# --------------------------------------------------------------------------
# obstacle modulation


def gamma_and_normal(ell: Ellipsoid, x: np.ndarray):
    """Gamma(x) = sum(((x - c) . b_i / a_i)^2) and the unit outward normal."""
    local = ell.basis.T @ (np.asarray(x, float) - ell.center)
    gamma = float(np.sum((local / ell.axes) ** 2))
    grad = ell.basis @ (2.0 * local / ell.axes**2)
    n = np.linalg.norm(grad)
    normal = grad / n if n > 0 else np.array([0.0, 0.0, 1.0])
    return gamma, normal


def _tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal E with first column n."""
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.column_stack([n, t1, t2])


def modulation_matrix(gamma: float, normal: np.ndarray) -> np.ndarray:
    E = _tangent_basis(normal)
    lam = np.array([1.0 - 1.0 / gamma, 1.0 + 1.0 / gamma, 1.0 + 1.0 / gamma])
    return (E * lam) @ E.T  # E is orthonormal, so E^-1 = E^T


def modulate_velocity(v: np.ndarray, x: np.ndarray, ellipsoids) -> tuple:
    """Returns (modulated v, min Gamma, inside-obstacle flag).

    Obstacles are applied farthest first so the nearest one acts last. A
    velocity leaving an obstacle (v . n >= 0) passes that obstacle unchanged.
    """
    v = np.asarray(v, float).copy()
    scored = [gamma_and_normal(e, x) for e in ellipsoids]
    if not scored:
        return v, math.inf, False
    inside = False
    for gamma, normal in sorted(scored, key=lambda s: -s[0]):
        vn = float(v @ normal)
        if gamma < 1.0:
            inside = True
            if vn < 0:
                v = v - vn * normal
            continue
        if vn >= 0:
            continue
        v = modulation_matrix(gamma, normal) @ v
    return v, min(s[0] for s in scored), inside


def modulate(twist: Twist, x: np.ndarray, ellipsoids) -> tuple:
    v, gmin, inside = modulate_velocity(twist.linear, x, ellipsoids)
    return Twist(v, twist.angular), gmin, inside


# --------------------------------------------------------------------------
# passive tracking


def _damping_matrix(damping) -> np.ndarray:
    D = np.asarray(damping, float)
    if D.ndim == 0:
        return float(D) * np.eye(6)
    if D.shape == (6,):
        return np.diag(D)
    return D.reshape(6, 6)


def track(commanded: Twist, current: Twist, config: Optional[ExecutorConfig] = None, dt: Optional[float] = None) -> Twist:
    """One control period of a unit-mass damper pulling the velocity onto the
    command: dv/dt = -D (v - v_cmd), integrated exactly over ``dt``."""
    cfg = config or ExecutorConfig()
    dt = cfg.control_dt if dt is None else dt
    D = _damping_matrix(cfg.damping)
    e = current.as_vector() - commanded.as_vector()
    e = expm(-D * dt) @ e
    out = commanded.as_vector() + e
    return Twist(out[:3], out[3:])


# --------------------------------------------------------------------------
# bookkeeping


class FailMem:
    def __init__(self):
        self._keys: list = []

    def add(self, key) -> None:
        if key not in self._keys:
            self._keys.append(key)

    def discard(self, key) -> None:
        if key in self._keys:
            self._keys.remove(key)

    def clear(self) -> None:
        self._keys.clear()

    def __contains__(self, key) -> bool:
        return key in self._keys

    def __len__(self):
        return len(self._keys)

    def items(self) -> list:
        return list(self._keys)


@dataclass
class StepRecord:
    op: str
    args: tuple
    t_start: float
    t_end: float
    outcome: str
    resampled: bool = False


@dataclass
class ExecutionReport:
    outcome: str
    reason: str = ""
    replans: int = 0
    resamples: int = 0
    plan_calls: int = 0
    plans: list = field(default_factory=list)  # skeleton listings
    steps: list = field(default_factory=list)  # StepRecord
    events: list = field(default_factory=list)
    failmem_history: list = field(default_factory=list)
    final_state: list = field(default_factory=list)
    sim_time: float = 0.0
    plan_wall_s: list = field(default_factory=list)  # wall clock; not serialised

    @property
    def success(self) -> bool:
        return self.outcome == SUCCESS

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "reason": self.reason,
            "replans": self.replans,
            "resamples": self.resamples,
            "plan_calls": self.plan_calls,
            "plans": self.plans,
            "steps": [
                {"op": s.op, "args": list(s.args), "t_start": s.t_start, "t_end": s.t_end, "outcome": s.outcome, "resampled": s.resampled}
                for s in self.steps
            ],
            "events": self.events,
            "failmem_history": self.failmem_history,
            "final_state": self.final_state,
            "sim_time": self.sim_time,
        }

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n")


# --------------------------------------------------------------------------
# executor


_TELEMETRY_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz", "operator", "gamma_min", "v_norm", "w_norm"]


class Executor:
    """Runs one goal in one simulated world. Not reentrant: it owns the world."""

    def __init__(
        self,
        bundle: ModelBundle,
        world: SimWorld,
        config: Optional[ExecutorConfig] = None,
        seed: int = 0,
        disturbances=(),
        telemetry: bool = False,
    ):
        self.bundle = bundle
        self.world = world
        self.cfg = config or bundle.config.executor
        if self.cfg.replan_limit < 1 or self.cfg.control_dt <= 0:
            raise ValueError("replan_limit must be >= 1 and control_dt > 0")
        self.rng = np.random.default_rng(seed)
        self.libs = bundle.libraries
        self.ops = {op.name: op for op in bundle.operators}
        self.failmem = FailMem()
        self.events: "queue.Queue[dict]" = queue.Queue()
        self.pending = [dict(d) for d in disturbances]
        self.op_runs: dict = {}
        self.telemetry_rows: list = [] if telemetry else None
        self.report = ExecutionReport(FAILURE)
        self._velocity = Twist.zero()
        self._last_done: Optional[GroundOp] = None
        self._active = ""
        self._step_count = 0

    # -- disturbances --------------------------------------------------
    def inject(self, event: dict) -> None:
        """Thread-safe: queue a world event for the next control step."""
        self.events.put(dict(event))

    def _drain(self) -> None:
        now = self.world.time
        for d in list(self.pending):
            if "t" in d and now + 1e-12 >= d["t"] and d.get("event") != "perturb_attractor":
                self.pending.remove(d)
                self.events.put({k: v for k, v in d.items() if k != "t"})
        while True:
            try:
                ev = self.events.get_nowait()
            except queue.Empty:
                break
            self.world.inject(ev)
            self._log("disturbance", **{k: v for k, v in ev.items() if k not in ("pose", "on")})

    def _op_triggers(self, op_name: str, run_no: int, elapsed: float) -> None:
        for d in list(self.pending):
            on = d.get("on")
            if on is None or d.get("event") == "perturb_attractor":
                continue
            if op_name.startswith(on["op"]) and run_no == on.get("nth", 1) and elapsed + 1e-12 >= on.get("after_s", 0.0):
                self.pending.remove(d)
                self.events.put({k: v for k, v in d.items() if k != "on"})

    def _perturbation(self, op_name: str, run_no: int):
        for d in list(self.pending):
            on = d.get("on", {})
            if d.get("event") == "perturb_attractor" and op_name.startswith(on.get("op", "")) and run_no == on.get("nth", 1):
                self.pending.remove(d)
                return np.asarray(d["offset"], float)
        return None

    def _log(self, kind: str, **info) -> None:
        self.report.events.append({"t": round(self.world.time, 9), "kind": kind, **info})

    # -- state ---------------------------------------------------------
    def abstract_now(self, gripper: Optional[str] = None) -> frozenset:
        s = self.world.snapshot()
        if gripper is not None:
            s = WorldState(s.ee_pose, s.objects, gripper)
        return abstract(s, self.libs)

    def _object_types(self) -> dict:
        return {oid: o.type for oid, o in self.world.objects.items()}

    # -- control -------------------------------------------------------
    def _control_step(self, cmd: Twist, exclude=(), gripper: Optional[str] = None) -> tuple:
        ells = [e for _, e in self.world.obstacles(exclude=set(exclude) | {self.world.attached})]
        mod, gmin, inside = modulate(cmd, self.world.ee_pose.position, ells)
        if inside:
            self._log("inside_obstacle")
        applied = track(mod, self._velocity, self.cfg)
        before = self.world.ee_pose
        self.world.step(applied, gripper, self.cfg.control_dt)
        after = self.world.ee_pose
        dt = self.cfg.control_dt
        real_v = float(np.linalg.norm(after.position - before.position)) / dt
        real_w = float(np.linalg.norm(log_rotation(quat_mul(after.orientation, quat_conj(before.orientation))))) / dt
        self._velocity = Twist((after.position - before.position) / dt, applied.angular) if self.world.attached and \
            self.world.objects[self.world.attached].kind == ARTICULATED else applied
        self._step_count += 1
        if self.telemetry_rows is not None and self._step_count % max(1, self.cfg.telemetry_every) == 0:
            p, q = after.position, after.orientation
            self.telemetry_rows.append(
                [self.world.time, *p, *q, self._active, gmin, float(np.linalg.norm(mod.linear)), float(np.linalg.norm(mod.angular))]
            )
        return mod, real_v, real_w

    def _hold(self, seconds: float, exclude=()) -> None:
        for _ in range(int(round(seconds / self.cfg.control_dt))):
            self._drain()
            self._control_step(Twist.zero(), exclude)

    def _retreat(self, exclude=()) -> None:
        target = compose(self.world.ee_pose, Pose([0, 0, -self.cfg.retreat_dist], [1, 0, 0, 0]))
        max_steps = int(10 * self.cfg.retreat_dist / (self.cfg.retreat_speed * self.cfg.control_dt)) + 100
        for _ in range(max_steps):
            self._drain()
            err = target.position - self.world.ee_pose.position
            d = float(np.linalg.norm(err))
            if d < 1e-3:
                break
            speed = min(self.cfg.retreat_speed, 5.0 * d)
            self._control_step(Twist(err / d * speed, np.zeros(3)), exclude)

    # -- resampling ----------------------------------------------------
    def _effect_predicate(self, op, binding: dict):
        """(predicate, subject id or None) for the pose-defining added atom."""
        by_name = self.libs.by_name()
        for atom in sorted(op.add):
            pred = by_name.get(atom.predicate)
            if pred is None:
                continue
            args = tuple(binding[v] for v in atom.args)
            if op.phase == PREMOTION and pred.is_ee and args == (binding["?obj"],):
                return pred
            if op.phase == MOTION and not pred.is_ee and args == (binding["?obj"], binding["?ref"]):
                return pred
        return None

    def _resample(self, op, binding: dict, skill: Skill) -> Skill:
        pred = self._effect_predicate(op, binding)
        if pred is None:
            self._log("resample_skipped", op=op.name)
            return skill
        sample = None
        for _ in range(self.cfg.resample_max_tries):
            cand = sample_pose(pred.gaussian, self.rng)
            if pred.holds(cand):
                sample = cand
                break
        if sample is None:
            sample = pred.gaussian.mean_pose
        if op.phase == PREMOTION:
            goal = sample
        else:
            obj_pose = self.world.objects[binding["?obj"]].pose
            grasp = relative_pose(obj_pose, self.world.ee_pose)
            goal = compose(sample, grasp)
        self.report.resamples += 1
        self._log("resample", op=op.name, goal=[float(x) for x in (*goal.position, *goal.orientation)])
        return skill.retargeted(goal)

    # -- one ground operator -------------------------------------------
    def _run_instance(self, inst: GroundOp) -> str:
        op = self.ops[inst.op_name]
        binding = dict(zip((v for v, _ in op.params), inst.args))
        skill = self.bundle.skill(op.skill_ref)
        frame_id = binding["?obj"] if op.phase == PREMOTION else binding["?ref"]
        exclude = {binding["?obj"]} | ({binding["?ref"]} if "?ref" in binding else set())
        run_no = self.op_runs[op.name] = self.op_runs.get(op.name, 0) + 1
        resampled = False
        if inst.key in self.failmem:
            skill = self._resample(op, binding, skill)
            resampled = True
        offset = self._perturbation(op.name, run_no)
        if offset is not None:
            skill = skill.transformed(Pose(offset, [1, 0, 0, 0]))
            self._log("perturb_attractor", op=op.name, offset=[float(x) for x in offset])

        self._active = str(inst)
        rec = StepRecord(op.name, inst.args, self.world.time, self.world.time, "running", resampled)
        self.report.steps.append(rec)
        dt = self.cfg.control_dt
        stall_steps = int(round(self.cfg.stall_s / dt))
        still = 0
        outcome = None
        t0 = self.world.time
        for k in range(int(round(self.cfg.skill_timeout_s / dt))):
            self._op_triggers(op.name, run_no, self.world.time - t0)
            self._drain()
            state = self.abstract_now()
            if not inst.maintain <= state:
                lost = sorted(str(a) for a in inst.maintain - state)
                self._log("maintain_violated", op=str(inst), lost=lost)
                outcome = "maintain"
                break
            frame = self.world.objects[frame_id].pose
            local = relative_pose(frame, self.world.ee_pose)
            cmd = twist_to_world(skill.evaluate(local), frame)
            mod, real_v, real_w = self._control_step(cmd, exclude)
            quiet = real_v < self.cfg.conv_v and real_w < self.cfg.conv_w
            still = still + 1 if quiet else 0
            small = float(np.linalg.norm(mod.linear)) < self.cfg.conv_v and float(np.linalg.norm(mod.angular)) < self.cfg.conv_w
            if quiet and (small or still >= stall_steps):
                break
        else:
            outcome = "timeout"

        if outcome is None:
            self._hold(self.cfg.settle_s, exclude)
            hypo = self.abstract_now(gripper=op.gripper)
            if not inst.add <= hypo:
                outcome = "effect"
                self._log("effect_failed", op=str(inst), missing=sorted(str(a) for a in inst.add - hypo))
            else:
                self._drain()
                self._control_step(Twist.zero(), exclude, gripper=op.gripper)
                if op.gripper == OPEN:
                    self._retreat(exclude)
                self._hold(self.cfg.settle_s, exclude)
                state = self.abstract_now()
                if inst.add <= state and not (inst.delete & state):
                    outcome = "ok"
                else:
                    outcome = "effect"
                    self._log("effect_failed", op=str(inst), missing=sorted(str(a) for a in inst.add - state),
                              lingering=sorted(str(a) for a in inst.delete & state))
        rec.t_end = self.world.time
        rec.outcome = outcome
        self._active = ""
        return outcome

    # -- Algorithm loop ------------------------------------------------
    def run(self, goal) -> ExecutionReport:
        goal = goal if isinstance(goal, Goal) else Goal(frozenset(goal))
        rep = self.report
        objects = self._object_types()
        instances = ground_all(self.bundle.operators, objects)
        while True:
            self._drain()
            state = self.abstract_now()
            if goal.satisfied(state):
                rep.outcome = SUCCESS
                self.failmem.clear()
                break
            t_plan = time.perf_counter()
            try:
                skeleton = plan(state, goal, self.bundle.operators, objects, self.bundle.config.planner.node_cap, instances)
            except (Unreachable, SearchBudgetExceeded) as e:
                rep.plan_calls += 1
                rep.plan_wall_s.append(time.perf_counter() - t_plan)
                rep.outcome, rep.reason = FAILURE, f"{type(e).__name__}: {e}"
                self._log("plan_failed", reason=rep.reason)
                break
            rep.plan_calls += 1
            rep.plan_wall_s.append(time.perf_counter() - t_plan)
            rep.plans.append([str(s) for s in skeleton])
            self._log("plan", length=len(skeleton))

            failed = False
            for inst in skeleton:
                self._drain()
                if not inst.pre <= self.abstract_now():
                    self._log("precondition_lost", op=str(inst))
                    failed = True
                    break
                outcome = self._run_instance(inst)
                if outcome == "ok":
                    self.failmem.discard(inst.key)
                    self._last_done = inst
                    continue
                if outcome == "maintain":
                    blame = self._last_done or inst
                else:
                    blame = inst
                self.failmem.add(blame.key)
                rep.failmem_history.append(str(blame))
                failed = True
                break
            if not failed and goal.satisfied(self.abstract_now()):
                continue  # the loop head records success
            if rep.replans >= self.cfg.replan_limit:
                rep.outcome, rep.reason = FAILURE, f"replan limit {self.cfg.replan_limit} reached"
                self._log("replan_limit")
                break
            rep.replans += 1
        rep.final_state = sorted(str(a) for a in self.abstract_now())
        rep.sim_time = self.world.time
        return rep

    def write_telemetry(self, path) -> None:
        if self.telemetry_rows is None:
            raise ValueError("telemetry was not recorded")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_TELEMETRY_HEADER)
            for row in self.telemetry_rows:
                w.writerow([x if isinstance(x, str) else format(float(x), ".9g") for x in row])


def execute(goal, world: SimWorld, bundle: ModelBundle, config: Optional[ExecutorConfig] = None, seed: int = 0,
            disturbances=(), telemetry: Optional[str] = None) -> ExecutionReport:
    ex = Executor(bundle, world, config, seed, disturbances, telemetry is not None)
    rep = ex.run(goal)
    if telemetry is not None:
        ex.write_telemetry(telemetry)
    return rep
