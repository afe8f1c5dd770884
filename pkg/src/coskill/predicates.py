"""Relative-pose predicates: independent position and orientation Gaussians
with Mahalanobis thresholds, their libraries, and state abstraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.cluster.vq import kmeans2

from .config import PredicateConfig
from .errors import InsufficientData
from .geometry import (
    Pose,
    exp_rotation,
    log_rotation,
    log_rotation_batch,
    mean_rotation,
    quat_conj,
    quat_mul,
    relative_pose_arrays,
)
from .segmentation import RelTrajectory
from .world import EE, OPEN, WorldState

log = logging.getLogger(__name__)

GRIPPER_OPEN = "GripperOpen"


def _floor_cov(c: np.ndarray, floor: float) -> np.ndarray:
    c = 0.5 * (c + c.T)
    w, v = np.linalg.eigh(c)
    return (v * np.maximum(w, floor)) @ v.T


@dataclass(frozen=True, eq=False)
class Se3Gaussian:
    mu_pos: np.ndarray
    cov_pos: np.ndarray
    mu_ori: np.ndarray  # rotation vector
    cov_ori: np.ndarray

    def __post_init__(self):
        for name in ("mu_pos", "cov_pos", "mu_ori", "cov_ori"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        # whitening factors: d^2 = |L^-1 r|^2
        object.__setattr__(self, "_lp", np.linalg.cholesky(self.cov_pos))
        object.__setattr__(self, "_lo", np.linalg.cholesky(self.cov_ori))
        object.__setattr__(self, "_q_mu", exp_rotation(self.mu_ori))

    @property
    def mean_pose(self) -> Pose:
        return Pose(self.mu_pos, self._q_mu)

    def distances(self, pos: np.ndarray, quat: np.ndarray):
        """Vectorised Mahalanobis distances for (T,3) positions and (T,4) quaternions."""
        rp = np.atleast_2d(pos) - self.mu_pos
        ro = log_rotation_batch(quat_mul(quat_conj(self._q_mu)[None, :], np.atleast_2d(quat)))
        zp = np.linalg.solve(self._lp, rp.T)
        zo = np.linalg.solve(self._lo, ro.T)
        return np.sqrt(np.sum(zp * zp, axis=0)), np.sqrt(np.sum(zo * zo, axis=0))

    def to_dict(self) -> dict:
        return {
            "mu_pos": self.mu_pos.tolist(),
            "cov_pos": self.cov_pos.tolist(),
            "mu_ori": self.mu_ori.tolist(),
            "cov_ori": self.cov_ori.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Se3Gaussian":
        return cls(d["mu_pos"], d["cov_pos"], d["mu_ori"], d["cov_ori"])


def fit_se3_gaussian(
    poses: Union[Sequence[Pose], tuple],
    pos_floor: float = 1e-6,
    ori_floor: float = 1e-4,
    max_iter: int = 50,
    tol: float = 1e-10,
    n_groups: Optional[int] = None,
) -> Se3Gaussian:
    """Fit from a list of Poses or a ``(positions, quaternions)`` array pair.

    ``n_groups`` is the number of independent episodes behind the samples.
    Samples within an episode are strongly correlated (an object at rest
    repeats one pose), so the covariances get the unbiased correction for
    ``n_groups`` rather than for the raw sample count.
    """
    if isinstance(poses, tuple) and len(poses) == 2 and isinstance(poses[0], np.ndarray):
        pos, quat = poses
    else:
        pos = np.array([p.position for p in poses]).reshape(-1, 3)
        quat = np.array([p.orientation for p in poses]).reshape(-1, 4)
    if len(pos) < 2:
        raise InsufficientData(f"need at least 2 poses, got {len(pos)}")
    mu_p = pos.mean(axis=0)
    cov_p = np.cov(pos, rowvar=False)
    q_mu = mean_rotation(quat, max_iter, tol)
    resid = log_rotation_batch(quat_mul(quat_conj(q_mu)[None, :], quat))
    cov_o = resid.T @ resid / (len(resid) - 1)
    if n_groups is not None and n_groups > 1:
        n = len(pos)
        scale = (n - 1) / n * n_groups / (n_groups - 1)
        cov_p, cov_o = cov_p * scale, cov_o * scale
    return Se3Gaussian(mu_p, _floor_cov(cov_p, pos_floor), log_rotation(q_mu), _floor_cov(cov_o, ori_floor))


def mahalanobis(g: Se3Gaussian, pose: Pose) -> tuple:
    dp, do = g.distances(pose.position[None, :], pose.orientation[None, :])
    return float(dp[0]), float(do[0])


def sample_pose(g: Se3Gaussian, seed) -> Pose:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    zp = rng.standard_normal(3)
    zo = rng.standard_normal(3)
    p = g.mu_pos + g._lp @ zp
    q = quat_mul(g._q_mu, exp_rotation(g._lo @ zo))
    return Pose(p, q)


class GroundAtom(NamedTuple):
    predicate: str
    args: tuple

    def __str__(self):
        return f"{self.predicate}({', '.join(self.args)})"


@dataclass(frozen=True, eq=False)
class RelPosePredicate:
    """Subject pose expressed in the reference frame lies in a Gaussian ellipsoid.

    ``subject_type == "ee"`` marks a gripper-at-object predicate; its ground
    atoms take the single argument ``(object,)``, whose frame is the reference.
    """

    name: str
    subject_type: str
    reference_type: str
    gaussian: Se3Gaussian
    eps_pos: float = 3.0
    eps_ori: float = 3.0

    def __post_init__(self):
        if not (self.eps_pos > 0 and self.eps_ori > 0):
            raise ValueError("thresholds must be positive")

    @property
    def is_ee(self) -> bool:
        return self.subject_type == EE

    @property
    def arg_types(self) -> tuple:
        return (self.reference_type,) if self.is_ee else (self.subject_type, self.reference_type)

    def holds(self, rel: Pose) -> bool:
        dp, do = mahalanobis(self.gaussian, rel)
        return dp <= self.eps_pos and do <= self.eps_ori

    def holds_arrays(self, pos: np.ndarray, quat: np.ndarray) -> np.ndarray:
        dp, do = self.gaussian.distances(pos, quat)
        return (dp <= self.eps_pos) & (do <= self.eps_ori)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "subject_type": self.subject_type,
            "reference_type": self.reference_type,
            "eps_pos": self.eps_pos,
            "eps_ori": self.eps_ori,
            "gaussian": self.gaussian.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelPosePredicate":
        return cls(
            d["name"], d["subject_type"], d["reference_type"], Se3Gaussian.from_dict(d["gaussian"]), d["eps_pos"], d["eps_ori"]
        )


@dataclass
class Libraries:
    pre: dict = field(default_factory=dict)  # object type -> [ee predicates]
    motion: dict = field(default_factory=dict)  # (subject type, reference type) -> [predicates]
    mask_held_objects: bool = True

    def all(self) -> list:
        out = [p for k in sorted(self.pre) for p in self.pre[k]]
        out += [p for k in sorted(self.motion) for p in self.motion[k]]
        return out

    def by_name(self) -> dict:
        return {p.name: p for p in self.all()}

    def to_dict(self) -> dict:
        return {
            "mask_held_objects": self.mask_held_objects,
            "pre": [p.to_dict() for k in sorted(self.pre) for p in self.pre[k]],
            "motion": [p.to_dict() for k in sorted(self.motion) for p in self.motion[k]],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Libraries":
        libs = cls(mask_held_objects=d.get("mask_held_objects", True))
        for pd in d.get("pre", []):
            p = RelPosePredicate.from_dict(pd)
            libs.pre.setdefault(p.reference_type, []).append(p)
        for pd in d.get("motion", []):
            p = RelPosePredicate.from_dict(pd)
            libs.motion.setdefault((p.subject_type, p.reference_type), []).append(p)
        return libs


def ee_predicate_name(obj_type: str, i: int) -> str:
    return f"RelPose(ee,{obj_type})-{i}"


def relation_predicate_name(subj_type: str, ref_type: str, i: int) -> str:
    return f"RelPose({subj_type},{ref_type})-{i}"


# --------------------------------------------------------------------------
# library construction


def _window(traj: RelTrajectory, mode: str, frac: float):
    if mode == "full" or len(traj) == 0:
        return traj.pos, traj.quat
    if mode == "end":
        return traj.pos[-1:], traj.quat[-1:]
    n = max(1, int(np.ceil(frac * len(traj))))
    return traj.pos[-n:], traj.quat[-n:]


def _cluster_endpoints(ends: np.ndarray, cfg: PredicateConfig) -> np.ndarray:
    """Cluster labels per trajectory, relabelled in order of first appearance."""
    k = cfg.k_clusters
    n = len(ends)
    if n == 1 or k == 1:
        raw = np.zeros(n, int)
    elif k == "auto":
        raw = fcluster(linkage(ends, method="single"), t=cfg.cluster_distance, criterion="distance")
    else:
        k = min(int(k), n)
        _, raw = kmeans2(ends, k, minit="++", seed=np.random.default_rng(0))
    order = {}
    for lab in raw:
        order.setdefault(int(lab), len(order))
    return np.array([order[int(lab)] for lab in raw])


def training_sets(pre_datasets: dict, motion_datasets: dict, cfg: Optional[PredicateConfig] = None) -> list:
    """Samples behind every predicate, as (name, subject type, reference type,
    positions, quaternions, number of episodes), in library order."""
    cfg = cfg or PredicateConfig()
    out = []

    # gripper-at-object predicates from the ee pose in the moved object's frame
    ee_samples: dict = {}
    for key in sorted(motion_datasets):
        for ee_in_obj, _, _ in motion_datasets[key].trajectories:
            ee_samples.setdefault(key[0], []).append(_window(ee_in_obj, cfg.ee_window, cfg.ee_tail_fraction))
    for lam in sorted(set(ee_samples) | set(pre_datasets)):
        chunks = ee_samples.get(lam, [])
        if not chunks:
            log.warning("no motion samples for ee predicate on %s; skipped", lam)
            continue
        pos = np.concatenate([c[0] for c in chunks])
        quat = np.concatenate([c[1] for c in chunks])
        out.append((ee_predicate_name(lam, 0), EE, lam, pos, quat, len(chunks)))

    # object-in-reference predicates from the motion tail plus the post window
    for key in sorted(motion_datasets):
        ds = motion_datasets[key]
        per_traj = []
        for (_, _, obj_in_ref), post in zip(ds.trajectories, ds.post_window):
            p, q = _window(obj_in_ref, cfg.motion_window, cfg.motion_tail_fraction)
            per_traj.append((np.concatenate([p, post.pos]), np.concatenate([q, post.quat])))
        ends = np.array([p[-1] for p, _ in per_traj])
        labels = _cluster_endpoints(ends, cfg)
        for c in range(labels.max() + 1 if len(labels) else 0):
            members = [per_traj[i] for i in range(len(per_traj)) if labels[i] == c]
            pos = np.concatenate([m[0] for m in members])
            quat = np.concatenate([m[1] for m in members])
            out.append((relation_predicate_name(key[0], key[1], c), key[0], key[1], pos, quat, len(members)))
    return out


def build_libraries(pre_datasets: dict, motion_datasets: dict, cfg: Optional[PredicateConfig] = None) -> Libraries:
    cfg = cfg or PredicateConfig()
    libs = Libraries(mask_held_objects=cfg.mask_held_objects)
    fit = dict(pos_floor=cfg.pos_cov_floor, ori_floor=cfg.ori_cov_floor, max_iter=cfg.max_iter, tol=cfg.tol)
    for name, subj, ref, pos, quat, n_groups in training_sets(pre_datasets, motion_datasets, cfg):
        try:
            g = fit_se3_gaussian((pos, quat), n_groups=n_groups, **fit)
        except InsufficientData as e:
            log.warning("predicate %s skipped: %s", name, e)
            continue
        pred = RelPosePredicate(name, subj, ref, g, cfg.eps_pos, cfg.eps_ori)
        if subj == EE:
            libs.pre[ref] = [pred]
        else:
            libs.motion.setdefault((subj, ref), []).append(pred)
    return libs


# --------------------------------------------------------------------------
# abstraction


def _evaluate(ee_pos, ee_quat, obj_pos: dict, obj_quat: dict, types: dict, gripper_open: np.ndarray, libs: Libraries) -> dict:
    """Truth arrays (T,) for every ground atom over a batch of states."""
    out: dict = {GroundAtom(GRIPPER_OPEN, ()): np.asarray(gripper_open, bool)}
    ids = sorted(types)
    held = {}
    for o in ids:
        preds = libs.pre.get(types[o], [])
        any_ee = np.zeros(len(ee_pos), bool)
        for pred in preds:
            p, q = relative_pose_arrays(obj_pos[o], obj_quat[o], ee_pos, ee_quat)
            m = pred.holds_arrays(p, q)
            out[GroundAtom(pred.name, (o,))] = m
            any_ee |= m
        held[o] = any_ee & ~np.asarray(gripper_open, bool)
    for s in ids:
        for r in ids:
            if s == r:
                continue
            preds = libs.motion.get((types[s], types[r]), [])
            if not preds:
                continue
            p, q = relative_pose_arrays(obj_pos[r], obj_quat[r], obj_pos[s], obj_quat[s])
            for pred in preds:
                m = pred.holds_arrays(p, q)
                if libs.mask_held_objects:
                    # a grasped object's resting relations are superseded by the grasp
                    m = m & ~held[s]
                out[GroundAtom(pred.name, (s, r))] = m
    return out


def abstract(state: WorldState, libs: Libraries) -> frozenset:
    ee = state.ee_pose
    objs = state.objects
    truth = _evaluate(
        ee.position[None, :],
        ee.orientation[None, :],
        {o: v[0].position[None, :] for o, v in objs.items()},
        {o: v[0].orientation[None, :] for o, v in objs.items()},
        {o: v[1] for o, v in objs.items()},
        np.array([state.gripper == OPEN]),
        libs,
    )
    return frozenset(a for a, m in truth.items() if m[0])


def abstract_range(demo, lo: int, hi: int, libs: Libraries) -> list:
    """Abstract states for samples [lo, hi) of a demonstration."""
    types = demo.state(0).typed_objects()
    recs = demo.records[lo:hi]
    ee_pos = np.array([s.ee_pose.position for _, s in recs]).reshape(-1, 3)
    ee_quat = np.array([s.ee_pose.orientation for _, s in recs]).reshape(-1, 4)
    obj_pos = {o: np.array([s.pose(o).position for _, s in recs]).reshape(-1, 3) for o in types}
    obj_quat = {o: np.array([s.pose(o).orientation for _, s in recs]).reshape(-1, 4) for o in types}
    gopen = np.array([s.gripper == OPEN for _, s in recs])
    truth = _evaluate(ee_pos, ee_quat, obj_pos, obj_quat, types, gopen, libs)
    atoms = sorted(truth)
    return [frozenset(a for a in atoms if truth[a][i]) for i in range(len(recs))]


def format_state(atoms) -> str:
    return "{" + ", ".join(sorted(str(a) for a in atoms)) + "}"
