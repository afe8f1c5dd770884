"""Change-point segmentation into premotion/motion episodes and the
aggregation of relative-frame datasets keyed by object types."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SegmentationConfig
from .errors import MultiObjectMotion
from .geometry import relative_pose_arrays, twists_from_arrays
from .world import EE, Demonstration

log = logging.getLogger(__name__)


@dataclass
class Episode:
    motion_object: str
    premotion: tuple  # [t0, t_start) sample indices, may be empty
    motion: tuple  # [t_start, t_stop] inclusive
    post_end: int  # last sample of the post-motion window (inclusive)
    reference_object: Optional[str] = None

    def __post_init__(self):
        if self.motion_object == EE:
            raise ValueError("the end effector cannot be a motion object")
        t0, ts = self.premotion
        a, b = self.motion
        if not (t0 <= ts == a <= b <= self.post_end):
            raise ValueError(f"inconsistent episode intervals {self.premotion} {self.motion} {self.post_end}")

    @property
    def t0(self) -> int:
        return self.premotion[0]

    @property
    def t_start(self) -> int:
        return self.motion[0]

    @property
    def t_stop(self) -> int:
        return self.motion[1]

    def to_dict(self) -> dict:
        return {
            "motion_object": self.motion_object,
            "premotion": list(self.premotion),
            "motion": list(self.motion),
            "post_end": self.post_end,
            "reference_object": self.reference_object,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(d["motion_object"], tuple(d["premotion"]), tuple(d["motion"]), d["post_end"], d.get("reference_object"))


def _moving_flags(lin: np.ndarray, ang: np.ndarray, cfg: SegmentationConfig) -> np.ndarray:
    v = np.linalg.norm(lin, axis=1)
    w = np.linalg.norm(ang, axis=1)
    enter = (v > cfg.v_thresh) | (w > cfg.w_thresh)
    stay = (v > cfg.hysteresis * cfg.v_thresh) | (w > cfg.hysteresis * cfg.w_thresh)
    flags = np.zeros(len(v), bool)
    on = False
    for i in range(len(v)):
        on = enter[i] or (on and stay[i])
        flags[i] = on
    return flags


def _intervals(flags: np.ndarray) -> list:
    out = []
    i, n = 0, len(flags)
    while i < n:
        if flags[i]:
            j = i
            while j + 1 < n and flags[j + 1]:
                j += 1
            out.append([i, j])
            i = j + 1
        else:
            i += 1
    return out


def _clean(intervals: list, min_len: int) -> list:
    merged = []
    for iv in intervals:
        if merged and iv[0] - merged[-1][1] - 1 < min_len:
            merged[-1][1] = iv[1]
        else:
            merged.append(list(iv))
    return [iv for iv in merged if iv[1] - iv[0] + 1 >= min_len]


def object_motion_intervals(demo: Demonstration, cfg: SegmentationConfig) -> dict:
    t = demo.times
    out = {}
    for oid in demo.object_ids:
        pos, quat = demo.object_arrays(oid)
        lin, ang = twists_from_arrays(t, pos, quat, cfg.smoothing_window)
        out[oid] = _clean(_intervals(_moving_flags(lin, ang, cfg)), cfg.min_segment)
    return out


def detect_episodes(demo: Demonstration, cfg: Optional[SegmentationConfig] = None) -> list:
    cfg = cfg or SegmentationConfig()
    if cfg.v_thresh <= 0 or cfg.w_thresh <= 0:
        raise ValueError("thresholds must be positive")
    if len(demo) < 2:
        return []
    t = demo.times
    per_obj = object_motion_intervals(demo, cfg)
    motions = sorted((iv[0], iv[1], oid) for oid, ivs in per_obj.items() for iv in ivs)
    for (a0, a1, oa), (b0, b1, ob) in zip(motions, motions[1:]):
        if b0 <= a1:
            raise MultiObjectMotion(sorted({oa, ob}), (t[b0], t[min(a1, b1)]))

    episodes = []
    prev_post = -1
    for k, (start, stop, oid) in enumerate(motions):
        nxt = motions[k + 1][0] if k + 1 < len(motions) else len(t)
        post_end = stop
        while post_end + 1 < nxt and t[post_end + 1] <= t[stop] + cfg.post_window_s + 1e-9:
            post_end += 1
        t0 = min(prev_post + 1, start)
        episodes.append(Episode(oid, (t0, start), (start, stop), post_end))
        prev_post = post_end
    return episodes


# --------------------------------------------------------------------------
# datasets


@dataclass
class RelTrajectory:
    """Relative-pose samples of one frame in another, with timestamps."""

    t: np.ndarray
    pos: np.ndarray
    quat: np.ndarray
    source: tuple = ()  # (demo index, episode index)

    def __len__(self):
        return len(self.t)


@dataclass
class PreDataset:
    key: str
    trajectories: list = field(default_factory=list)  # RelTrajectory: ee in motion-object frame


@dataclass
class MotionDataset:
    key: tuple
    # triples (ee in o^i, ee in o^r, o^i in o^r), all over the motion interval
    trajectories: list = field(default_factory=list)
    post_window: list = field(default_factory=list)  # RelTrajectory of o^i in o^r after t_stop


def _rel(demo: Demonstration, frame: str, target: str, lo: int, hi: int, source) -> RelTrajectory:
    """``target`` expressed in ``frame`` over samples [lo, hi)."""
    pf, qf = demo.object_arrays(frame) if frame != EE else _ee_arrays(demo)
    pt, qt = demo.object_arrays(target) if target != EE else _ee_arrays(demo)
    p, q = relative_pose_arrays(pf[lo:hi], qf[lo:hi], pt[lo:hi], qt[lo:hi])
    q = np.where(q[:, :1] < 0, -q, q)
    return RelTrajectory(demo.times[lo:hi], p, q, source)


def _ee_arrays(demo: Demonstration):
    poses = [s.ee_pose for _, s in demo.records]
    return np.array([p.position for p in poses]), np.array([p.orientation for p in poses])


def aggregate_datasets(demos: list, episodes: list):
    """Group relative-pose trajectories by the motion object's type (premotion)
    and by (motion type, reference type) (motion)."""
    pre: dict = {}
    motion: dict = {}
    for d, (demo, eps) in enumerate(zip(demos, episodes)):
        types = demo.state(0).typed_objects()
        for e, ep in enumerate(eps):
            if ep.reference_object is None:
                raise ValueError(f"demo {d} episode {e}: reference object not set")
            oi, orf = ep.motion_object, ep.reference_object
            lam_i, lam_r = types[oi], types[orf]
            if ep.t_start > ep.t0:
                ds = pre.setdefault(lam_i, PreDataset(lam_i))
                ds.trajectories.append(_rel(demo, oi, EE, ep.t0, ep.t_start, (d, e)))
            lo, hi = ep.t_start, ep.t_stop + 1
            ds = motion.setdefault((lam_i, lam_r), MotionDataset((lam_i, lam_r)))
            ds.trajectories.append(
                (
                    _rel(demo, oi, EE, lo, hi, (d, e)),
                    _rel(demo, orf, EE, lo, hi, (d, e)),
                    _rel(demo, orf, oi, lo, hi, (d, e)),
                )
            )
            ds.post_window.append(_rel(demo, orf, oi, hi, ep.post_end + 1, (d, e)))
    return pre, motion
