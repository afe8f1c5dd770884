"""Dataclass configuration. Every tunable default lives here and is
serialised into config files and model bundles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Union


@dataclass
class SegmentationConfig:
    v_thresh: float = 0.01
    w_thresh: float = 0.05
    hysteresis: float = 0.5
    min_segment: int = 5
    smoothing_window: int = 5
    post_window_s: float = 2.0


@dataclass
class ReferenceConfig:
    selector: str = "oracle"  # oracle | heuristic | external
    n_frames: int = 4
    assignment: str = "per_episode"  # per_episode | majority
    fallback_to_heuristic: bool = True
    max_concurrent: int = 4
    endpoint: Union[str, None] = None
    instruction: str = (
        "Which scene object is the moving object placed relative to? "
        "Answer with exactly one of the candidate ids."
    )


@dataclass
class PredicateConfig:
    eps_pos: float = 3.0
    eps_ori: float = 3.0
    pos_cov_floor: float = 1e-6
    ori_cov_floor: float = 1e-4
    max_iter: int = 50
    tol: float = 1e-10
    # "full": all motion samples; "tail": only the final fraction below
    ee_window: str = "full"
    ee_tail_fraction: float = 0.3
    # "end": final motion sample only; "tail"/"full" as above
    motion_window: str = "end"
    motion_tail_fraction: float = 0.3
    # 1 = unimodal; >1 = k-means; "auto" = distance-threshold linkage
    k_clusters: Union[int, str] = 1
    cluster_distance: float = 0.05
    mask_held_objects: bool = True


@dataclass
class SkillConfig:
    K: Union[int, str] = "bic"
    k_max: int = 6
    # ridge pulls A toward -prior_gain*I; matters only in directions the data never excites
    ridge: float = 1e-4
    prior_gain: float = 1.0
    eps_stab: float = 1e-3
    # slowest allowed contraction (1/s); keeps far-field convergence time bounded
    min_rate: float = 0.5
    discrete_dt: float = 0.01
    v_max: float = 0.5
    w_max: float = 1.5
    dt: float = 0.01
    conv_v: float = 1e-3
    conv_w: float = 1e-3
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    gmm_cov_floor: float = 1e-6
    seed: int = 0
    max_points: int = 2000


@dataclass
class PlannerConfig:
    node_cap: int = 1_000_000


@dataclass
class ExecutorConfig:
    replan_limit: int = 20
    conv_v: float = 2e-3
    conv_w: float = 5e-3
    # no realised motion for this long also counts as converged (a jammed or clamped joint)
    stall_s: float = 0.5
    control_dt: float = 0.01
    obstacle_margin: float = 0.0
    damping: float = 20.0
    settle_s: float = 0.2
    retreat_dist: float = 0.08
    retreat_speed: float = 0.2
    skill_timeout_s: float = 20.0
    resample_max_tries: int = 100
    telemetry_every: int = 1


@dataclass
class SimConfig:
    grasp_radius: float = 0.06
    demo_dt: float = 0.05
    approach_gain: float = 3.0
    approach_speed: float = 0.25
    approach_accel: float = 0.5
    jitter_pos: float = 0.005
    jitter_ori_deg: float = 2.0
    double_approach_prob: float = 0.15
    hold_samples: int = 4
    post_wait_s: float = 3.0
    lift_height: float = 0.08


@dataclass
class Config:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    predicates: PredicateConfig = field(default_factory=PredicateConfig)
    skills: SkillConfig = field(default_factory=SkillConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return _build(cls, d or {})

    @classmethod
    def load(cls, path) -> "Config":
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(cls, d: dict):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in d.items():
        if key not in known:
            raise KeyError(f"unknown config key {cls.__name__}.{key}")
        default = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(default) and isinstance(value, dict):
            kwargs[key] = _build(type(default), value)
        else:
            kwargs[key] = value
    return cls(**kwargs)
