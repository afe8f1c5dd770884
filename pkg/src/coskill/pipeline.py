"""Offline learning: segmentation, reference selection, predicates,
operators and skills, bundled into one model."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .bundle import ModelBundle
from .config import Config
from .errors import CoskillError, SchemaError, StageError
from .operators import MOTION, PREMOTION, boundary_states, induce_operators, transitions_from
from .predicates import build_libraries
from .reference import assign_references
from .segmentation import _rel, aggregate_datasets, detect_episodes
from .skills import MOTION_OBJECT, REFERENCE_OBJECT, learn_skill
from .world import EE, demonstrations_text

log = logging.getLogger(__name__)


@dataclass
class LearnSummary:
    n_demos: int = 0
    n_episodes: int = 0
    n_predicates: int = 0
    n_operators: int = 0
    n_skills: int = 0
    skill_errors: dict = field(default_factory=dict)  # id -> (rms projected, rms unconstrained, K)

    def lines(self) -> list:
        out = [
            f"demonstrations: {self.n_demos}",
            f"episodes:       {self.n_episodes}",
            f"predicates:     {self.n_predicates}",
            f"operators:      {self.n_operators}",
            f"skills:         {self.n_skills}",
        ]
        for sid in sorted(self.skill_errors):
            proj, raw, k = self.skill_errors[sid]
            out.append(f"  {sid}: K={k} rms={proj:.4f} m/s (unconstrained {raw:.4f})")
        return out


def corpus_hash(demos) -> str:
    return hashlib.sha256(demonstrations_text(demos).encode()).hexdigest()


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (CoskillError, ValueError, KeyError) as e:
        raise StageError(name, e) from e


def skill_trajectories(op, demos: list, episodes: list) -> list:
    """ee trajectories in the skill frame for every segment behind ``op``."""
    out = []
    for d, e, phase in op.segments:
        ep = episodes[d][e]
        if phase == PREMOTION:
            out.append(_rel(demos[d], ep.motion_object, EE, ep.t0, ep.t_start + 1, (d, e)))
        else:
            out.append(_rel(demos[d], ep.reference_object, EE, ep.t_start, ep.t_stop + 1, (d, e)))
    return out


def learn(
    demos: list,
    config: Optional[Config] = None,
    annotations: Optional[list] = None,
    endpoint: Optional[Callable[[str], str]] = None,
) -> tuple:
    """Returns (ModelBundle, LearnSummary)."""
    cfg = config or Config()
    if not demos:
        raise SchemaError("empty corpus")
    summary = LearnSummary(n_demos=len(demos))

    episodes = _stage("segmentation", lambda: [detect_episodes(d, cfg.segmentation) for d in demos])
    summary.n_episodes = sum(len(e) for e in episodes)
    if summary.n_episodes == 0:
        raise StageError("segmentation", SchemaError("no object motion found in the corpus"))

    _stage("reference", assign_references, demos, episodes, cfg.reference, annotations, endpoint)

    def predicates():
        pre, motion = aggregate_datasets(demos, episodes)
        return build_libraries(pre, motion, cfg.predicates)

    libs = _stage("predicates", predicates)
    summary.n_predicates = len(libs.all())

    def operators():
        bounds = boundary_states(demos, episodes, libs)
        return induce_operators(transitions_from(demos, episodes, bounds))

    ops = _stage("operators", operators)
    summary.n_operators = len(ops)

    def skills():
        out = {}
        for op in ops:
            frame = MOTION_OBJECT if op.phase == PREMOTION else REFERENCE_OBJECT
            sk = learn_skill(op.skill_ref, frame, skill_trajectories(op, demos, episodes), op.gripper, cfg.skills)
            out[sk.id] = sk
        return out

    skills_by_id = _stage("skills", skills)
    summary.n_skills = len(skills_by_id)
    for sid, sk in skills_by_id.items():
        summary.skill_errors[sid] = (sk.report.rms_projected, sk.report.rms_unconstrained, sk.report.K)

    types = list(demos[0].types)
    bundle = ModelBundle(
        types,
        libs,
        ops,
        skills_by_id,
        cfg,
        {"corpus_sha256": corpus_hash(demos), "seed": cfg.seed, "n_demos": len(demos)},
    )
    return bundle, summary


__all__ = ["learn", "LearnSummary", "corpus_hash", "skill_trajectories", "MOTION", "PREMOTION"]
