"""Reference-object selection for motion episodes.

Three selectors share one contract: the answer is always one of the scene
objects other than the motion object.

* ``oracle`` reads the scripted demonstrator's annotations.
* ``heuristic`` picks the object the motion object comes to rest closest to.
* ``external`` sends a one-line JSON request to an endpoint and validates the
  one-line JSON reply. Endpoints are plain callables ``str -> str``; a
  file-backed replay stub and a subprocess endpoint are provided.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import ReferenceConfig
from .errors import ExternalUnavailable, InvalidExternalReply, NoCandidates
from .segmentation import Episode
from .world import Demonstration

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceQuery:
    frames: tuple
    candidates: tuple
    motion_object: str

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a query needs at least one frame")
        if self.motion_object in self.candidates:
            raise ValueError("motion object cannot be a candidate")

    def request_line(self, instruction: str) -> str:
        return json.dumps(
            {
                "frames": list(self.frames),
                "candidates": list(self.candidates),
                "motion_object": self.motion_object,
                "instruction": instruction,
            },
            separators=(",", ":"),
        )


def build_query(episode: Episode, demo: Demonstration, n_frames: int = 4, demo_index: int = 0) -> ReferenceQuery:
    a, b = episode.motion
    idx = np.unique(np.round(np.linspace(a, b, n_frames)).astype(int)) if n_frames > 1 else np.array([a])
    if len(idx) < n_frames:  # very short motion: repeat frames so the count is exact
        idx = np.round(np.linspace(a, b, n_frames)).astype(int)
    frames = tuple(demo.frame_id(int(i), demo_index) for i in idx)
    candidates = tuple(o for o in demo.object_ids if o != episode.motion_object)
    if not candidates:
        raise NoCandidates(f"no candidate references for {episode.motion_object}")
    return ReferenceQuery(frames, candidates, episode.motion_object)


# --------------------------------------------------------------------------
# selectors


def heuristic_reference(episode: Episode, demo: Demonstration, candidates) -> str:
    state = demo.state(episode.t_stop)
    obj = state.pose(episode.motion_object)
    best = None
    for c in sorted(candidates):
        rel = state.pose(c).inverse().apply(obj.position)
        d = float(np.linalg.norm(rel))
        score = d / (1.0 + d)
        if best is None or score < best[0]:
            best = (score, c)
    return best[1]


def oracle_reference(episode: Episode, annotations: list) -> str:
    """Match the episode to the annotation with the largest motion overlap."""
    best, overlap = None, 0
    for ann in annotations:
        if ann["motion_object"] != episode.motion_object:
            continue
        lo = max(episode.t_start, ann["start"])
        hi = min(episode.t_stop, ann["stop"])
        if hi - lo + 1 > overlap:
            best, overlap = ann, hi - lo + 1
    if best is None or best.get("reference") is None:
        raise NoCandidates(f"no annotation covers the {episode.motion_object} episode at {episode.motion}")
    return best["reference"]


def parse_reply(reply: str, candidates) -> str:
    try:
        obj = json.loads(reply)
    except (json.JSONDecodeError, TypeError):
        raise InvalidExternalReply(f"reply is not JSON: {reply!r}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("reference"), str):
        raise InvalidExternalReply(f"reply lacks a reference field: {reply!r}")
    if obj["reference"] not in candidates:
        raise InvalidExternalReply(f"{obj['reference']!r} is not one of {list(candidates)}")
    return obj["reference"]


def request_hash(line: str) -> str:
    return hashlib.sha256(line.encode()).hexdigest()


class ReplayStub:
    """Answers from a table of canned replies keyed by request hash.

    The table file is a JSON object ``{"<sha256 of request line>": "<reply line>"}``;
    the key ``"*"`` is used for any request that has no entry.
    """

    def __init__(self, table: dict):
        self.table = dict(table)
        self.requests: list[str] = []

    @classmethod
    def load(cls, path) -> "ReplayStub":
        try:
            return cls(json.loads(Path(path).read_text()))
        except OSError as e:
            raise ExternalUnavailable(str(e)) from e

    def __call__(self, line: str) -> str:
        self.requests.append(line)
        key = request_hash(line)
        if key in self.table:
            return self.table[key]
        if "*" in self.table:
            return self.table["*"]
        raise ExternalUnavailable(f"no canned reply for request {key[:12]}")


class SubprocessEndpoint:
    """Runs a command per request: request line on stdin, reply line on stdout."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def __call__(self, line: str) -> str:
        try:
            out = subprocess.run(
                self.argv, input=line + "\n", capture_output=True, text=True, timeout=self.timeout, check=True
            )
        except (OSError, subprocess.SubprocessError) as e:
            raise ExternalUnavailable(str(e)) from e
        return out.stdout.strip().splitlines()[0] if out.stdout.strip() else ""


def endpoint_from_config(spec: Optional[str]) -> Optional[Callable[[str], str]]:
    """``replay:<path>`` or ``cmd:<command line>``."""
    if not spec:
        return None
    kind, _, arg = spec.partition(":")
    if kind == "replay":
        return ReplayStub.load(arg)
    if kind == "cmd":
        return SubprocessEndpoint(arg)
    raise ValueError(f"unknown endpoint spec {spec!r}")


def select_reference(
    episode: Episode,
    demo: Demonstration,
    kind: str = "oracle",
    *,
    annotations: Optional[list] = None,
    endpoint: Optional[Callable[[str], str]] = None,
    config: Optional[ReferenceConfig] = None,
    demo_index: int = 0,
) -> str:
    cfg = config or ReferenceConfig()
    query = build_query(episode, demo, cfg.n_frames, demo_index)
    if len(query.candidates) == 1:
        return query.candidates[0]
    if kind == "oracle":
        if annotations is None:
            raise ValueError("oracle selection needs annotations")
        ref = oracle_reference(episode, annotations)
        if ref not in query.candidates:
            raise InvalidExternalReply(f"annotated reference {ref!r} is not in the scene")
        return ref
    if kind == "heuristic":
        return heuristic_reference(episode, demo, query.candidates)
    if kind == "external":
        if endpoint is None:
            raise ExternalUnavailable("no external endpoint configured")
        reply = endpoint(query.request_line(cfg.instruction))
        return parse_reply(reply, query.candidates)
    raise ValueError(f"unknown selector {kind!r}")


def majority_assign(groups: dict) -> dict:
    """Modal reply per group; ties go to the reply seen first."""
    out = {}
    for key, replies in groups.items():
        if not replies:
            raise ValueError(f"group {key!r} is empty")
        counts = Counter(replies)
        top = max(counts.values())
        out[key] = next(r for r in replies if counts[r] == top)
    return out


def assign_references(
    demos: list,
    episodes: list,
    config: Optional[ReferenceConfig] = None,
    annotations: Optional[list] = None,
    endpoint: Optional[Callable[[str], str]] = None,
) -> list:
    """Fill ``reference_object`` on every episode (in place) and return the
    per-episode selector outputs."""
    cfg = config or ReferenceConfig()
    if cfg.selector == "external" and endpoint is None:
        endpoint = endpoint_from_config(cfg.endpoint)

    jobs = [(d, e) for d, eps in enumerate(episodes) for e in range(len(eps))]

    def run(job):
        d, e = job
        ep = episodes[d][e]
        ann = annotations[d] if annotations is not None else None
        try:
            return select_reference(
                ep, demos[d], cfg.selector, annotations=ann, endpoint=endpoint, config=cfg, demo_index=d
            )
        except ExternalUnavailable:
            if not cfg.fallback_to_heuristic:
                raise
            log.warning("external selector unavailable for demo %d episode %d; using heuristic", d, e)
            return select_reference(ep, demos[d], "heuristic", config=cfg, demo_index=d)

    workers = max(1, cfg.max_concurrent) if cfg.selector == "external" else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            replies = list(pool.map(run, jobs))
    else:
        replies = [run(j) for j in jobs]

    if cfg.assignment == "majority":
        groups: dict = {}
        for (d, e), ref in zip(jobs, replies):
            types = demos[d].state(0).typed_objects()
            key = (types[episodes[d][e].motion_object], e)
            groups.setdefault(key, []).append(types[ref])
        modal = majority_assign(groups)
        final = []
        for (d, e), ref in zip(jobs, replies):
            types = demos[d].state(0).typed_objects()
            want = modal[(types[episodes[d][e].motion_object], e)]
            if types[ref] != want:
                same = sorted(o for o, t in types.items() if t == want and o != episodes[d][e].motion_object)
                ref = same[0] if same else ref
            final.append(ref)
        replies = final
    elif cfg.assignment != "per_episode":
        raise ValueError(f"unknown assignment mode {cfg.assignment!r}")

    for (d, e), ref in zip(jobs, replies):
        episodes[d][e].reference_object = ref
    return replies
