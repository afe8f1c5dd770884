import numpy as np
import pytest
from hypothesis import given, strategies as st

from coskill.config import SegmentationConfig
from coskill.errors import MultiObjectMotion
from coskill.geometry import Pose
from coskill.segmentation import Episode, _clean, _intervals, _moving_flags, aggregate_datasets, detect_episodes
from coskill.world import Demonstration, WorldState


def _demo(tracks: dict, dt=0.05):
    """tracks: object id -> (T,3) positions; the ee sits still at the origin."""
    T = len(next(iter(tracks.values())))
    recs = []
    for i in range(T):
        objs = {o: (Pose(p[i], [1, 0, 0, 0]), "thing_type") for o, p in tracks.items()}
        recs.append((i * dt, WorldState(Pose([0, 0, 0.5], [0, 1, 0, 0]), objs, "open")))
    return Demonstration(recs, types=("thing_type",))


def _ramp(T, a, b, dist=0.3):
    p = np.zeros((T, 3))
    for i in range(T):
        p[i, 0] = dist * np.clip((i - a) / (b - a), 0, 1)
    return p


def test_single_motion_is_one_episode():
    d = _demo({"a": _ramp(120, 40, 70), "b": np.zeros((120, 3))})
    eps = detect_episodes(d)
    assert len(eps) == 1
    ep = eps[0]
    assert ep.motion_object == "a"
    assert ep.t0 == 0
    assert abs(ep.t_start - 40) <= 3 and abs(ep.t_stop - 70) <= 3


def test_static_demo_has_no_episodes():
    d = _demo({"a": np.zeros((50, 3))})
    assert detect_episodes(d) == []


def test_two_sequential_motions_share_no_samples():
    p = _ramp(200, 30, 60)
    q = _ramp(200, 120, 150)
    eps = detect_episodes(_demo({"a": p, "b": q}))
    assert [e.motion_object for e in eps] == ["a", "b"]
    assert eps[1].t0 == eps[0].post_end + 1
    assert eps[0].post_end < eps[1].t_start


def test_overlapping_motions_raise():
    d = _demo({"a": _ramp(120, 30, 80), "b": _ramp(120, 50, 100)})
    with pytest.raises(MultiObjectMotion):
        detect_episodes(d)


def test_nonpositive_threshold_rejected():
    d = _demo({"a": _ramp(60, 10, 30)})
    with pytest.raises(ValueError):
        detect_episodes(d, SegmentationConfig(v_thresh=0.0))


def test_episode_interval_validation():
    with pytest.raises(ValueError):
        Episode("a", (0, 5), (6, 9), 10)
    with pytest.raises(ValueError):
        Episode("ee", (0, 5), (5, 9), 10)
    e = Episode("a", (0, 5), (5, 9), 12, "b")
    assert Episode.from_dict(e.to_dict()) == e


def test_hysteresis_keeps_a_dip_inside_motion():
    cfg = SegmentationConfig()
    v = np.full(30, 2 * cfg.v_thresh)
    v[10:13] = 0.8 * cfg.v_thresh  # above the stay level, below the enter level
    lin = np.column_stack([v, np.zeros(30), np.zeros(30)])
    flags = _moving_flags(lin, np.zeros((30, 3)), cfg)
    assert flags.all()


@given(st.lists(st.booleans(), min_size=1, max_size=60))
def test_intervals_cover_exactly_the_true_flags(bits):
    flags = np.array(bits)
    ivs = _intervals(flags)
    rebuilt = np.zeros(len(flags), bool)
    for a, b in ivs:
        assert a <= b
        rebuilt[a : b + 1] = True
    assert (rebuilt == flags).all()
    for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
        assert a1 > b0 + 1


@given(st.lists(st.booleans(), min_size=1, max_size=60), st.integers(1, 5))
def test_clean_drops_short_and_keeps_order(bits, min_len):
    ivs = _clean(_intervals(np.array(bits)), min_len)
    for a, b in ivs:
        assert b - a + 1 >= min_len
    assert ivs == sorted(ivs)


def test_scripted_corpus_segments_match_annotations(tabletop_data):
    demos, anns = tabletop_data
    for demo, ann in zip(demos, anns):
        eps = detect_episodes(demo)
        assert [e.motion_object for e in eps] == [a["motion_object"] for a in ann]
        for e, a in zip(eps, ann):
            # smoothing widens the detected interval by at most a few samples
            assert abs(e.t_start - a["start"]) <= 3
            assert abs(e.t_stop - a["stop"]) <= 3


def test_aggregate_requires_references(tabletop_data):
    demos, _ = tabletop_data
    eps = [detect_episodes(demos[0])]
    with pytest.raises(ValueError):
        aggregate_datasets(demos[:1], eps)
    for e in eps[0]:
        e.reference_object = "pan"
    pre, motion = aggregate_datasets(demos[:1], eps)
    assert set(pre) <= {"thing_type", "lid_type"}
    assert all(k[1] == "cookware_type" for k in motion)
