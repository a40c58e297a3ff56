import numpy as np
import pytest

from gnntrack.core import Box2D, Box3D, Detection, TrackState, Tracklet
from gnntrack.featnet import EmbeddingProvider
from gnntrack.gnn import ModelConfig, init_params
from gnntrack.kitti import SequenceData, labels_by_frame, write_results
from gnntrack.metrics import clear_metrics
from gnntrack.synth import ScenarioConfig, generate_scenario
from gnntrack.tracker import Tracker, TrackerConfig, TrackerError, predict, predict_2d, run_sequence


def _box(x, z=10.0):
    return Box3D((x, 1.6, z), (1.5, 1.6, 3.9), 0.2)


def _det(frame, x, z=10.0):
    return Detection(frame, _box(x, z), Box2D(x * 10, 0, x * 10 + 5, 5), 0.9)


def test_predict_constant_velocity():
    b2 = Box2D(0, 0, 10, 10)
    tr = Tracklet(0, [(0, _box(0.0), b2)])
    assert predict(tr) == _box(0.0)
    tr.append(1, _box(1.0), b2.translated(4, 0))
    assert predict(tr).center[0] == pytest.approx(2.0)
    assert predict(tr, 3).center[0] == pytest.approx(3.0)
    assert predict(tr).dims == tr.last_box3d.dims and predict(tr).yaw == tr.last_box3d.yaw
    assert predict_2d(tr).left == pytest.approx(8.0)
    still = Tracklet(1, [(0, _box(5.0), b2), (1, _box(5.0), b2)])
    assert predict(still) == _box(5.0)
    gap = Tracklet(2, [(0, _box(0.0), b2), (2, _box(2.0), b2)])
    assert predict(gap).center[0] == pytest.approx(3.0)


def _oracle_affinity(tracks, predicted, dets):
    """1 for identical embeddings, 0 otherwise (noise-free appearance)."""
    A = np.zeros((len(tracks), len(dets)))
    for i, t in enumerate(tracks):
        for j, d in enumerate(dets):
            A[i, j] = float(np.dot(t.cached_appearance[0], d.appearance_2d) > 0.999)
    return A


def test_first_frame_births_are_tentative():
    tk = Tracker(TrackerConfig(), affinity_fn=lambda t, p, d: np.zeros((len(t), len(d))))
    out = tk.step(0, [_det(0, x) for x in (0.0, 5.0, 10.0)])
    assert out == []
    assert len(tk.tracks) == 3 and all(t.state == TrackState.TENTATIVE for t in tk.tracks)


def test_lifecycle_with_iou_mode():
    tk = Tracker(TrackerConfig(mode="iou", min_hits=2, max_age=1))
    assert tk.step(0, [_det(0, 0.0)]) == []
    out = tk.step(1, [_det(1, 0.0)])
    assert [r.track_id for r in out] == [0] and tk.tracks[0].state == TrackState.CONFIRMED
    assert tk.step(2, []) == []
    assert tk.tracks[0].misses == 1 and tk.tracks[0].state == TrackState.LOST
    tk.step(3, [])
    assert tk.tracks == []
    out = tk.step(4, [_det(4, 0.0)])
    assert out == [] and tk.tracks[0].id == 1  # ids are never reused


def test_confirmed_track_recovers_after_miss():
    tk = Tracker(TrackerConfig(mode="iou", min_hits=2, max_age=2))
    for f in range(3):
        tk.step(f, [_det(f, 0.0)])
    tk.step(3, [])
    out = tk.step(4, [_det(4, 0.0)])
    assert [r.track_id for r in out] == [0]


def test_class_filter_and_frame_checks():
    tk = Tracker(TrackerConfig(mode="iou"))
    ped = Detection(0, _box(0.0), Box2D(0, 0, 1, 1), 0.9, "Pedestrian")
    tk.step(0, [ped])
    assert tk.tracks == []
    with pytest.raises(ValueError):
        tk.step(0, [])
    with pytest.raises(TrackerError, match="frame 2"):
        tk.step(2, [_det(5, 0.0)])


def test_gnn_mode_needs_parameters():
    with pytest.raises(ValueError):
        Tracker(TrackerConfig())


def test_oracle_affinity_has_no_identity_switches():
    cfg = ScenarioConfig(num_objects=2, num_frames=10, sigma_app=0.0, fp_rate=0.0, seed=3)
    sc = generate_scenario(cfg)
    res = run_sequence(sc.sequence, TrackerConfig(min_hits=1), provider=EmbeddingProvider(32, 32),
                       affinity_fn=_oracle_affinity)
    clear = clear_metrics(sc.sequence.labels, labels_by_frame(res.records(), 10))
    assert clear.IDS == 0 and clear.FN == 0 and clear.FP == 0
    assert res.stats["tracks_created"] == 2


def _trained_like_run(seq):
    mc = ModelConfig(app2d_dim=32, app3d_dim=32, layers=2)
    return run_sequence(seq, TrackerConfig(), init_params(mc, 5), mc, EmbeddingProvider(32, 32))


def test_outputs_are_input_boxes_and_deterministic():
    sc = generate_scenario(ScenarioConfig.preset("crossing", seed=2))
    a, b = _trained_like_run(sc.sequence), _trained_like_run(sc.sequence)
    assert write_results(a.records()) == write_results(b.records())
    for f, recs in enumerate(a.frames):
        boxes = {(d.box3d, d.box2d) for d in sc.sequence.detections[f]}
        ids = [r.track_id for r in recs]
        assert len(ids) == len(set(ids))
        for r in recs:
            assert r.frame == f and (r.box3d, r.box2d) in boxes


def test_online_property():
    sc = generate_scenario(ScenarioConfig.preset("clean", seed=6, num_frames=20))
    full = _trained_like_run(sc.sequence)
    cut = SequenceData(sc.sequence.seq_id, sc.sequence.detections[:12], sc.sequence.labels[:12])
    part = _trained_like_run(cut)
    assert write_results(part.records()) == write_results([r for f in full.frames[:12] for r in f])


def test_empty_sequence():
    res = run_sequence(SequenceData("x"), TrackerConfig(mode="iou"))
    assert res.frames == [] and res.records() == []


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(min_hits=0)
    with pytest.raises(ValueError):
        TrackerConfig(max_age=-1)
    with pytest.raises(ValueError):
        TrackerConfig(mode="kalman")
