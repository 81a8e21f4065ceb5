import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import pairwise_auc
from wsal.data import Manifest, VideoRecord, frame_labels, write_features
from wsal.evaluate import EvaluationError, evaluate, expand_to_frames, roc_auc, roc_curve, model_scorer
from wsal.model import init_params


def test_expand_examples():
    np.testing.assert_array_equal(expand_to_frames([0.1, 0.9], [3, 2]), [0.1, 0.1, 0.1, 0.9, 0.9])
    out = expand_to_frames(np.full(4, 0.3), [2, 5, 1, 3])
    assert len(out) == 11 and np.all(out == 0.3)
    with pytest.raises(EvaluationError):
        expand_to_frames([0.1, 0.2], [1, 2, 3])


def test_auc_examples():
    y = np.array([0, 1, 1, 0, 1])
    assert roc_auc(y.astype(float), y) == 1.0
    assert roc_auc(np.full(5, 0.4), y) == 0.5
    with pytest.raises(EvaluationError):
        roc_auc([0.1, 0.2], [1, 1])


def test_roc_curve_endpoints_and_ties():
    fpr, tpr, thr = roc_curve([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0])
    np.testing.assert_array_equal(fpr, [0, 0, 0.5, 1])
    np.testing.assert_array_equal(tpr, [0, 0.5, 1, 1])
    assert np.isinf(thr[0])


def test_auc_matches_pairwise_oracle_10k():
    rng = np.random.default_rng(0)
    s = rng.random(10_000)
    y = rng.random(10_000) < 0.3
    assert abs(roc_auc(s, y) - pairwise_auc(s, y)) < 1e-9
    s = rng.integers(0, 7, 10_000).astype(float)  # heavy ties
    assert abs(roc_auc(s, y) - pairwise_auc(s, y)) < 1e-9


scores_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        # a 1/8 grid keeps distinct scores distinct after the transforms below
        arrays(np.float64, n, elements=st.integers(-40, 40).map(lambda v: v / 8)),
        arrays(np.int8, n, elements=st.integers(0, 1)),
    )
).filter(lambda t: 0 < t[1].sum() < len(t[1]))


@settings(max_examples=200, deadline=None)
@given(scores_labels)
def test_auc_negation_complement(t):
    s, y = t
    assert abs(roc_auc(s, y) + roc_auc(-s, y) - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(scores_labels)
def test_auc_monotone_invariance(t):
    s, y = t
    assert roc_auc(np.tanh(s / 3) * 7 + 2, y) == pytest.approx(roc_auc(s, y), abs=1e-12)
    assert roc_auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def _toy_manifest(tmp_path, n=6, T=40, seed=0):
    rng = np.random.default_rng(seed)
    videos = []
    for i in range(n):
        label = i % 2
        write_features(tmp_path / f"v{i}.feat", rng.standard_normal((T, 4)))
        ivs = [[8 + i, 20 + i]] if label else []
        videos.append(VideoRecord(f"v{i}", f"v{i}.feat", label, "test", T, ivs))
    return Manifest(videos, 4, str(tmp_path))


def _truth_scorer(m):
    def scorer(feats, rec):
        y = frame_labels(rec).astype(float)
        bounds = np.linspace(0, len(y), m + 1).astype(int)
        return np.array([y[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])

    return scorer


def test_ground_truth_scorer_perfect(tmp_path):
    man = _toy_manifest(tmp_path)
    rep = evaluate(man, _truth_scorer(40), m=40)
    assert rep.overall_auc == rep.subset_auc == rep.video_auc == 1.0


def test_subset_unchanged_when_normal_videos_removed(tmp_path):
    man = _toy_manifest(tmp_path, n=8)
    rng = np.random.default_rng(3)
    table = {r.id: rng.random(8) for r in man.videos}
    scorer = lambda feats, rec: table[rec.id]  # noqa: E731
    full = evaluate(man, scorer, m=8)
    only_abn = Manifest([r for r in man.videos if r.label], 4, man.root)
    frames = [expand_to_frames(table[r.id], np.full(8, 5)) for r in only_abn.videos]
    truth = [frame_labels(r) for r in only_abn.videos]
    assert full.subset_auc == pytest.approx(pairwise_auc(np.concatenate(frames), np.concatenate(truth)), abs=1e-12)
    with pytest.raises(EvaluationError):
        evaluate(only_abn, scorer, m=8)  # video AUC needs normals


def test_report_json_and_roc_csv(tmp_path):
    man = _toy_manifest(tmp_path)
    rep = evaluate(man, model_scorer(init_params(4, 1, np.random.default_rng(0), hidden=(8, 4))), m=8)
    doc = json.loads(rep.to_json())
    assert set(doc) == {"overall_auc", "subset_auc", "video_auc", "videos"}
    assert len(doc["videos"]) == 6 and all(0 <= v["score"] <= 1 for v in doc["videos"])
    lines = rep.roc_csv().splitlines()
    assert lines[0] == "fpr,tpr" and lines[1] == "0.0,0.0" and lines[-1] == "1.0,1.0"
    assert rep.roc_csv("subset").splitlines()[-1] == "1.0,1.0"


def test_missing_annotations_rejected(tmp_path):
    man = _toy_manifest(tmp_path)
    man.videos[0].intervals = None
    with pytest.raises(EvaluationError):
        evaluate(man, _truth_scorer(8), m=8)


def test_random_scorer_near_half_on_default_benchmark(default_benchmark):
    """Monte-Carlo mean of the three AUCs for a uniform random scorer."""
    rng = np.random.default_rng(0)
    scorer = lambda feats, rec: rng.random(len(feats))  # noqa: E731
    reps = [evaluate(default_benchmark, scorer) for _ in range(60)]
    for name in ("overall_auc", "subset_auc", "video_auc"):
        assert abs(np.mean([getattr(r, name) for r in reps]) - 0.5) < 0.02, name
