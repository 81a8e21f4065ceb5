"""Frame-level and video-level ROC/AUC evaluation."""

import csv
import io
import json

import numpy as np

from .data import frame_labels
from .model import forward, video_score


class EvaluationError(ValueError):
    pass


def expand_to_frames(segment_scores, counts):
    """Repeat each segment's score over its frames."""
    segment_scores = np.asarray(segment_scores)
    counts = np.asarray(counts)
    if segment_scores.shape != counts.shape:
        raise EvaluationError(f"{len(segment_scores)} scores for {len(counts)} segments")
    return np.repeat(segment_scores, counts)


def roc_curve(scores, labels):
    """(fpr, tpr, thresholds) sweeping every distinct score from high to low.

    Equal scores form one threshold step, so ties contribute a diagonal segment.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise EvaluationError("scores and labels differ in length")
    P = int(labels.sum())
    N = len(labels) - P
    if P == 0 or N == 0:
        raise EvaluationError("ROC needs both positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = last + 1 - tps
    fpr = np.r_[0.0, fps / N]
    tpr = np.r_[0.0, tps / P]
    return fpr, tpr, np.r_[np.inf, s[last]]


def roc_auc(scores, labels):
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2)


def model_scorer(params, rate=0.6, hce_dropout=False):
    """Segment scorer for ``evaluate`` backed by a trained model (eval mode)."""

    def scorer(feats, record=None):
        scores, _ = forward(feats, params, train=False, rate=rate, hce_dropout=hce_dropout)
        return scores.fused

    return scorer


def evaluate(manifest, scorer, m=32, split="test"):
    """Overall frame AUC, anomaly-subset frame AUC and video-level AUC.

    ``scorer(features, record)`` returns fused segment scores for one video.
    The anomaly subset keeps every frame of anomalous videos (their normal
    frames stay as negatives). The video score is max - min of the fused
    segment scores.
    """
    records = manifest.split(split)
    if not records:
        raise EvaluationError(f"no {split} videos in manifest")
    frame_scores, frame_truth, subset = [], [], []
    rows, tracks = [], []
    for rec in records:
        if rec.intervals is None:
            raise EvaluationError(f"{rec.id}: test record lacks frame annotations")
        feats, counts = manifest.load_segments(rec, m)
        seg = np.asarray(scorer(feats, rec), dtype=np.float64)
        fs = expand_to_frames(seg, counts)
        frame_scores.append(fs)
        frame_truth.append(frame_labels(rec))
        subset.append(np.full(len(fs), rec.label == 1))
        rows.append({"id": rec.id, "label": rec.label, "score": float(video_score(seg))})
        tracks.append((rec.id, fs, [tuple(iv) for iv in rec.intervals]))

    scores = np.concatenate(frame_scores)
    truth = np.concatenate(frame_truth)
    in_subset = np.concatenate(subset)
    report = EvalReport(
        overall_auc=roc_auc(scores, truth),
        subset_auc=roc_auc(scores[in_subset], truth[in_subset]),
        video_auc=roc_auc([r["score"] for r in rows], [r["label"] for r in rows]),
        videos=rows,
    )
    report.roc = roc_curve(scores, truth)[:2]
    report.subset_roc = roc_curve(scores[in_subset], truth[in_subset])[:2]
    report.tracks = tracks
    return report


class EvalReport:
    def __init__(self, overall_auc, subset_auc, video_auc, videos):
        self.overall_auc = overall_auc
        self.subset_auc = subset_auc
        self.video_auc = video_auc
        self.videos = videos
        self.roc = None
        self.subset_roc = None
        # (id, frame scores, intervals) per video, for plotting
        self.tracks = []

    def to_json(self):
        doc = {
            "overall_auc": self.overall_auc,
            "subset_auc": self.subset_auc,
            "video_auc": self.video_auc,
            "videos": self.videos,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def roc_csv(self, which="overall"):
        fpr, tpr = self.roc if which == "overall" else self.subset_roc
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        writer.writerows((repr(float(a)), repr(float(b))) for a, b in zip(fpr, tpr))
        return buf.getvalue()
