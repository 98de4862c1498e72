"""F0, voicing and note metrics of generated singing against references."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import ConditionFeatures, hz_to_midi
from .errors import DegenerateError, NoFramesError, ShapeMismatchError, ValidationError
from .score import Score

NO_FRAMES, DEGENERATE = "NO_FRAMES", "DEGENERATE"


def _pair(ref: ConditionFeatures, hyp: ConditionFeatures):
    if len(ref) != len(hyp):
        raise ShapeMismatchError(f"reference has {len(ref)} frames, hypothesis {len(hyp)}")
    return ref, hyp


def vuv_error(ref: ConditionFeatures, hyp: ConditionFeatures) -> float:
    """Percentage of frames whose voicing flags differ."""
    ref, hyp = _pair(ref, hyp)
    if len(ref) == 0:
        raise NoFramesError("empty tracks")
    return 100.0 * float(np.count_nonzero(ref.vuv != hyp.vuv)) / len(ref)


def _both_voiced(ref, hyp):
    ref, hyp = _pair(ref, hyp)
    sel = (ref.vuv > 0) & (hyp.vuv > 0)
    return ref.f0_hz[sel], hyp.f0_hz[sel]


def f0_rmse(ref: ConditionFeatures, hyp: ConditionFeatures) -> float:
    """RMSE in Hz over frames voiced in both tracks."""
    a, b = _both_voiced(ref, hyp)
    if a.size == 0:
        raise NoFramesError("no frame is voiced in both tracks")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def f0_corr(ref: ConditionFeatures, hyp: ConditionFeatures) -> float:
    """Pearson correlation of F0 over frames voiced in both tracks."""
    a, b = _both_voiced(ref, hyp)
    if a.size < 2:
        raise NoFramesError("fewer than two frames voiced in both tracks")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(np.sum(da * da)), np.sqrt(np.sum(db * db))
    if na == 0 or nb == 0:
        raise DegenerateError("an F0 track is constant over the shared frames")
    return float(np.clip(np.sum(da * db) / (na * nb), -1.0, 1.0))


def score_note_track(score: Score) -> np.ndarray:
    """Per-frame MIDI note of ``score``; -1 outside syllable spans."""
    notes = np.full(score.total_frames, -1, dtype=np.int64)
    for start, end, ev in score.spans():
        if not ev.is_rest:
            notes[start:end] = ev.midi_pitch
    return notes


def macro_prf(ref_notes, hyp_notes) -> tuple[float, float, float]:
    """Macro-averaged precision, recall and F1 over classes present in either sequence.

    A class's precision (recall) is 0 when it was never predicted (never
    present); its F1 is 0 when both are 0.
    """
    ref_notes, hyp_notes = np.asarray(ref_notes), np.asarray(hyp_notes)
    classes = np.union1d(ref_notes, hyp_notes)
    if classes.size == 0:
        raise NoFramesError("nothing to compare")
    ps, rs, fs = [], [], []
    for c in classes:
        tp = np.count_nonzero((ref_notes == c) & (hyp_notes == c))
        n_pred = np.count_nonzero(hyp_notes == c)
        n_true = np.count_nonzero(ref_notes == c)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def compared_notes(ref_score: Score, hyp: ConditionFeatures):
    """Reference and rounded hypothesis notes on frames voiced in ``hyp`` inside syllables."""
    ref_notes = score_note_track(ref_score)
    if ref_notes.size != len(hyp):
        raise ShapeMismatchError(f"score has {ref_notes.size} frames, hypothesis {len(hyp)}")
    sel = (hyp.vuv > 0) & (ref_notes >= 0)
    hyp_notes = np.rint(hz_to_midi(hyp.f0_hz[sel])).astype(np.int64)
    return ref_notes[sel], hyp_notes


def note_metrics(ref_score: Score, hyp: ConditionFeatures) -> tuple[float, float, float, float]:
    """Frame-level note accuracy with macro precision, recall and F1."""
    ref_notes, hyp_notes = compared_notes(ref_score, hyp)
    if ref_notes.size == 0:
        raise NoFramesError("no voiced hypothesis frame falls inside a syllable")
    acc = float(np.mean(ref_notes == hyp_notes))
    return (acc, *macro_prf(ref_notes, hyp_notes))


@dataclass
class EvalReport:
    note_accuracy: Optional[float] = None
    note_precision: Optional[float] = None
    note_recall: Optional[float] = None
    note_f1: Optional[float] = None
    f0_corr: Optional[float] = None
    f0_rmse_hz: Optional[float] = None
    vuv_error_pct: Optional[float] = None
    n_frames_compared: int = 0
    # metric name -> NO_FRAMES / DEGENERATE when a value could not be computed
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("note_accuracy", "note_precision", "note_recall", "note_f1"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValidationError(f"{f.name} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**{f.name: data[f.name] for f in fields(cls) if f.name in data})


def evaluate(ref_score: Score, ref: ConditionFeatures, hyp: ConditionFeatures) -> EvalReport:
    """All metrics for one clip; metrics without data are flagged instead of raising."""
    _pair(ref, hyp)
    report = EvalReport()
    report.vuv_error_pct = vuv_error(ref, hyp) if len(ref) else None

    def attempt(names, fn):
        try:
            values = fn()
        except NoFramesError:
            report.flags.update({n: NO_FRAMES for n in names})
            return
        except DegenerateError:
            report.flags.update({n: DEGENERATE for n in names})
            return
        for n, v in zip(names, values if isinstance(values, tuple) else (values,)):
            setattr(report, n, v)

    attempt(("note_accuracy", "note_precision", "note_recall", "note_f1"),
            lambda: note_metrics(ref_score, hyp))
    attempt(("f0_rmse_hz",), lambda: f0_rmse(ref, hyp))
    attempt(("f0_corr",), lambda: f0_corr(ref, hyp))
    report.n_frames_compared = int(np.count_nonzero((ref.vuv > 0) & (hyp.vuv > 0)))
    return report


def concat_features(tracks: list[ConditionFeatures]) -> ConditionFeatures:
    return ConditionFeatures(np.concatenate([t.f0_hz for t in tracks]),
                             np.concatenate([t.vuv for t in tracks]))


def concat_scores(scores: list[Score]) -> Score:
    events = tuple(ev for s in scores for ev in s.events)
    first = scores[0]
    return Score(events, first.sample_rate_hz, first.hop_length_samples)


def evaluate_pooled(items: list[tuple[Score, ConditionFeatures, ConditionFeatures]]) -> EvalReport:
    """Metrics over the frames of all clips pooled together."""
    if not items:
        raise NoFramesError("no clips")
    return evaluate(concat_scores([s for s, _, _ in items]),
                    concat_features([r for _, r, _ in items]),
                    concat_features([h for _, _, h in items]))


def write_report(path, overall: EvalReport, per_clip: dict[str, EvalReport] | None = None) -> None:
    doc = {"overall": overall.to_dict(),
           "clips": {k: v.to_dict() for k, v in (per_clip or {}).items()}}
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_report(path) -> tuple[EvalReport, dict[str, EvalReport]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return (EvalReport.from_dict(doc["overall"]),
            {k: EvalReport.from_dict(v) for k, v in doc.get("clips", {}).items()})


SUMMARY_COLUMNS = ["name"] + [f.name for f in fields(EvalReport) if f.name != "flags"]


def append_summary(path, name: str, report: EvalReport) -> None:
    """Append one row per evaluated corpus; empty cells are flagged metrics."""
    path = Path(path)
    fresh = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(SUMMARY_COLUMNS)
        row = report.to_dict()
        w.writerow([name] + ["" if row[c] is None else row[c] for c in SUMMARY_COLUMNS[1:]])


# --------------------------------------------------------------------------
# F0 contour export


def export_f0_contours(ref: ConditionFeatures, hyp_a: ConditionFeatures, path,
                       hyp_b: ConditionFeatures | None = None) -> None:
    """CSV ``frame,ref_f0,ref_vuv,hyp_f0,hyp_vuv[,hyp2_f0,hyp2_vuv]``."""
    tracks = [ref, hyp_a] + ([hyp_b] if hyp_b is not None else [])
    for t in tracks[1:]:
        _pair(ref, t)
    header = ["frame", "ref_f0", "ref_vuv", "hyp_f0", "hyp_vuv"]
    if hyp_b is not None:
        header += ["hyp2_f0", "hyp2_vuv"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ref)):
            row = [i]
            for t in tracks:
                row += [repr(float(t.f0_hz[i])) if t.vuv[i] else "0", int(t.vuv[i])]
            w.writerow(row)


def read_f0_contours(path) -> list[ConditionFeatures]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:5] != ["frame", "ref_f0", "ref_vuv", "hyp_f0", "hyp_vuv"]:
            raise ValidationError(f"{path}: not an F0 contour file")
        rows = [r for r in reader if r]
    n_tracks = (len(header) - 1) // 2
    data = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), 2 * n_tracks)
    return [ConditionFeatures(data[:, 2 * k].copy(), data[:, 2 * k + 1].astype(np.int64))
            for k in range(n_tracks)]
