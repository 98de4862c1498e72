"""Expand a score into frame-level phoneme and pitch ID sequences."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDurationError, ParseError, ValidationError
from .score import SILENCE_ID, Score, decompose_hangul, phoneme_ids_of

MAX_EDGE_FRAMES = 3
REST_PITCH_ID = 0
N_PITCH_IDS = 129  # MIDI 0..127 shifted by one, plus rest


def pitch_id_of(midi: int) -> int:
    return midi + 1


def allocate_syllable_frames(has_onset: bool, has_coda: bool, n_frames: int) -> tuple[int, int, int]:
    """Split ``n_frames`` between onset, nucleus and coda.

    Onset and coda get at most three frames each and the nucleus takes what
    is left. When the syllable is too short for that, the larger of the
    onset/coda runs is shortened first (the coda on ties) until the nucleus
    keeps at least one frame.
    """
    present = 1 + int(has_onset) + int(has_coda)
    if n_frames < present:
        raise InvalidDurationError(
            f"{n_frames} frame(s) cannot hold {present} syllable component(s)")
    onset = MAX_EDGE_FRAMES if has_onset else 0
    coda = MAX_EDGE_FRAMES if has_coda else 0
    while onset + coda + 1 > n_frames:
        if coda >= onset:
            coda -= 1
        else:
            onset -= 1
    return onset, n_frames - onset - coda, coda


@dataclass(frozen=True)
class FrameAlignedInput:
    phoneme_ids: np.ndarray
    pitch_ids: np.ndarray

    def __post_init__(self):
        if self.phoneme_ids.shape != self.pitch_ids.shape or self.phoneme_ids.ndim != 1:
            raise ValidationError("phoneme and pitch sequences must be 1-D and equally long")

    @property
    def n_frames(self) -> int:
        return int(self.phoneme_ids.shape[0])

    def __eq__(self, other):
        if not isinstance(other, FrameAlignedInput):
            return NotImplemented
        return (np.array_equal(self.phoneme_ids, other.phoneme_ids)
                and np.array_equal(self.pitch_ids, other.pitch_ids))


def align_score(score: Score) -> FrameAlignedInput:
    phonemes = np.empty(score.total_frames, dtype=np.int64)
    pitches = np.empty(score.total_frames, dtype=np.int64)
    for i, (start, end, ev) in enumerate(score.spans()):
        if ev.is_rest:
            phonemes[start:end] = SILENCE_ID
            pitches[start:end] = REST_PITCH_ID
            continue
        ids = phoneme_ids_of(decompose_hangul(ev.syllable))
        has_coda = len(ids) == 3
        try:
            n_on, n_nu, n_co = allocate_syllable_frames(True, has_coda, end - start)
        except InvalidDurationError as exc:
            raise InvalidDurationError(str(exc), event_index=i) from None
        runs = [(ids[0], n_on), (ids[1], n_nu)]
        if has_coda:
            runs.append((ids[2], n_co))
        phonemes[start:end] = np.repeat([r[0] for r in runs], [r[1] for r in runs])
        pitches[start:end] = pitch_id_of(ev.midi_pitch)
    return FrameAlignedInput(phonemes, pitches)


def format_aligned(aligned: FrameAlignedInput) -> str:
    rows = (aligned.phoneme_ids, aligned.pitch_ids)
    return "\n".join(" ".join(str(int(v)) for v in row) for row in rows) + "\n"


def parse_aligned(text: str) -> FrameAlignedInput:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ParseError(f"expected 2 rows, found {len(lines)}")
    rows = []
    for lineno, line in enumerate(lines, start=1):
        try:
            rows.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return FrameAlignedInput(rows[0], rows[1])


def write_aligned(aligned: FrameAlignedInput, path) -> None:
    Path(path).write_text(format_aligned(aligned), encoding="utf-8")


def read_aligned(path) -> FrameAlignedInput:
    return parse_aligned(Path(path).read_text(encoding="utf-8"))
