"""Musical scores with Korean lyrics, and Hangul syllable decomposition.

Phoneme IDs use a fixed 68-entry vocabulary::

    0        silence / rest
    1..19    onsets  (ㄱ ... ㅎ)
    20..40   nuclei  (ㅏ ... ㅣ)
    41..67   codas   (ㄱ ... ㅎ)

Durations are stored in mel frames, not seconds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

from .errors import InvalidIndexError, OutOfRangeError, ParseError, ValidationError

HANGUL_BASE = 0xAC00
HANGUL_LAST = 0xD7A3
N_ONSETS = 19
N_NUCLEI = 21
N_CODAS = 27  # non-empty codas; coda_code 0 means no coda

SILENCE_ID = 0
ONSET_OFFSET = 1
NUCLEUS_OFFSET = ONSET_OFFSET + N_ONSETS  # 20
CODA_OFFSET = NUCLEUS_OFFSET + N_NUCLEI  # 41
N_PHONEMES = CODA_OFFSET + N_CODAS  # 68

ONSETS = "ㄱㄲㄴㄷㄸㄹㅁㅂㅃㅅㅆㅇㅈㅉㅊㅋㅌㅍㅎ"
NUCLEI = "ㅏㅐㅑㅒㅓㅔㅕㅖㅗㅘㅙㅚㅛㅜㅝㅞㅟㅠㅡㅢㅣ"
CODAS = "ㄱㄲㄳㄴㄵㄶㄷㄹㄺㄻㄼㄽㄾㄿㅀㅁㅂㅄㅅㅆㅇㅈㅊㅋㅌㅍㅎ"

SYLLABLE = "syllable"
REST = "rest"


class JamoTriple(NamedTuple):
    """Onset/nucleus/coda indices of a precomposed syllable.

    ``coda`` is the coda index in ``[0, 26]`` or ``None`` when the syllable
    has no final consonant (Unicode coda code 0).
    """

    onset: int
    nucleus: int
    coda: Optional[int] = None

    @property
    def coda_code(self) -> int:
        return 0 if self.coda is None else self.coda + 1

    @property
    def letters(self) -> list[str]:
        out = [ONSETS[self.onset], NUCLEI[self.nucleus]]
        if self.coda is not None:
            out.append(CODAS[self.coda])
        return out


def is_hangul_syllable(ch: str) -> bool:
    return len(ch) == 1 and HANGUL_BASE <= ord(ch) <= HANGUL_LAST


def decompose_hangul(codepoint) -> JamoTriple:
    """Split a precomposed Hangul syllable (str or int codepoint) into jamo indices."""
    cp = ord(codepoint) if isinstance(codepoint, str) else int(codepoint)
    if not HANGUL_BASE <= cp <= HANGUL_LAST:
        raise OutOfRangeError(f"U+{cp:04X} is not a precomposed Hangul syllable")
    offset = cp - HANGUL_BASE
    onset, rest = divmod(offset, N_NUCLEI * (N_CODAS + 1))
    nucleus, coda_code = divmod(rest, N_CODAS + 1)
    return JamoTriple(onset, nucleus, None if coda_code == 0 else coda_code - 1)


def compose_hangul(triple: JamoTriple) -> int:
    """Inverse of :func:`decompose_hangul`; returns the codepoint."""
    onset, nucleus, coda = triple
    if not 0 <= onset < N_ONSETS:
        raise InvalidIndexError(f"onset index {onset} outside [0, {N_ONSETS - 1}]")
    if not 0 <= nucleus < N_NUCLEI:
        raise InvalidIndexError(f"nucleus index {nucleus} outside [0, {N_NUCLEI - 1}]")
    if coda is not None and not 0 <= coda < N_CODAS:
        raise InvalidIndexError(f"coda index {coda} outside [0, {N_CODAS - 1}]")
    coda_code = 0 if coda is None else coda + 1
    return HANGUL_BASE + (onset * N_NUCLEI + nucleus) * (N_CODAS + 1) + coda_code


def phoneme_ids_of(triple: JamoTriple) -> list[int]:
    """Phoneme IDs ``[onset, nucleus, coda?]``; never emits silence."""
    ids = [ONSET_OFFSET + triple.onset, NUCLEUS_OFFSET + triple.nucleus]
    if triple.coda is not None:
        ids.append(CODA_OFFSET + triple.coda)
    return ids


def g2p(text: str) -> list[int]:
    """Phoneme IDs for every syllable of ``text`` (whitespace ignored)."""
    ids = []
    for ch in text:
        if ch.isspace():
            continue
        ids.extend(phoneme_ids_of(decompose_hangul(ch)))
    return ids


@dataclass(frozen=True)
class NoteEvent:
    kind: str
    duration_frames: int
    syllable: Optional[str] = None
    midi_pitch: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (SYLLABLE, REST):
            raise ValidationError(f"kind must be 'syllable' or 'rest', got {self.kind!r}")
        if not isinstance(self.duration_frames, int) or isinstance(self.duration_frames, bool):
            raise ValidationError("duration_frames must be an integer")
        if self.duration_frames < 1:
            raise ValidationError(f"duration_frames >= 1 violated: {self.duration_frames}")
        if self.kind == REST:
            if self.syllable is not None or self.midi_pitch is not None:
                raise ValidationError("rest events carry no syllable and no pitch")
            return
        if self.syllable is None or not is_hangul_syllable(self.syllable):
            raise ValidationError(f"syllable must be one precomposed Hangul character, got {self.syllable!r}")
        if not isinstance(self.midi_pitch, int) or isinstance(self.midi_pitch, bool):
            raise ValidationError("midi_pitch must be an integer")
        if not 0 <= self.midi_pitch <= 127:
            raise ValidationError(f"midi_pitch in [0, 127] violated: {self.midi_pitch}")

    @classmethod
    def note(cls, syllable: str, midi: int, frames: int) -> "NoteEvent":
        return cls(SYLLABLE, frames, syllable, midi)

    @classmethod
    def rest(cls, frames: int) -> "NoteEvent":
        return cls(REST, frames)

    @property
    def is_rest(self) -> bool:
        return self.kind == REST


@dataclass(frozen=True)
class Score:
    events: tuple[NoteEvent, ...] = field(default_factory=tuple)
    sample_rate_hz: int = 24000
    hop_length_samples: int = 240

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz > 0 violated")
        if self.hop_length_samples <= 0:
            raise ValidationError("hop_length_samples > 0 violated")
        if self.total_frames < 1:
            raise ValidationError("total_frames >= 1 violated: score has no frames")

    @property
    def total_frames(self) -> int:
        return sum(e.duration_frames for e in self.events)

    def spans(self):
        """Yield ``(start_frame, end_frame, event)`` for every event."""
        start = 0
        for ev in self.events:
            yield start, start + ev.duration_frames, ev
            start += ev.duration_frames

    def to_dict(self) -> dict:
        events = []
        for ev in self.events:
            if ev.is_rest:
                events.append({"kind": REST, "frames": ev.duration_frames})
            else:
                events.append({"kind": SYLLABLE, "text": ev.syllable, "midi": ev.midi_pitch,
                               "frames": ev.duration_frames})
        return {"sample_rate_hz": self.sample_rate_hz,
                "hop_length_samples": self.hop_length_samples,
                "events": events}

    @classmethod
    def from_dict(cls, data: dict) -> "Score":
        if not isinstance(data, dict):
            raise ValidationError("score must be a JSON object")
        for key in ("sample_rate_hz", "hop_length_samples", "events"):
            if key not in data:
                raise ValidationError(f"missing required key {key!r}")
        if not isinstance(data["events"], list):
            raise ValidationError("'events' must be a list")
        events = []
        for i, raw in enumerate(data["events"]):
            try:
                events.append(_event_from_dict(raw))
            except ValidationError as exc:
                raise ValidationError(f"event {i}: {exc}") from None
        return cls(tuple(events), data["sample_rate_hz"], data["hop_length_samples"])


def _event_from_dict(raw) -> NoteEvent:
    if not isinstance(raw, dict):
        raise ValidationError("event must be an object")
    kind = raw.get("kind")
    if "frames" not in raw:
        raise ValidationError("missing 'frames'")
    if kind == SYLLABLE:
        if "text" not in raw or "midi" not in raw:
            raise ValidationError("syllable events require 'text' and 'midi'")
        return NoteEvent(SYLLABLE, raw["frames"], raw["text"], raw["midi"])
    if kind == REST:
        if "text" in raw or "midi" in raw:
            raise ValidationError("rest events must not carry 'text' or 'midi'")
        return NoteEvent(REST, raw["frames"])
    raise ValidationError(f"kind must be 'syllable' or 'rest', got {kind!r}")


def loads_score(text: str) -> Score:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return Score.from_dict(data)


def dumps_score(score: Score) -> str:
    return json.dumps(score.to_dict(), ensure_ascii=False, indent=2) + "\n"


def load_score(path) -> Score:
    return loads_score(Path(path).read_text(encoding="utf-8"))


def save_score(score: Score, path) -> None:
    Path(path).write_text(dumps_score(score), encoding="utf-8")
