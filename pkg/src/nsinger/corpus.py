"""Synthetic training corpus: scores rendered by the synthetic singer.

A corpus directory holds one bundle per clip, all sharing a stem::

    <stem>.score.json   the score
    <stem>.mel          normalized mel container (N x L)
    <stem>.f0.csv       ground-truth F0 / V/UV (frame,f0_hz,vuv)
    <stem>.align.txt    aligned phoneme and pitch IDs
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .align import FrameAlignedInput, align_score, write_aligned
from .audio import ConditionFeatures, MelConfig, mel_extract, read_f0_csv, synth_sing, write_f0_csv
from .containers import read_mel, write_mel
from .errors import ConfigError, ValidationError
from .score import N_CODAS, N_NUCLEI, N_ONSETS, JamoTriple, NoteEvent, Score, compose_hangul, \
    load_score, save_score


@dataclass
class CorpusItem:
    name: str
    score: Score
    aligned: FrameAlignedInput
    mel: np.ndarray
    cond: ConditionFeatures

    def __post_init__(self):
        L = self.aligned.n_frames
        if self.mel.shape[1] != L or len(self.cond) != L:
            raise ValidationError(
                f"{self.name}: lengths disagree (aligned {L}, mel {self.mel.shape[1]}, "
                f"f0 {len(self.cond)})")

    @property
    def n_frames(self) -> int:
        return self.aligned.n_frames


def random_score(rng: np.random.Generator, n_events: int = 8, midi_range=(55, 76),
                 frames_range=(15, 60), rest_frames=(10, 30), rest_prob: float = 0.15) -> Score:
    """A random single-voice score with random syllables.

    Defaults cover a female singing range (G3 to E5) with notes of 0.15 to
    0.6 s at a 10 ms hop.
    """
    events = []
    for _ in range(n_events):
        if rng.random() < rest_prob:
            events.append(NoteEvent.rest(int(rng.integers(rest_frames[0], rest_frames[1] + 1))))
            continue
        coda = None if rng.random() < 0.5 else int(rng.integers(0, N_CODAS))
        ch = chr(compose_hangul(JamoTriple(int(rng.integers(0, N_ONSETS)),
                                           int(rng.integers(0, N_NUCLEI)), coda)))
        events.append(NoteEvent.note(ch, int(rng.integers(midi_range[0], midi_range[1] + 1)),
                                     int(rng.integers(frames_range[0], frames_range[1] + 1))))
    if all(e.is_rest for e in events):
        events.append(NoteEvent.note("아", int(rng.integers(midi_range[0], midi_range[1] + 1)),
                                     frames_range[1]))
    return Score(tuple(events))


def build_item(name: str, score: Score, seed: int, mel_cfg: MelConfig = MelConfig()) -> CorpusItem:
    clip, cond = synth_sing(score, seed=seed, cfg=mel_cfg)
    mel = mel_extract(clip, mel_cfg).astype(np.float32)
    return CorpusItem(name, score, align_score(score), mel, cond)


def save_item(item: CorpusItem, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_score(item.score, out / f"{item.name}.score.json")
    write_mel(item.mel, out / f"{item.name}.mel")
    write_f0_csv(item.cond, out / f"{item.name}.f0.csv")
    write_aligned(item.aligned, out / f"{item.name}.align.txt")


def load_item(directory, name: str) -> CorpusItem:
    d = Path(directory)
    score = load_score(d / f"{name}.score.json")
    return CorpusItem(name, score, align_score(score), read_mel(d / f"{name}.mel"),
                      read_f0_csv(d / f"{name}.f0.csv"))


def corpus_names(directory) -> list[str]:
    return sorted(p.name[: -len(".score.json")] for p in Path(directory).glob("*.score.json"))


def load_corpus(directory) -> list[CorpusItem]:
    names = corpus_names(directory)
    if not names:
        raise ConfigError(f"no corpus bundles (*.score.json) in {directory}")
    return [load_item(directory, n) for n in names]


def synthetic_corpus(n_items: int, seed: int = 0, mel_cfg: MelConfig = MelConfig(),
                     **score_kwargs) -> list[CorpusItem]:
    rng = np.random.default_rng(seed)
    return [build_item(f"clip{i:04d}", random_score(rng, **score_kwargs), seed ^ i, mel_cfg)
            for i in range(n_items)]


def collate(items: list[CorpusItem], dtype=torch.float32) -> dict[str, torch.Tensor]:
    """Pad a list of items to the longest one; ``mask`` marks real frames."""
    if not items:
        raise ConfigError("cannot collate an empty batch")
    n_bins = items[0].mel.shape[0]
    L = max(it.n_frames for it in items)
    B = len(items)
    mel = torch.zeros(B, n_bins, L, dtype=dtype)
    ph = torch.zeros(B, L, dtype=torch.long)
    pi = torch.zeros(B, L, dtype=torch.long)
    f0 = torch.zeros(B, L, dtype=torch.float64)
    vuv = torch.zeros(B, L, dtype=torch.long)
    mask = torch.zeros(B, L, dtype=torch.bool)
    for b, it in enumerate(items):
        n = it.n_frames
        if it.mel.shape[0] != n_bins:
            raise ValidationError(f"{it.name}: {it.mel.shape[0]} mel bins, batch has {n_bins}")
        mel[b, :, :n] = torch.from_numpy(np.asarray(it.mel, dtype=np.float64)).to(dtype)
        ph[b, :n] = torch.from_numpy(it.aligned.phoneme_ids)
        pi[b, :n] = torch.from_numpy(it.aligned.pitch_ids)
        f0[b, :n] = torch.from_numpy(it.cond.f0_hz)
        vuv[b, :n] = torch.from_numpy(it.cond.vuv)
        mask[b, :n] = True
    return {"mel": mel, "phonemes": ph, "pitches": pi, "f0": f0, "vuv": vuv, "mask": mask}
