"""Mel features, a synthetic singer, and a mel-domain F0 / voicing estimator.

The synthetic singer stands in for recorded data: it renders a score into a
waveform whose per-frame F0 and voicing are known exactly, so the rest of
the pipeline can be checked in closed loop.
"""
from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .errors import ParseError, ValidationError
from .score import Score, decompose_hangul

A4_MIDI = 69
A4_HZ = 440.0


def midi_to_hz(midi):
    return A4_HZ * 2.0 ** ((np.asarray(midi, dtype=np.float64) - A4_MIDI) / 12.0)


def hz_to_midi(hz):
    return A4_MIDI + 12.0 * np.log2(np.asarray(hz, dtype=np.float64) / A4_HZ)


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 24000
    fft_size: int = 2048
    window: int = 1200
    hop: int = 240
    mel_bins: int = 80
    fmin: float = 0.0
    fmax: float = 12000.0
    floor: float = 1e-10
    db_min: float = -100.0
    db_max: float = 0.0

    def __post_init__(self):
        if self.window > self.fft_size:
            raise ValidationError("window <= fft_size violated")
        if self.hop > self.window:
            raise ValidationError("hop <= window violated")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValidationError("need 0 <= fmin < fmax <= Nyquist")

    def n_samples_for(self, n_frames: int) -> int:
        """Waveform length whose analysis yields exactly ``n_frames`` frames."""
        return n_frames * self.hop + self.window - self.hop

    def n_frames_for(self, n_samples: int) -> int:
        return (n_samples - self.window) // self.hop + 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = 24000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("audio samples must be finite")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValidationError("audio samples must satisfy |x| <= 1")


@dataclass
class ConditionFeatures:
    f0_hz: np.ndarray
    vuv: np.ndarray

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.vuv = np.asarray(self.vuv, dtype=np.int64)
        if self.f0_hz.shape != self.vuv.shape or self.f0_hz.ndim != 1:
            raise ValidationError("f0 and vuv must be 1-D and equally long")
        if np.any(self.f0_hz < 0):
            raise ValidationError("f0 must be non-negative")
        if not np.array_equal(self.f0_hz > 0, self.vuv == 1):
            raise ValidationError("f0 > 0 iff vuv = 1 violated")

    def __len__(self):
        return int(self.f0_hz.shape[0])


# --------------------------------------------------------------------------
# mel extraction


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = hz / f_sp
    return np.where(hz >= min_log_hz,
                    min_log_mel + np.log(np.maximum(hz, 1e-12) / min_log_hz) / logstep, mel)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mel >= min_log_mel, min_log_hz * np.exp(logstep * (mel - min_log_mel)), f_sp * mel)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """The ``mel_bins + 2`` band edge frequencies in Hz; centres are ``[1:-1]``."""
    m = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2)
    return mel_to_hz(m)


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Area-normalized triangular filters, shape ``(mel_bins, fft_size // 2 + 1)``."""
    fft_freqs = np.linspace(0, cfg.sample_rate / 2, cfg.fft_size // 2 + 1)
    edges = mel_band_edges(cfg)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=16)
def analysis_window(cfg: MelConfig) -> np.ndarray:
    w = sps.get_window("hann", cfg.window, fftbins=True)
    w.setflags(write=False)
    return w


def power_spectrogram(samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Power STFT, shape ``(fft_size // 2 + 1, n_frames)``, scaled by the window sum."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < cfg.window:
        raise ValidationError(
            f"AUDIO_TOO_SHORT: {samples.shape[0]} samples < one window of {cfg.window}")
    win = analysis_window(cfg)
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window)[::cfg.hop]
    spec = np.fft.rfft(frames * win, n=cfg.fft_size, axis=1) / win.sum()
    return (spec.real ** 2 + spec.imag ** 2).T


def power_to_unit(power: np.ndarray, cfg: MelConfig) -> np.ndarray:
    db = 10.0 * np.log10(np.maximum(power, cfg.floor))
    return np.clip((db - cfg.db_min) / (cfg.db_max - cfg.db_min), 0.0, 1.0)


def unit_to_power(mel: np.ndarray, cfg: MelConfig) -> np.ndarray:
    db = np.asarray(mel, dtype=np.float64) * (cfg.db_max - cfg.db_min) + cfg.db_min
    return 10.0 ** (db / 10.0)


def mel_extract(audio, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Normalized log-mel spectrogram in ``[0, 1]``, shape ``(mel_bins, n_frames)``."""
    samples = audio.samples if isinstance(audio, AudioClip) else audio
    power = power_spectrogram(samples, cfg)
    return power_to_unit(mel_filterbank(cfg) @ power, cfg)


# --------------------------------------------------------------------------
# synthetic singer

# (F1, F2, F3) in Hz for the 21 nuclei, diphthongs use their target vowel.
_VOWEL_FORMANTS = {
    "ㅏ": (800, 1250, 2600), "ㅐ": (600, 1800, 2600), "ㅑ": (780, 1300, 2600),
    "ㅒ": (580, 1850, 2650), "ㅓ": (600, 1000, 2500), "ㅔ": (480, 1900, 2600),
    "ㅕ": (580, 1050, 2550), "ㅖ": (470, 1950, 2650), "ㅗ": (420, 800, 2500),
    "ㅘ": (780, 1200, 2550), "ㅙ": (590, 1750, 2550), "ㅚ": (460, 1700, 2450),
    "ㅛ": (410, 780, 2500), "ㅜ": (330, 800, 2400), "ㅝ": (590, 980, 2450),
    "ㅞ": (470, 1850, 2550), "ㅟ": (300, 2000, 2700), "ㅠ": (320, 820, 2400),
    "ㅡ": (360, 1400, 2500), "ㅢ": (290, 2200, 2950), "ㅣ": (280, 2250, 3000),
}
_SONORANT_FORMANTS = {
    "ㄴ": (250, 1700, 2600), "ㄹ": (350, 1300, 2700),
    "ㅁ": (250, 1100, 2400), "ㅇ": (250, 1900, 2600),
}
_NOISE_BANDS = {
    "k": (2000.0, 4500.0), "t": (3000.0, 7500.0), "p": (2000.0, 5000.0),
    "s": (4000.0, 9000.0), "c": (3000.0, 7000.0), "h": (2000.0, 6000.0),
}
# None marks the silent onset ㅇ, which sings as the vowel itself
_ONSET_CLASS = {
    "ㄱ": "k", "ㄲ": "k", "ㄴ": "ㄴ", "ㄷ": "t", "ㄸ": "t", "ㄹ": "ㄹ", "ㅁ": "ㅁ",
    "ㅂ": "p", "ㅃ": "p", "ㅅ": "s", "ㅆ": "s", "ㅇ": None, "ㅈ": "c", "ㅉ": "c",
    "ㅊ": "c", "ㅋ": "k", "ㅌ": "t", "ㅍ": "p", "ㅎ": "h",
}
# coda letters collapse onto the seven Korean final sounds
_CODA_CLASS = {
    "ㄱ": "k", "ㄲ": "k", "ㄳ": "k", "ㄺ": "k", "ㅋ": "k",
    "ㄴ": "ㄴ", "ㄵ": "ㄴ", "ㄶ": "ㄴ",
    "ㄷ": "t", "ㅅ": "t", "ㅆ": "t", "ㅈ": "t", "ㅊ": "t", "ㅌ": "t", "ㅎ": "t",
    "ㄹ": "ㄹ", "ㄼ": "ㄹ", "ㄽ": "ㄹ", "ㄾ": "ㄹ", "ㅀ": "ㄹ",
    "ㅁ": "ㅁ", "ㄻ": "ㅁ",
    "ㅂ": "p", "ㅍ": "p", "ㅄ": "p", "ㄿ": "p",
    "ㅇ": "ㅇ",
}

HARMONIC_RMS = 0.1
NOISE_RMS = 0.1
_CROSSFADE = 120
_MAX_PARTIAL_HZ = 8000.0


def _frame_plan(score: Score):
    """Per-frame (source, f0, formants-or-band) for a score.

    ``source`` is 0 for silence, 1 for harmonic, 2 for noise.
    """
    from .align import allocate_syllable_frames

    L = score.total_frames
    source = np.zeros(L, dtype=np.int64)
    f0 = np.zeros(L)
    shape = [None] * L
    for start, end, ev in score.spans():
        if ev.is_rest:
            continue
        jamo = decompose_hangul(ev.syllable)
        letters = jamo.letters
        n_on, n_nu, n_co = allocate_syllable_frames(True, jamo.coda is not None, end - start)
        vowel = _VOWEL_FORMANTS[letters[1]]
        onset_cls = _ONSET_CLASS[letters[0]]
        coda_cls = _CODA_CLASS[letters[2]] if jamo.coda is not None else None
        hz = float(midi_to_hz(ev.midi_pitch))
        segments = [(onset_cls, n_on), (None, n_nu), (coda_cls, n_co)]
        t = start
        for cls, n in segments:
            for j in range(t, t + n):
                if cls is None:
                    source[j], f0[j], shape[j] = 1, hz, vowel
                elif cls in _SONORANT_FORMANTS:
                    source[j], f0[j], shape[j] = 1, hz, _SONORANT_FORMANTS[cls]
                else:
                    source[j], shape[j] = 2, _NOISE_BANDS[cls]
            t += n
    return source, f0, shape


def _envelope(freqs: np.ndarray, formants) -> np.ndarray:
    gains = (1.0, 0.5, 0.25)
    bws = (80.0, 100.0, 150.0)
    env = np.full_like(freqs, 0.02)
    for fc, g, bw in zip(formants, gains, bws):
        env += g / (1.0 + ((freqs - fc) / bw) ** 2)
    return env


def synth_sing(score: Score, seed: int = 0, cfg: MelConfig = MelConfig()):
    """Render ``score`` to audio plus its exact per-frame F0/voicing.

    Frame ``t`` of the score occupies samples ``[o + t*hop, o + (t+1)*hop)``
    with ``o = (window - hop) // 2``, so the ``t``-th analysis window of
    :func:`mel_extract` is centred on it.
    """
    rng = np.random.default_rng(seed)
    L = score.total_frames
    sr = cfg.sample_rate
    n = cfg.n_samples_for(L)
    offset = (cfg.window - cfg.hop) // 2
    frame_of = np.clip((np.arange(n) - offset) // cfg.hop, 0, L - 1)

    source, f0, shape = _frame_plan(score)
    out = np.zeros(n)

    voiced = source == 1
    if voiced.any():
        f0_s = f0[frame_of]
        phase = 2 * np.pi * np.cumsum(f0_s) / sr
        gain = _smooth((source == 1).astype(float)[frame_of])
        n_partials = int(_MAX_PARTIAL_HZ // f0[voiced].min())
        init = rng.uniform(0, 2 * np.pi, n_partials)
        ks = np.arange(1, n_partials + 1)
        amps = np.zeros((L, n_partials))
        for j in np.flatnonzero(voiced):
            freqs = ks * f0[j]
            env = _envelope(freqs, shape[j]) * (freqs < _MAX_PARTIAL_HZ)
            amps[j] = env * HARMONIC_RMS * np.sqrt(2.0 / np.sum(env ** 2))
        harm = np.zeros(n)
        for k in range(n_partials):
            harm += amps[frame_of, k] * np.sin(ks[k] * phase + init[k])
        out += gain * harm

    for band in sorted({s for s, src in zip(shape, source) if src == 2} if (source == 2).any() else []):
        mask = np.array([src == 2 and s == band for s, src in zip(shape, source)], dtype=float)
        sos = sps.butter(6, band, btype="bandpass", fs=sr, output="sos")
        noise = sps.sosfiltfilt(sos, rng.standard_normal(n))
        noise *= NOISE_RMS / np.sqrt(np.mean(noise ** 2))
        out += _smooth(mask[frame_of]) * noise

    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 0.99:
        out *= 0.99 / peak
    cond = ConditionFeatures(np.where(voiced, f0, 0.0), voiced.astype(np.int64))
    return AudioClip(out, sr), cond


def _smooth(gain: np.ndarray) -> np.ndarray:
    kernel = np.ones(_CROSSFADE) / _CROSSFADE
    return np.convolve(gain, kernel, mode="same")


# --------------------------------------------------------------------------
# F0 / voicing estimation from a mel spectrogram


@dataclass(frozen=True)
class F0Config:
    midi_lo: float = 36.0
    midi_hi: float = 84.0
    step_cents: float = 10.0
    n_harmonics: int = 8
    energy_threshold: float = 0.1
    harmonicity_threshold: float = 0.4

    def candidates_hz(self) -> np.ndarray:
        n = int(round((self.midi_hi - self.midi_lo) * 100 / self.step_cents)) + 1
        return midi_to_hz(self.midi_lo + np.arange(n) * self.step_cents / 100)


@lru_cache(maxsize=4)
def _window_kernel(cfg: MelConfig):
    """Normalized power response of the analysis window around 0 Hz."""
    w = analysis_window(cfg)
    half = 4.0 * cfg.sample_rate / cfg.window
    offsets = np.linspace(-half, half, 801)
    phases = np.exp(-2j * np.pi * np.outer(offsets, np.arange(cfg.window)) / cfg.sample_rate)
    resp = np.abs(phases @ w) ** 2
    return offsets, resp / resp.max()


@lru_cache(maxsize=8)
def harmonic_templates(cfg: MelConfig, f0cfg: F0Config):
    """Mel-domain combs at each candidate F0: ``(candidates, peaks, valleys)``.

    ``peaks[i]`` is the filterbank response to unit partials at ``k * f`` for
    ``k = 1..n_harmonics``; ``valleys[i]`` puts them halfway between.
    """
    cands = f0cfg.candidates_hz()
    fft_freqs = np.linspace(0, cfg.sample_rate / 2, cfg.fft_size // 2 + 1)
    offsets, resp = _window_kernel(cfg)
    fb = mel_filterbank(cfg)

    def comb(multiples):
        power = np.zeros((cands.size, fft_freqs.size))
        for k in multiples:
            power += np.interp(fft_freqs[None, :] - k * cands[:, None], offsets, resp,
                               left=0.0, right=0.0)
        return power @ fb.T

    ks = np.arange(1, f0cfg.n_harmonics + 1)
    peaks, valleys = comb(ks), comb(ks - 0.5)
    for arr in (peaks, valleys):
        arr.setflags(write=False)
    return cands, peaks, valleys


def estimate_f0(mel: np.ndarray, cfg: MelConfig = MelConfig(),
                f0cfg: F0Config = F0Config()) -> ConditionFeatures:
    """Per-frame F0 and voicing from a normalized mel spectrogram.

    Each candidate F0 is scored by the mean normalized level at its harmonic
    positions minus the mean level halfway between them; the best candidate
    wins. A frame is voiced when its peak level exceeds
    ``energy_threshold`` and the best comb captures more than
    ``harmonicity_threshold`` of the frame's linear power.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] != cfg.mel_bins:
        raise ValidationError(f"mel must have shape ({cfg.mel_bins}, L), got {mel.shape}")
    cands, peaks, valleys = harmonic_templates(cfg, f0cfg)
    score = (peaks / peaks.sum(1, keepdims=True)) @ mel - (valleys / valleys.sum(1, keepdims=True)) @ mel
    best = score.argmax(axis=0)
    f0 = cands[best]

    power = unit_to_power(mel, cfg)
    total = power.sum(axis=0)
    comb = peaks[best] / peaks[best].max(axis=1, keepdims=True)
    harmonicity = np.einsum("ln,nl->l", comb, power) / np.maximum(total, np.finfo(float).tiny)
    voiced = (mel.max(axis=0) > f0cfg.energy_threshold) & (harmonicity > f0cfg.harmonicity_threshold)
    return ConditionFeatures(np.where(voiced, f0, 0.0), voiced.astype(np.int64))


# --------------------------------------------------------------------------
# file formats


def write_wav(clip: AudioClip, path) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ParseError(f"{path}: expected mono 16-bit PCM")
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
        return AudioClip(data.astype(np.float64) / 32767, fh.getframerate())


def write_f0_csv(cond: ConditionFeatures, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "f0_hz", "vuv"])
        for i, (f, v) in enumerate(zip(cond.f0_hz, cond.vuv)):
            w.writerow([i, repr(float(f)), int(v)])


def read_f0_csv(path) -> ConditionFeatures:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame", "f0_hz", "vuv"]:
        raise ParseError(f"{path}: expected header frame,f0_hz,vuv", line=1)
    f0, vuv = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            if int(row[0]) != lineno - 2:
                raise ValueError(f"frame index {row[0]} out of order")
            f0.append(float(row[1]))
            vuv.append(int(row[2]))
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), line=lineno) from None
    return ConditionFeatures(np.array(f0), np.array(vuv))
