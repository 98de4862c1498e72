"""Joint adversarial training of the generator, postnet and discriminators."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .corpus import CorpusItem, collate
from .discriminator import (DiscriminatorConfig, VoicingAwareDiscriminators, condition_tensor,
                            loss_adversarial, loss_discriminator)
from .errors import ConfigError, CorruptFileError, NonFiniteError, VersionMismatchError
from .model import Generator, GeneratorConfig, l1_loss, loss_mel_generator, loss_postnet

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "L_G", "L_mg", "L_md", "L_init_weighted", "L_mp", "L_adv", "L_dis", "lr"]
SCALED, CAPPED = "scaled", "capped"


def lambda_p(step: int, warmup: float = 1000) -> float:
    return min(step / warmup, 1.0)


def lambda_adv(step: int, warmup: float = 1000, reading: str = SCALED) -> float:
    """Adversarial weight warm-up.

    ``scaled`` reads the schedule as ``min(0.01 * step / warmup, 1)``;
    ``capped`` as ``0.01 * min(step / warmup, 1)``.
    """
    if reading == SCALED:
        return min(0.01 * step / warmup, 1.0)
    if reading == CAPPED:
        return 0.01 * min(step / warmup, 1.0)
    raise ConfigError(f"unknown lambda_adv reading {reading!r}")


def learning_rate(step: int, initial: float = 2e-4, halving_interval: int = 50000) -> float:
    return initial * 0.5 ** (step // halving_interval)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 2
    lr_initial: float = 2e-4
    lr_halving_interval: int = 50000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-6
    lambda_init_decay: float = 0.999
    seed: int = 0
    # desk runs reach full postnet weight early; the adversarial ramp keeps its
    # full-scale length, a shorter one lets L_adv swamp the mel losses
    warmup_p_steps: float = 100
    warmup_adv_steps: float = 1000
    lambda_adv_reading: str = SCALED
    lambda_adv_fixed: Optional[float] = None
    checkpoint_interval: int = 500
    validation_interval: int = 500
    history_size: int = 1000
    dtype: str = "float32"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        for name in ("total_steps", "batch_size", "lr_halving_interval", "checkpoint_interval",
                     "validation_interval", "history_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_initial <= 0 or self.warmup_p_steps <= 0 or self.warmup_adv_steps <= 0:
            raise ConfigError("learning rate and warm-up lengths must be positive")
        for name in ("adam_beta1", "adam_beta2", "lambda_init_decay"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigError("adam_epsilon must be positive")
        if self.lambda_adv_reading not in (SCALED, CAPPED):
            raise ConfigError(f"lambda_adv_reading must be {SCALED!r} or {CAPPED!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.generator.mel_bins != self.discriminator.mel_bins:
            raise ConfigError("generator and discriminator disagree on mel_bins")

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls(total_steps=100000, batch_size=8, warmup_p_steps=1000, warmup_adv_steps=1000,
                   checkpoint_interval=10000, validation_interval=10000,
                   generator=GeneratorConfig.paper(), discriminator=DiscriminatorConfig.paper())

    @classmethod
    def desk(cls) -> "TrainConfig":
        return cls()

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def lambda_p(self, step: int) -> float:
        return lambda_p(step, self.warmup_p_steps)

    def lambda_adv(self, step: int) -> float:
        if self.lambda_adv_fixed is not None:
            return float(self.lambda_adv_fixed)
        return lambda_adv(step, self.warmup_adv_steps, self.lambda_adv_reading)

    def learning_rate(self, step: int) -> float:
        return learning_rate(step, self.lr_initial, self.lr_halving_interval)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        preset = data.pop("preset", "desk")
        if preset not in ("desk", "paper"):
            raise ConfigError(f"unknown preset {preset!r}")
        base = cls.paper() if preset == "paper" else cls.desk()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            gen_over = dict(data.pop("generator", {}) or {})
            disc_over = dict(data.pop("discriminator", {}) or {})
            gen = {**base.generator.to_dict(), **gen_over}
            # the discriminators follow the generator's mel size unless told otherwise
            disc = {**base.discriminator.to_dict(), "mel_bins": gen["mel_bins"], **disc_over}
            return replace(base, generator=GeneratorConfig.from_dict(gen),
                           discriminator=DiscriminatorConfig.from_dict(disc), **data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def parse_config_text(text: str) -> dict:
    """JSON, or ``key = value`` lines with dotted keys for nested sections."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = out
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    return out


def load_config(path) -> TrainConfig:
    return TrainConfig.from_dict(parse_config_text(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# state and one optimization step


@dataclass
class TrainState:
    config: TrainConfig
    generator: Generator
    discriminators: VoicingAwareDiscriminators
    g_opt: torch.optim.Adam
    d_opt: torch.optim.Adam
    rng: np.random.Generator
    step: int = 0
    pending: list = field(default_factory=list)
    history: deque = field(default_factory=deque)


def new_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    gen = Generator(config.generator).to(config.torch_dtype)
    disc = VoicingAwareDiscriminators(config.discriminator).to(config.torch_dtype)
    betas = (config.adam_beta1, config.adam_beta2)
    g_opt = torch.optim.Adam(gen.parameters(), lr=config.lr_initial, betas=betas,
                             eps=config.adam_epsilon)
    d_opt = torch.optim.Adam(disc.parameters(), lr=config.lr_initial, betas=betas,
                             eps=config.adam_epsilon)
    return TrainState(config, gen, disc, g_opt, d_opt, np.random.default_rng(config.seed),
                      history=deque(maxlen=config.history_size))


def generator_objective(state: TrainState, batch: dict, step: int, strict: bool = False):
    """``L_G`` for ``batch`` at ``step`` with its parts; keeps the graph for backprop."""
    cfg = state.config
    mask = batch["mask"]
    mel = batch["mel"]
    c = condition_tensor(batch["f0"], batch["vuv"]).to(mel.dtype)
    out = state.generator(batch["phonemes"], batch["pitches"], mask)
    l_mg, parts = loss_mel_generator(mel, out, step, cfg.lambda_init_decay, mask, strict)
    l_mp = loss_postnet(mel, out.M_P, mask, strict)
    l_adv = loss_adversarial(state.discriminators, out.M_P, c, batch["vuv"], mask)
    lp, la = cfg.lambda_p(step), cfg.lambda_adv(step)
    l_g = l_mg + lp * l_mp + la * l_adv
    terms = {"L_G": l_g, "L_mg": l_mg, "L_md": parts["L_md"],
             "L_init_weighted": parts["L_init_weighted"], "L_mp": l_mp, "L_adv": l_adv}
    return l_g, terms, out, c


def _check_finite(terms: dict) -> None:
    # the total last, so the error names the component that went bad
    for name in sorted(terms, key=lambda k: k == "L_G"):
        value = float(terms[name].detach())
        if not math.isfinite(value):
            raise NonFiniteError(f"{name} = {value}", term=name)


def train_step(state: TrainState, batch: dict) -> dict:
    """One generator update then one discriminator update; returns the log row."""
    cfg = state.config
    step = state.step
    lr = cfg.learning_rate(step)
    for opt in (state.g_opt, state.d_opt):
        for group in opt.param_groups:
            group["lr"] = lr
    state.generator.train()
    state.discriminators.train()

    l_g, terms, out, c = generator_objective(state, batch, step)
    _check_finite(terms)
    state.g_opt.zero_grad(set_to_none=True)
    l_g.backward()
    state.g_opt.step()

    la = cfg.lambda_adv(step)
    l_dis = loss_discriminator(state.discriminators, batch["mel"], out.M_P, c, batch["vuv"],
                               batch["mask"])
    _check_finite({"L_dis": l_dis})
    if la > 0:
        state.d_opt.zero_grad(set_to_none=True)
        (la * l_dis).backward()
        state.d_opt.step()

    row = {"step": step, **{k: float(v.detach()) for k, v in terms.items()},
           "L_dis": float(l_dis.detach()),
           "lr": lr}
    state.step += 1
    state.history.append(row)
    return row


def _next_batch(state: TrainState, corpus: list[CorpusItem]) -> list[CorpusItem]:
    if not state.pending:
        order = sorted(range(len(corpus)), key=lambda i: (corpus[i].n_frames, corpus[i].name))
        bs = state.config.batch_size
        batches = [order[i:i + bs] for i in range(0, len(order), bs)]
        state.pending = [batches[i] for i in state.rng.permutation(len(batches))]
    return [corpus[i] for i in state.pending.pop(0)]


@torch.no_grad()
def validation_l1(generator: Generator, corpus: list[CorpusItem], dtype=torch.float32) -> float:
    """Frame-weighted mean ``|M - M_P|`` over the corpus in eval mode."""
    was = generator.training
    generator.eval()
    total, count = 0.0, 0
    try:
        for item in corpus:
            batch = collate([item], dtype)
            out = generator(batch["phonemes"], batch["pitches"])
            total += float(l1_loss(batch["mel"], out.M_P)) * item.mel.size
            count += item.mel.size
    finally:
        generator.train(was)
    return total / count


def fit(config: TrainConfig, corpus: list[CorpusItem], out_dir=None,
        state: Optional[TrainState] = None, progress=None):
    """Train until ``config.total_steps``; returns ``(state, rows)``.

    With ``out_dir`` the loss log (``metrics.csv``), validation log and
    periodic checkpoints are written there; a checkpoint is also written if
    training aborts.
    """
    if not corpus:
        raise ConfigError("empty corpus")
    bins = {it.mel.shape[0] for it in corpus}
    if bins != {config.generator.mel_bins}:
        raise ConfigError(f"corpus mel bins {sorted(bins)} != model mel_bins "
                          f"{config.generator.mel_bins}")
    state = state or new_state(config)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fresh = state.step == 0 or not metrics_path.exists()
        fh = open(metrics_path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        if fresh:
            writer.writeheader()
    rows = []
    try:
        while state.step < config.total_steps:
            batch = collate(_next_batch(state, corpus), config.torch_dtype)
            row = train_step(state, batch)
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if progress is not None:
                progress(row)
            done = state.step
            if out is not None and (done % config.checkpoint_interval == 0
                                    or done == config.total_steps):
                save_checkpoint(state, out / "checkpoint.ckpt")
            if out is not None and (done % config.validation_interval == 0
                                    or done == config.total_steps):
                _append_validation(out / "validation.csv", done,
                                   validation_l1(state.generator, corpus, config.torch_dtype))
    except BaseException:
        if out is not None:
            save_checkpoint(state, out / "checkpoint.ckpt")
        raise
    finally:
        if writer is not None:
            fh.close()
    return state, rows


def _append_validation(path: Path, step: int, l1: float) -> None:
    fresh = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(["step", "l1_mel_postnet"])
        w.writerow([step, repr(l1)])
    log.info("step %d validation L1(M, M_P) = %.5f", step, l1)


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# checkpoints: magic, u32 version, sha256 of payload, torch-serialized payload

CKPT_MAGIC = b"NSCKPT\x00\x00"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sI32s")


def save_checkpoint(state: TrainState, path) -> None:
    payload = {
        "train_config": state.config.to_dict(),
        "step": state.step,
        "generator": state.generator.state_dict(),
        "discriminators": state.discriminators.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": state.rng.bit_generator.state,
        "pending": [list(b) for b in state.pending],
        "history": list(state.history),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    data = buf.getvalue()
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, hashlib.sha256(data).digest())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + data)
    tmp.replace(path)


def _read_payload(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise CorruptFileError(f"{path}: truncated checkpoint header")
    magic, version, digest = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint (bad magic)")
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    data = raw[_CKPT_HEADER.size:]
    if hashlib.sha256(data).digest() != digest:
        raise CorruptFileError(f"{path}: checksum mismatch (truncated or corrupted)")
    return torch.load(io.BytesIO(data), weights_only=False)


def load_checkpoint(path, expected: Optional[GeneratorConfig] = None) -> TrainState:
    """Restore a training state; ``expected`` guards against a mismatched model."""
    payload = _read_payload(path)
    config = TrainConfig.from_dict({k: v for k, v in payload["train_config"].items()})
    if expected is not None and expected != config.generator:
        diff = {k: (v, getattr(config.generator, k)) for k, v in expected.to_dict().items()
                if getattr(config.generator, k) != v}
        raise VersionMismatchError(f"checkpoint model config differs: {diff}")
    state = new_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.discriminators.load_state_dict(payload["discriminators"])
    state.g_opt.load_state_dict(payload["g_opt"])
    state.d_opt.load_state_dict(payload["d_opt"])
    torch.set_rng_state(payload["torch_rng"])
    state.rng.bit_generator.state = payload["numpy_rng"]
    state.step = payload["step"]
    state.pending = [list(b) for b in payload["pending"]]
    state.history.extend(payload["history"])
    return state


def load_generator(path, expected_mel_bins: Optional[int] = None) -> Generator:
    payload = _read_payload(path)
    cfg = GeneratorConfig.from_dict(payload["train_config"]["generator"])
    if expected_mel_bins is not None and cfg.mel_bins != expected_mel_bins:
        raise VersionMismatchError(
            f"checkpoint has mel_bins={cfg.mel_bins}, expected {expected_mel_bins}")
    dtype = torch.float64 if payload["train_config"]["dtype"] == "float64" else torch.float32
    gen = Generator(cfg).to(dtype)
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen
