import csv
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from nsinger.corpus import collate
from nsinger.discriminator import DiscriminatorConfig
from nsinger.errors import (ConfigError, CorruptFileError, NonFiniteError,
                            VersionMismatchError)
from nsinger.model import GeneratorConfig
from nsinger.trainer import (CAPPED, LOG_COLUMNS, SCALED, TrainConfig, fit, lambda_adv,
                             lambda_p, learning_rate, load_checkpoint, load_generator,
                             new_state, parse_config_text, read_metrics, save_checkpoint,
                             train_step)


def tiny_config(**kw) -> TrainConfig:
    base = dict(total_steps=20, dtype="float64", generator=GeneratorConfig.tiny(),
                discriminator=DiscriminatorConfig.tiny(), checkpoint_interval=10,
                validation_interval=10)
    base.update(kw)
    return TrainConfig(**base)


# -- schedules


def test_lambda_p_values():
    assert lambda_p(0) == 0.0
    assert lambda_p(500) == 0.5
    assert lambda_p(1000) == 1.0 and lambda_p(2000) == 1.0


def test_lambda_adv_readings():
    assert lambda_adv(1000, 1000, SCALED) == pytest.approx(0.01)
    assert lambda_adv(1000, 1000, CAPPED) == pytest.approx(0.01)
    assert lambda_adv(50000, 1000, SCALED) == pytest.approx(0.5)
    assert lambda_adv(100000, 1000, SCALED) == 1.0
    assert lambda_adv(10**6, 1000, SCALED) == 1.0
    assert lambda_adv(0, 1000, SCALED) == 0.0
    assert lambda_adv(50000, 1000, CAPPED) == pytest.approx(0.01)
    with pytest.raises(ConfigError):
        lambda_adv(1, 1000, "other")


def test_learning_rate_halving():
    assert learning_rate(0) == 2e-4
    assert learning_rate(49999) == 2e-4
    assert learning_rate(50000) == 1e-4
    assert learning_rate(149999) == 5e-5


def test_config_presets_and_overrides():
    paper = TrainConfig.paper()
    assert paper.batch_size == 8 and paper.generator.model_dim == 256
    assert paper.lambda_p(500) == 0.5 and paper.lambda_adv(1000) == pytest.approx(0.01)
    desk = TrainConfig.desk()
    assert desk.lambda_p(50) == 0.5
    assert desk.lambda_adv(2000) == pytest.approx(0.02)
    cfg = TrainConfig.from_dict({"preset": "paper", "total_steps": 5,
                                 "generator": {"mel_bins": 40}})
    assert cfg.total_steps == 5 and cfg.generator.mel_bins == 40
    assert cfg.discriminator.mel_bins == 40
    assert TrainConfig.from_dict(cfg.to_dict() | {"preset": "paper"}) == cfg
    assert cfg.to_dict()["generator"]["model_dim"] == 256
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"total_steps": 0})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"generator": {"mel_bins": 40}, "discriminator": {"mel_bins": 8}})


def test_lambda_adv_fixed():
    assert tiny_config(lambda_adv_fixed=1.0).lambda_adv(0) == 1.0


def test_parse_config_text():
    text = """
    # comment
    total_steps = 30
    lambda_adv_reading = capped   # bare string
    generator.mel_bins = 8
    discriminator.channels = 4
    """
    d = parse_config_text(text)
    assert d == {"total_steps": 30, "lambda_adv_reading": "capped",
                 "generator": {"mel_bins": 8}, "discriminator": {"channels": 4}}
    assert parse_config_text('{"total_steps": 3}') == {"total_steps": 3}
    with pytest.raises(ConfigError):
        parse_config_text("total_steps 3")
    with pytest.raises(ConfigError):
        parse_config_text('{"total_steps": }')


# -- steps


def test_logged_total_matches_parts(small_corpus):
    cfg = tiny_config(warmup_p_steps=4, warmup_adv_steps=0.02)
    state = new_state(cfg)
    for _ in range(6):
        row = train_step(state, collate(small_corpus, torch.float64))
        s = row["step"]
        expected = row["L_mg"] + cfg.lambda_p(s) * row["L_mp"] + cfg.lambda_adv(s) * row["L_adv"]
        assert abs(row["L_G"] - expected) < 1e-6
        assert row["L_mg"] == pytest.approx(row["L_md"] + row["L_init_weighted"], abs=1e-9)
        assert set(row) == set(LOG_COLUMNS)


def test_discriminator_frozen_when_weight_zero(small_corpus):
    state = new_state(tiny_config())
    before = {k: v.clone() for k, v in state.discriminators.state_dict().items()}
    gen_before = [p.clone() for p in state.generator.parameters()]
    train_step(state, collate(small_corpus, torch.float64))  # step 0: lambda_adv = 0
    after = state.discriminators.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)
    assert any(not torch.equal(a, b) for a, b in zip(gen_before, state.generator.parameters()))


def test_discriminator_updates_when_weighted(small_corpus):
    state = new_state(tiny_config(lambda_adv_fixed=1.0))
    before = {k: v.clone() for k, v in state.discriminators.state_dict().items()}
    train_step(state, collate(small_corpus, torch.float64))
    after = state.discriminators.state_dict()
    assert any(not torch.equal(before[k], after[k]) for k in before)


def test_mel_loss_decreases(small_corpus):
    cfg = tiny_config(total_steps=50, lr_initial=1e-2)
    _, rows = fit(cfg, small_corpus)
    first = np.mean([r["L_mg"] for r in rows[:5]])
    last = np.mean([r["L_mg"] for r in rows[-5:]])
    assert last < first


def test_deterministic_replay(small_corpus):
    _, a = fit(tiny_config(total_steps=8, lambda_adv_fixed=0.5), small_corpus)
    _, b = fit(tiny_config(total_steps=8, lambda_adv_fixed=0.5), small_corpus)
    assert a == b


def test_nonfinite_abort_names_term(small_corpus, tmp_path):
    state = new_state(tiny_config())
    with torch.no_grad():
        state.generator.postnet.proj.bias[0] = float("nan")
    with pytest.raises(NonFiniteError) as info:
        fit(state.config, small_corpus, out_dir=tmp_path, state=state)
    assert info.value.term in ("L_mp", "L_adv")
    assert (tmp_path / "checkpoint.ckpt").exists()


def test_fit_guards(small_corpus):
    with pytest.raises(ConfigError):
        fit(tiny_config(), [])
    with pytest.raises(ConfigError):
        fit(TrainConfig(total_steps=1), small_corpus)  # corpus has 8 bins, desk model 40


# -- outputs and checkpoints


def test_fit_writes_logs(small_corpus, tmp_path):
    fit(tiny_config(total_steps=12), small_corpus, out_dir=tmp_path)
    with open(tmp_path / "metrics.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == LOG_COLUMNS
    rows = read_metrics(tmp_path / "metrics.csv")
    assert [r["step"] for r in rows] == list(range(12))
    assert all(math.isfinite(r[k]) for r in rows for k in LOG_COLUMNS)
    with open(tmp_path / "validation.csv", newline="") as fh:
        val = list(csv.reader(fh))
    assert val[0] == ["step", "l1_mel_postnet"] and [v[0] for v in val[1:]] == ["10", "12"]


def test_resume_is_bit_identical(small_corpus, tmp_path):
    cfg = tiny_config(total_steps=14, lambda_adv_fixed=0.3, checkpoint_interval=6)
    full_state, full_rows = fit(cfg, small_corpus)

    # a run stopped at step 6, then resumed from its checkpoint
    short = tmp_path / "short"
    fit(tiny_config(total_steps=6, lambda_adv_fixed=0.3, checkpoint_interval=6), small_corpus,
        out_dir=short)
    state = load_checkpoint(short / "checkpoint.ckpt")
    assert state.step == 6
    state = replace(state, config=cfg)
    state, rest = fit(cfg, small_corpus, out_dir=short, state=state)
    assert rest == full_rows[6:]
    for a, b in zip(full_state.generator.parameters(), state.generator.parameters()):
        assert torch.equal(a, b)
    assert [r["step"] for r in read_metrics(short / "metrics.csv")] == list(range(14))


def test_checkpoint_round_trip(small_corpus, tmp_path):
    state, _ = fit(tiny_config(total_steps=3), small_corpus)
    path = tmp_path / "a.ckpt"
    save_checkpoint(state, path)
    back = load_checkpoint(path, expected=GeneratorConfig.tiny())
    assert back.step == 3 and back.config == state.config
    for a, b in zip(state.generator.parameters(), back.generator.parameters()):
        assert torch.equal(a, b)
    gen = load_generator(path, expected_mel_bins=8)
    assert not gen.training


def test_checkpoint_errors(small_corpus, tmp_path):
    state, _ = fit(tiny_config(total_steps=1), small_corpus)
    path = tmp_path / "a.ckpt"
    save_checkpoint(state, path)
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFileError):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:20])
    with pytest.raises(CorruptFileError):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"X" + raw[1:])
    with pytest.raises(CorruptFileError):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "ver.ckpt")
    with pytest.raises(VersionMismatchError):
        load_generator(path, expected_mel_bins=40)
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path, expected=GeneratorConfig.desk())
