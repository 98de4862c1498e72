import numpy as np
import pytest
import torch

from nsinger.audio import MelConfig
from nsinger.corpus import synthetic_corpus
from nsinger.score import NoteEvent, Score

torch.set_num_threads(1)


@pytest.fixture
def han_score():
    return Score((NoteEvent.note("한", 69, 8), NoteEvent.rest(4), NoteEvent.note("가", 72, 6)))


@pytest.fixture(scope="session")
def small_corpus():
    """Two short synthetic clips at 8 mel bins."""
    return synthetic_corpus(2, seed=5, mel_cfg=MelConfig(mel_bins=8), n_events=3,
                            frames_range=(10, 16), rest_frames=(5, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
