import numpy as np
import pytest
import torch

from lmolab.corpus import CorpusBlock, corrupt_blocks
from lmolab.errors import InsufficientData, InvalidParameter
from lmolab.memorization import MemEvalSpec, exact_match_curve, memorization_accuracy, sample_prompts
from lmolab.model import ModelConfig, init_params

CFG = ModelConfig(vocab=32, dim=16, layers=1, heads=2, seq_len=32)


class Oracle(torch.nn.Module):
    """Predicts the successor in a fixed cyclic sequence: perfect memorization of ``i -> i + 1``."""

    def __init__(self, vocab):
        super().__init__()
        self.cfg = ModelConfig(vocab=vocab, dim=16, layers=1, heads=2, seq_len=64)
        self.vocab = vocab

    def forward(self, idx):
        return torch.nn.functional.one_hot((idx + 1) % self.vocab, self.vocab).float()


def test_perfect_model_scores_one():
    t = np.arange(400) % 32
    blocks = corrupt_blocks(t, 40, 0.0, 0)
    assert memorization_accuracy(Oracle(32), blocks, MemEvalSpec(a=8, b=4, subset=50)) == 1.0


def test_corrupted_split_breaks_successor_rule():
    t = np.arange(4000) % 32
    blocks = corrupt_blocks(t, 40, 1.0, 0)
    acc = memorization_accuracy(Oracle(32), blocks, MemEvalSpec(a=8, b=2, subset=200, split="corrupted"))
    assert acc < 0.2


def test_no_blocks_of_split():
    blocks = corrupt_blocks(np.arange(100) % 32, 20, 0.0, 0)
    with pytest.raises(InsufficientData):
        memorization_accuracy(Oracle(32), blocks, MemEvalSpec(a=4, b=1, split="corrupted"))


def test_prompt_window_must_fit():
    blocks = corrupt_blocks(np.arange(100) % 32, 20, 0.0, 0)
    with pytest.raises(InvalidParameter):
        sample_prompts(blocks, MemEvalSpec(a=18, b=4))
    with pytest.raises(InvalidParameter):
        MemEvalSpec(a=0)


def test_prompts_seeded():
    blocks = corrupt_blocks(np.arange(1000) % 32, 50, 0.3, 0)
    a = sample_prompts(blocks, MemEvalSpec(a=8, b=2, subset=30, seed=4))
    b = sample_prompts(blocks, MemEvalSpec(a=8, b=2, subset=30, seed=4))
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_curve_monotone_in_b():
    model = init_params(CFG, 0)
    rng = np.random.default_rng(0)
    # a low-entropy corpus so the untrained model sometimes matches
    t = rng.integers(0, 2, 3000)
    blocks = [CorpusBlock(i, t[i * 30:(i + 1) * 30], False, 0) for i in range(100)]
    curve = exact_match_curve(model, blocks, MemEvalSpec(a=8, subset=300), [1, 2, 3, 4, 6])
    vals = [curve[b] for b in sorted(curve)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))
