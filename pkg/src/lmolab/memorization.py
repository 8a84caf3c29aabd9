"""Exact-match memorization of corpus blocks under greedy decoding."""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InsufficientData, InvalidParameter
from .model import greedy_generate

SPLITS = ("clean", "corrupted", "all")


@dataclass(frozen=True)
class MemEvalSpec:
    """Prompt length ``a``, generation length ``b``, ``subset`` prompts from ``split`` blocks."""

    a: int = 64
    b: int = 1
    subset: int = 1000
    split: str = "clean"
    seed: int = 0

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise InvalidParameter("a and b must be >= 1")
        if self.subset < 1:
            raise InvalidParameter("subset must be >= 1")
        if self.split not in SPLITS:
            raise InvalidParameter(f"split must be one of {SPLITS}")


def _split_blocks(blocks, split):
    if split == "all":
        return list(blocks)
    want = split == "corrupted"
    return [b for b in blocks if b.corrupted == want]


def sample_prompts(blocks, spec, b_max=None):
    """Seeded (block position, offset) pairs; every window lies inside one block.

    ``b_max`` (default ``spec.b``) bounds the continuation length so the same
    prompts can score several generation lengths.
    """
    b_max = spec.b if b_max is None else b_max
    pool = _split_blocks(blocks, spec.split)
    if not pool:
        raise InsufficientData(f"no {spec.split} blocks to evaluate")
    block_len = min(len(bl.tokens) for bl in pool)
    if spec.a + b_max > block_len:
        raise InvalidParameter(f"a + b = {spec.a + b_max} exceeds block_len {block_len}")
    rng = np.random.default_rng(spec.seed)
    which = rng.integers(0, len(pool), size=spec.subset)
    offsets = rng.integers(0, block_len - spec.a - b_max + 1, size=spec.subset)
    return pool, which, offsets


@torch.no_grad()
def _greedy_all(model, prompts, b, chunk=512):
    outs = []
    for s in range(0, prompts.shape[0], chunk):
        outs.append(greedy_generate(model, torch.from_numpy(prompts[s:s + chunk]), b).numpy())
    return np.concatenate(outs)


def exact_match_curve(model, blocks, spec, bs):
    """Accuracy for each b in ``bs`` on one shared prompt set (prefix-nested, so non-increasing)."""
    bs = sorted(int(b) for b in bs)
    if not bs or bs[0] < 1:
        raise InvalidParameter("generation lengths must be >= 1")
    pool, which, offsets = sample_prompts(blocks, spec, b_max=bs[-1])
    prompts = np.stack([pool[w].tokens[o:o + spec.a] for w, o in zip(which, offsets)])
    truth = np.stack([pool[w].tokens[o + spec.a:o + spec.a + bs[-1]] for w, o in zip(which, offsets)])
    gen = _greedy_all(model, prompts, bs[-1])
    # correct prefix length per prompt
    wrong = gen != truth
    first_wrong = np.where(wrong.any(axis=1), wrong.argmax(axis=1), bs[-1])
    return {b: float(np.mean(first_wrong >= b)) for b in bs}


def memorization_accuracy(model, blocks, spec):
    """Fraction of prompts whose greedy ``b``-token completion equals the source exactly."""
    return exact_match_curve(model, blocks, spec, [spec.b])[spec.b]
