"""Synthetic corpora, block-shuffle corruption, and block-confined batching."""

import bisect
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientData, InvalidParameter

GRAMMARS = ("arith", "copy")


@dataclass
class CorpusSpec:
    """Recipe for a deterministic token stream.

    ``generator="markov"``: order-``order`` chain over ``alphabet`` symbols
    (mapped to ids ``offset .. offset+alphabet-1``); each context has
    ``branching`` successors with Dirichlet(``concentration``) weights drawn
    from ``transition_seed``. ``branching=None`` allows every symbol and
    ``concentration=None`` makes the weights uniform.

    ``generator="template"``: strings from grammar ``grammar`` ("arith" or
    "copy") encoded as bytes.
    """

    generator: str = "markov"
    tokens: int = 200_000
    seed: int = 0
    order: int = 1
    alphabet: int = 32
    offset: int = 32
    branching: int = 4
    concentration: float = 0.5
    transition_seed: int = 0
    grammar: str = "arith"
    block_len: int = 128

    def __post_init__(self):
        if self.generator not in ("markov", "template"):
            raise InvalidParameter(f"unknown generator {self.generator!r}")
        if self.generator == "template" and self.grammar not in GRAMMARS:
            raise InvalidParameter(f"unknown grammar id {self.grammar!r}; choose from {GRAMMARS}")
        if self.tokens < 2 * self.block_len:
            raise InvalidParameter(f"tokens ({self.tokens}) must be >= 2 * block_len ({self.block_len})")
        if self.generator == "markov":
            if not 1 <= self.alphabet <= 256 or self.offset + self.alphabet > 256:
                raise InvalidParameter("alphabet must fit in the byte vocabulary")
            if self.order < 1 or self.alphabet**self.order > 1 << 20:
                raise InvalidParameter("order must be >= 1 and alphabet**order <= 2**20")
            if self.branching is not None and not 1 <= self.branching <= self.alphabet:
                raise InvalidParameter("branching must be in [1, alphabet]")


def transition_table(spec):
    """Row-stochastic (alphabet**order, alphabet) matrix of the Markov generator."""
    rng = np.random.default_rng(spec.transition_seed)
    a = spec.alphabet
    rows = a**spec.order
    k = a if spec.branching is None else spec.branching
    probs = np.zeros((rows, a))
    for r in range(rows):
        support = np.arange(a) if k == a else rng.choice(a, size=k, replace=False)
        if spec.concentration is None:
            w = np.full(k, 1.0 / k)
        else:
            w = rng.dirichlet(np.full(k, float(spec.concentration)))
        probs[r, support] = w
    return probs


def entropy_rate(spec):
    """Exact entropy rate (nats/token) of the Markov generator's stationary chain."""
    probs = transition_table(spec)
    a, order = spec.alphabet, spec.order
    rows = probs.shape[0]
    # context c = (s_1..s_k) -> (s_2..s_k, s') ; index arithmetic in base a
    pi = np.full(rows, 1.0 / rows)
    nxt_base = (np.arange(rows) * a) % rows
    for _ in range(5000):
        new = np.zeros(rows)
        for s in range(a):
            np.add.at(new, nxt_base + s, pi * probs[:, s])
        if np.abs(new - pi).sum() < 1e-13:
            pi = new
            break
        pi = new
    with np.errstate(divide="ignore", invalid="ignore"):
        h_rows = -np.where(probs > 0, probs * np.log(probs), 0.0).sum(axis=1)
    del order
    return float(pi @ h_rows)


def _markov_stream(spec):
    probs = transition_table(spec)
    cdfs = [list(np.cumsum(row)) for row in probs]
    for c in cdfs:
        c[-1] = 1.0 + 1e-12
    rng = np.random.default_rng(spec.seed)
    a = spec.alphabet
    rows = probs.shape[0]
    ctx = int(rng.integers(rows))
    u = rng.random(spec.tokens).tolist()
    out = np.empty(spec.tokens, dtype=np.int64)
    for i, ui in enumerate(u):
        s = bisect.bisect_right(cdfs[ctx], ui)
        out[i] = s
        ctx = (ctx * a + s) % rows
    return out + spec.offset


def _template_stream(spec):
    rng = np.random.default_rng(spec.seed)
    parts = []
    total = 0
    while total < spec.tokens:
        if spec.grammar == "arith":
            x, y = (int(v) for v in rng.integers(0, 100, size=2))
            text = f"{x}+{y}={x + y};"
        else:
            n = int(rng.integers(3, 9))
            word = "".join(chr(97 + int(c)) for c in rng.integers(0, 26, size=n))
            text = f"{word}>{word}|"
        b = text.encode("ascii")
        parts.append(b)
        total += len(b)
    return np.frombuffer(b"".join(parts)[: spec.tokens], dtype=np.uint8).astype(np.int64)


def generate_corpus(spec):
    """Deterministic int64 token stream for ``spec``."""
    if spec.generator == "markov":
        return _markov_stream(spec)
    return _template_stream(spec)


def empirical_entropy(tokens, order=1):
    """Plug-in conditional entropy H(X_t | X_{t-order..t-1}) in nats."""
    t = np.asarray(tokens, dtype=np.int64)
    if order == 0:
        _, counts = np.unique(t, return_counts=True)
        p = counts / counts.sum()
        return float(-(p * np.log(p)).sum())
    keys = np.zeros(t.size - order, dtype=np.int64)
    for k in range(order):
        keys = keys * 256 + t[k: t.size - order + k]
    joint = keys * 256 + t[order:]
    _, jc = np.unique(joint, return_counts=True)
    _, cc = np.unique(keys, return_counts=True)
    n = joint.size
    hj = -(jc / n * np.log(jc / n)).sum()
    hc = -(cc / n * np.log(cc / n)).sum()
    return float(hj - hc)


# --- corruption --------------------------------------------------------------------


@dataclass
class CorpusBlock:
    index: int
    tokens: np.ndarray
    corrupted: bool
    permutation_seed: int


def block_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def corrupt_blocks(tokens, block_len, alpha, seed):
    """Split into blocks (dropping the tail) and shuffle each with probability ``alpha``.

    Each block draws its coin and permutation from its own generator seeded by
    ``(seed, block index)``; shuffles are uniform (Fisher-Yates).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameter(f"alpha must be in [0, 1], got {alpha}")
    if block_len < 2:
        raise InvalidParameter("block_len must be >= 2")
    if block_len > tokens.size:
        raise InvalidParameter(f"block_len {block_len} exceeds token count {tokens.size}")
    n_blocks = tokens.size // block_len
    blocks = []
    for i in range(n_blocks):
        src = tokens[i * block_len:(i + 1) * block_len]
        bseed = block_seed(seed, i)
        rng = np.random.default_rng(bseed)
        corrupted = bool(rng.random() < alpha)
        data = src[rng.permutation(block_len)] if corrupted else src.copy()
        blocks.append(CorpusBlock(index=i, tokens=data, corrupted=corrupted, permutation_seed=bseed))
    return blocks


def concat_blocks(blocks):
    if not blocks:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([b.tokens for b in blocks])


def block_table(blocks):
    return [{"block": b.index, "corrupted": b.corrupted, "permutation_seed": b.permutation_seed} for b in blocks]


# --- batching ----------------------------------------------------------------------


@dataclass
class Batch:
    tokens: np.ndarray  # (batch, seq_len) int64
    corrupted: np.ndarray  # (batch,) bool
    block_index: np.ndarray  # (batch,) int64
    offset: np.ndarray = field(default=None)  # (batch,) start within the block

    @property
    def inputs(self):
        return self.tokens[:, :-1]

    @property
    def targets(self):
        return self.tokens[:, 1:]


def batch_iter(blocks, seq_len, batch_size, seed, epochs=1, drop_last=False):
    """Yield ``Batch`` objects of ``seq_len``-token windows, each inside one block.

    Every epoch visits each block once in a seeded random order, with a seeded
    random window offset. The stream is a pure function of its arguments.
    """
    if not blocks:
        return
    block_len = min(len(b.tokens) for b in blocks)
    if seq_len > block_len:
        raise InvalidParameter(f"seq_len {seq_len} exceeds block_len {block_len}")
    for epoch in range(epochs):
        rng = np.random.default_rng([int(seed), epoch])
        order = rng.permutation(len(blocks))
        offsets = rng.integers(0, np.array([len(blocks[i].tokens) for i in order]) - seq_len + 1)
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            if drop_last and sel.size < batch_size:
                break
            offs = offsets[start:start + batch_size]
            toks = np.stack([blocks[i].tokens[o:o + seq_len] for i, o in zip(sel, offs)])
            yield Batch(
                tokens=toks,
                corrupted=np.array([blocks[i].corrupted for i in sel]),
                block_index=np.array([blocks[i].index for i in sel]),
                offset=np.asarray(offs),
            )


def batch_stream(blocks, seq_len, batch_size, seed):
    """Endless ``batch_iter`` over successive epochs (full batches only)."""
    if not blocks:
        raise InsufficientData("no blocks to batch")
    epoch = 0
    while True:
        epoch_seed = int(np.random.SeedSequence([int(seed), epoch]).generate_state(1)[0])
        yield from batch_iter(blocks, seq_len, batch_size, epoch_seed, drop_last=len(blocks) >= batch_size)
        epoch += 1


# --- files -------------------------------------------------------------------------


def write_corpus(path, tokens, blocks=None):
    """Raw uint16 little-endian ids; with ``blocks``, a ``<path>.blocks.json`` table too."""
    path = Path(path)
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
        raise InvalidParameter("token ids must fit in uint16")
    path.write_bytes(arr.astype("<u2").tobytes())
    if blocks is not None:
        table = {"block_len": int(len(blocks[0].tokens)) if blocks else 0, "blocks": block_table(blocks)}
        Path(str(path) + ".blocks.json").write_text(json.dumps(table, indent=1) + "\n")


def read_corpus(path):
    """Return ``(tokens, blocks_or_None)``; blocks are rebuilt from the sidecar table."""
    path = Path(path)
    tokens = np.frombuffer(path.read_bytes(), dtype="<u2").astype(np.int64)
    side = Path(str(path) + ".blocks.json")
    if not side.exists():
        return tokens, None
    table = json.loads(side.read_text())
    bl = table["block_len"]
    blocks = [
        CorpusBlock(
            index=row["block"],
            tokens=tokens[k * bl:(k + 1) * bl].copy(),
            corrupted=bool(row["corrupted"]),
            permutation_seed=int(row["permutation_seed"]),
        )
        for k, row in enumerate(table["blocks"])
    ]
    return tokens, blocks
