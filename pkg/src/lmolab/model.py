"""Tiny decoder-only transformer with activation tracing and LoRA adapters.

Byte-level vocabulary, learned positions, pre-norm blocks (RMS-style norm with
a gain), causal multi-head attention and a SwiGLU MLP; the output head is tied
to the token embedding. Every linear layer is a ``TracedLinear`` so a forward
pass can record its input/output activations.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInput, InvalidParameter, InvalidState

RESERVOIR_SIZE = 4096


@dataclass
class ModelConfig:
    vocab: int = 256
    dim: int = 64
    layers: int = 2
    heads: int = 4
    seq_len: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        if self.vocab < 1 or self.dim < 1 or self.layers < 1 or self.heads < 1:
            raise InvalidParameter("model sizes must be positive")
        if self.dim % self.heads:
            raise InvalidParameter(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.seq_len < 2:
            raise InvalidParameter("seq_len must be >= 2")

    @property
    def mlp_hidden(self):
        return max(self.heads, int(round(8 * self.dim / 3 / self.heads)) * self.heads)

    def to_dict(self):
        return asdict(self)


class RMSNorm(nn.Module):
    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class TracedLinear(nn.Module):
    """Bias-free linear layer y = W x (+ LoRA delta) that can report activations."""

    def __init__(self, in_features, out_features, splits=None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.splits = splits  # {name: (start, stop)} over output features
        self.layer_name = ""
        self.tracer = None
        self.lora_A = None
        self.lora_B = None
        self.lora_scale = 0.0

    def forward(self, x):
        y = F.linear(x, self.weight)
        if self.lora_A is not None:
            y = y + self.lora_scale * F.linear(F.linear(x, self.lora_A), self.lora_B)
        if self.tracer is not None:
            self.tracer.record(self.layer_name, x, y, self.splits)
        return y


class Block(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d, h = cfg.dim, cfg.mlp_hidden
        self.heads = cfg.heads
        self.dropout = cfg.dropout
        self.attn_norm = RMSNorm(d)
        self.qkv = TracedLinear(d, 3 * d, splits={"q": (0, d), "k": (d, 2 * d), "v": (2 * d, 3 * d)})
        self.proj = TracedLinear(d, d)
        self.mlp_norm = RMSNorm(d)
        self.fc1 = TracedLinear(d, 2 * h, splits={"gate": (0, h), "value": (h, 2 * h)})
        self.fc2 = TracedLinear(h, d)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(self.attn_norm(x)).split(d, dim=-1)
        hd = d // self.heads
        q, k, v = (z.view(b, t, self.heads, hd).transpose(1, 2) for z in (q, k, v))
        p = self.dropout if self.training else 0.0
        a = F.scaled_dot_product_attention(q, k, v, is_causal=True, dropout_p=p)
        x = x + F.dropout(self.proj(a.transpose(1, 2).reshape(b, t, d)), p, self.training)
        gate, value = self.fc1(self.mlp_norm(x)).chunk(2, dim=-1)
        x = x + F.dropout(self.fc2(F.silu(gate) * value), p, self.training)
        return x


class TinyLM(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab, cfg.dim)
        self.pos_emb = nn.Parameter(torch.empty(cfg.seq_len, cfg.dim))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.final_norm = RMSNorm(cfg.dim)
        for name, mod in self.named_modules():
            if isinstance(mod, TracedLinear):
                mod.layer_name = name

    def linear_layers(self):
        return {name: mod for name, mod in self.named_modules() if isinstance(mod, TracedLinear)}

    def matrix_parameter_names(self):
        """Weights of linear layers (and LoRA factors): the parameters matrix rules act on."""
        names = []
        for name, mod in self.linear_layers().items():
            names.append(f"{name}.weight")
            if mod.lora_A is not None:
                names += [f"{name}.lora_A", f"{name}.lora_B"]
        return names

    def forward(self, idx):
        b, t = idx.shape
        x = self.tok_emb(idx) + self.pos_emb[:t]
        x = F.dropout(x, self.cfg.dropout, self.training)
        for blk in self.blocks:
            x = blk(x)
        return F.linear(self.final_norm(x), self.tok_emb.weight)


def init_params(cfg, seed=0, dtype=torch.float32):
    """Build a ``TinyLM`` with N(0, 0.02) weights; residual projections get 0.02/sqrt(2L)."""
    model = TinyLM(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    std = 0.02
    resid_std = std / math.sqrt(2 * cfg.layers)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("norm.weight"):
                p.fill_(1.0)
            elif name.endswith("proj.weight") or name.endswith("fc2.weight"):
                p.copy_(torch.randn(p.shape, generator=gen) * resid_std)
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * std)
    return model.to(dtype)


# --- activation tracing ------------------------------------------------------------


class LayerTrace:
    def __init__(self, in_dim, out_dim, capacity, rng):
        self.capacity = capacity
        self.rng = rng
        self.x = np.zeros((capacity, in_dim))
        self.y = np.zeros((capacity, out_dim))
        self.filled = 0
        self.count = 0
        self.xx = np.zeros((in_dim, in_dim))

    def add(self, x, y):
        n = x.shape[0]
        self.xx += x.T @ x
        pos = np.arange(self.count, self.count + n)
        direct = pos < self.capacity
        if direct.any():
            self.x[pos[direct]] = x[direct]
            self.y[pos[direct]] = y[direct]
        rest = ~direct
        if rest.any():
            slots = np.floor(self.rng.random(int(rest.sum())) * (pos[rest] + 1)).astype(np.int64)
            hit = slots < self.capacity
            src = np.flatnonzero(rest)[hit]
            self.x[slots[hit]] = x[src]
            self.y[slots[hit]] = y[src]
        self.count += n
        self.filled = min(self.capacity, self.count)

    @property
    def inputs(self):
        return self.x[: self.filled]

    @property
    def outputs(self):
        return self.y[: self.filled]

    def covariance(self):
        """Exact running mean of x x^T over every recorded vector."""
        if self.count == 0:
            raise InvalidState("no samples recorded")
        c = self.xx / self.count
        return 0.5 * (c + c.T)


class ActivationTrace:
    """Per-linear-layer activation samples and exact input second moments."""

    def __init__(self, capacity=RESERVOIR_SIZE, seed=0):
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.layers = {}
        self.splits = {}

    def record(self, name, x, y, splits=None):
        xs = x.detach().reshape(-1, x.shape[-1]).to(torch.float64).cpu().numpy()
        ys = y.detach().reshape(-1, y.shape[-1]).to(torch.float64).cpu().numpy()
        if name not in self.layers:
            self.layers[name] = LayerTrace(xs.shape[1], ys.shape[1], self.capacity, self.rng)
            self.splits[name] = splits or {}
        self.layers[name].add(xs, ys)

    def __getitem__(self, name):
        return self.layers[name]

    def names(self):
        return list(self.layers)

    def covariance(self, name):
        return self.layers[name].covariance()

    def output_splits(self, name):
        """Sampled outputs split by role, e.g. q/k/v for attention, gate/value for the MLP."""
        ys = self.layers[name].outputs
        parts = self.splits.get(name) or {}
        if not parts:
            return {"out": ys}
        return {k: ys[:, a:b] for k, (a, b) in parts.items()}


class _tracing:
    def __init__(self, model, trace):
        self.layers = list(model.linear_layers().values())
        self.trace = trace

    def __enter__(self):
        for mod in self.layers:
            mod.tracer = self.trace
        return self.trace

    def __exit__(self, *exc):
        for mod in self.layers:
            mod.tracer = None


def _check_tokens(model, tokens):
    idx = torch.as_tensor(tokens, dtype=torch.long)
    if idx.dim() == 1:
        idx = idx[None, :]
    if idx.dim() != 2 or idx.shape[1] < 1:
        raise InvalidInput(f"tokens must be (batch, time), got shape {tuple(idx.shape)}")
    if idx.shape[1] > model.cfg.seq_len:
        raise InvalidInput(f"sequence length {idx.shape[1]} exceeds seq_len {model.cfg.seq_len}")
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= model.cfg.vocab):
        raise InvalidInput(f"token ids must lie in [0, {model.cfg.vocab})")
    return idx


def forward(model, tokens, capture=False, trace=None):
    """Logits for ``tokens``; with ``capture`` also returns the ActivationTrace (appended to ``trace``)."""
    idx = _check_tokens(model, tokens)
    if not capture:
        return model(idx)
    trace = trace if trace is not None else ActivationTrace()
    with _tracing(model, trace):
        logits = model(idx)
    return logits, trace


def cross_entropy(logits, targets):
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def loss_and_grads(model, inputs, targets):
    """Mean next-token cross-entropy and exact gradients for every trainable parameter."""
    idx = _check_tokens(model, inputs)
    tgt = torch.as_tensor(targets, dtype=torch.long).reshape(idx.shape)
    if idx.numel() == 0:
        raise InvalidInput("empty batch")
    model.zero_grad(set_to_none=True)
    loss = cross_entropy(model(idx), tgt)
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters() if p.requires_grad}
    return float(loss.detach()), grads


def gradient_check(model, inputs, targets, epsilon=1e-4, fraction=0.01, seed=0, names=None):
    """Max relative error between autograd and central differences on sampled coordinates.

    Requires a float64 model. For each parameter the error is norm-wise over its
    sampled coordinates, ||a - n|| / max(||a||, ||n||), which stays meaningful
    when single entries sit at the finite-difference noise floor. Returns
    ``(max_rel_err, per_parameter)``.
    """
    if next(model.parameters()).dtype != torch.float64:
        raise InvalidState("gradient_check needs a float64 model")
    idx = _check_tokens(model, inputs)
    tgt = torch.as_tensor(targets, dtype=torch.long).reshape(idx.shape)
    was_training = model.training
    model.eval()
    _, grads = loss_and_grads(model, idx, tgt)
    params = dict(model.named_parameters())
    rng = np.random.default_rng(seed)
    worst = 0.0
    per = {}
    with torch.no_grad():
        for name, g in grads.items():
            if names is not None and name not in names:
                continue
            p = params[name]
            flat = p.view(-1)
            k = max(1, int(math.ceil(fraction * flat.numel())))
            coords = rng.choice(flat.numel(), size=min(k, flat.numel()), replace=False)
            ana, num = [], []
            for c in coords:
                orig = flat[c].item()
                flat[c] = orig + epsilon
                lp = cross_entropy(model(idx), tgt).item()
                flat[c] = orig - epsilon
                lm = cross_entropy(model(idx), tgt).item()
                flat[c] = orig
                num.append((lp - lm) / (2 * epsilon))
                ana.append(g.view(-1)[c].item())
            ana, num = np.array(ana), np.array(num)
            denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-300)
            err = float(np.linalg.norm(ana - num) / denom)
            per[name] = err
            worst = max(worst, err)
    model.train(was_training)
    return worst, per


@torch.no_grad()
def greedy_generate(model, prompt, b):
    """Append ``b`` argmax tokens (ties -> lowest id) to each prompt row.

    ``prompt`` is (time,) or (batch, time); the context is cropped to the last
    ``seq_len`` tokens when generation runs past it. Returns only the new tokens.
    """
    idx = _check_tokens(model, prompt)
    single = torch.as_tensor(prompt).dim() == 1
    if b < 0:
        raise InvalidParameter("generation length must be >= 0")
    was_training = model.training
    model.eval()
    out = idx
    for _ in range(b):
        ctx = out[:, -model.cfg.seq_len:]
        nxt = model(ctx)[:, -1, :].argmax(dim=-1, keepdim=True)
        out = torch.cat([out, nxt], dim=1)
    model.train(was_training)
    new = out[:, idx.shape[1]:]
    return new[0] if single else new


# --- LoRA ------------------------------------------------------------------------


@dataclass
class LoraAdapter:
    model: TinyLM
    layers: dict  # layer name -> TracedLinear carrying lora_A / lora_B
    rank: int
    alpha: float

    @property
    def scale(self):
        return self.alpha / self.rank

    def parameters(self):
        for mod in self.layers.values():
            yield mod.lora_A
            yield mod.lora_B


def _match_targets(model, targets):
    layers = model.linear_layers()
    if targets is None:
        return layers
    chosen = {}
    for name, mod in layers.items():
        short = name.rsplit(".", 1)[-1]
        if name in targets or short in targets:
            chosen[name] = mod
    if not chosen:
        raise InvalidParameter(f"no linear layer matches targets {targets}")
    return chosen


def lora_attach(model, targets=None, r=4, alpha=None, seed=0, freeze_base=True):
    """Attach rank-``r`` adapters (B = 0, so the model function is unchanged).

    ``alpha`` defaults to 2r. ``targets`` names layers by full name or by the
    last component (``qkv``, ``proj``, ``fc1``, ``fc2``); None means all.
    """
    if r < 1:
        raise InvalidParameter("LoRA rank must be >= 1")
    alpha = 2.0 * r if alpha is None else float(alpha)
    chosen = _match_targets(model, targets)
    gen = torch.Generator().manual_seed(int(seed))
    dtype = next(model.parameters()).dtype
    if freeze_base:
        for p in model.parameters():
            p.requires_grad_(False)
    for name, mod in chosen.items():
        if mod.lora_A is not None:
            raise InvalidState(f"layer {name} already has an adapter")
        m, n = mod.weight.shape
        mod.lora_A = nn.Parameter((torch.randn(r, n, generator=gen) / math.sqrt(n)).to(dtype))
        mod.lora_B = nn.Parameter(torch.zeros(m, r, dtype=dtype))
        mod.lora_scale = alpha / r
    return LoraAdapter(model=model, layers=chosen, rank=r, alpha=alpha)


def lora_merge(adapter):
    """Per-layer delta W = (alpha / r) B A as float64 numpy arrays."""
    out = {}
    for name, mod in adapter.layers.items():
        with torch.no_grad():
            delta = adapter.scale * (mod.lora_B.to(torch.float64) @ mod.lora_A.to(torch.float64))
        out[name] = delta.numpy()
    return out


def lora_fold(adapter):
    """Add the adapter deltas into the base weights and detach the adapters."""
    deltas = lora_merge(adapter)
    with torch.no_grad():
        for name, mod in adapter.layers.items():
            mod.weight.add_(torch.from_numpy(deltas[name]).to(mod.weight.dtype))
            mod.lora_A = None
            mod.lora_B = None
            mod.lora_scale = 0.0
    return deltas
