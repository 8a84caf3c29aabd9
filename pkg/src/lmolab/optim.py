"""Steepest descent under matrix norms: LMO directions, RMS-aligned momentum steps, AdamW.

The update for every matrix rule is

    M_t = beta * M_{t-1} + (1 - beta) * G_t
    U_t = lmo_direction(M_t, rule)
    W  <- W - lr * rms_scale * U_t / rms(U_t)

with decoupled weight decay applied first. ``LabOptimizer`` wraps this for
torch parameters: 2-D weight matrices use the configured rule, everything
else (embeddings, norm gains, biases) uses AdamW.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import kernels
from .errors import InvalidParameter, UnsupportedNorm
from .linalg import msign_exact, msign_newton_schulz, rms_norm
from .norms import INF, NormPair, induced_norm

RULES = ("sign", "orth", "row_max", "col_max", "raw")

# label pair each rule is filed under
RULE_PAIRS = {
    "sign": NormPair(1, INF),
    "orth": NormPair(2, 2),
    "row_max": NormPair(1, 1),
    "col_max": NormPair(INF, INF),
    "raw": None,
}

# operator-norm pair for which the printed update is the exact LMO; row_max
# bounds each row's l1 mass (max row sum = ||.||_{inf,inf}), col_max each column's
TRUE_PAIRS = {
    "sign": NormPair(1, INF),
    "orth": NormPair(2, 2),
    "row_max": NormPair(INF, INF),
    "col_max": NormPair(1, 1),
    "raw": None,
}

ALIASES = {
    "adamw": "adamw",
    "muon": "orth",
    "orth": "orth",
    "signsgd": "sign",
    "sign": "sign",
    "rowmax": "row_max",
    "row_max": "row_max",
    "a11": "row_max",
    "colmax": "col_max",
    "col_max": "col_max",
    "ainfinf": "col_max",
    "sgd": "raw",
    "raw": "raw",
}


def resolve_rule(name):
    key = str(name).lower().replace("-", "_")
    key = ALIASES.get(key, ALIASES.get(key.replace("_", ""), None))
    if key is None:
        raise InvalidParameter(f"unknown optimizer rule {name!r}; choose from {sorted(ALIASES)}")
    return key


def lmo_direction(m, rule, radius=1.0, orthogonalizer="exact", ns_steps=5):
    """argmax <U, m> over the rule's norm ball of the given radius."""
    m = np.asarray(m, dtype=np.float64)
    if rule == "sign":
        return radius * np.sign(m)
    if rule == "orth":
        if not np.any(m):
            return np.zeros_like(m)
        if orthogonalizer == "exact":
            return radius * msign_exact(m)
        return radius * msign_newton_schulz(m, ns_steps)
    if rule == "row_max":
        return kernels.max_select(np.ascontiguousarray(m), float(radius), 1)
    if rule == "col_max":
        return kernels.max_select(np.ascontiguousarray(m), float(radius), 0)
    if rule == "raw":
        fro = np.linalg.norm(m)
        return np.zeros_like(m) if fro == 0.0 else radius * m / fro
    raise InvalidParameter(f"unknown rule {rule!r}")


def pair_lmo(m, pair, radius=1.0):
    """Exact LMO of the operator norm ``pair`` for every supported pair."""
    p = pair if isinstance(pair, NormPair) else NormPair(*pair)
    key = (p.alpha, p.beta)
    m = np.asarray(m, dtype=np.float64)
    if key == (1.0, INF):
        return lmo_direction(m, "sign", radius)
    if key == (2.0, 2.0):
        return lmo_direction(m, "orth", radius)
    if key == (1.0, 1.0):
        return lmo_direction(m, "col_max", radius)
    if key == (INF, INF):
        return lmo_direction(m, "row_max", radius)
    if key == (1.0, 2.0):
        norms = np.sqrt((m * m).sum(axis=0, keepdims=True))
        return np.where(norms > 0, radius * m / np.where(norms > 0, norms, 1.0), 0.0)
    raise UnsupportedNorm(f"no closed-form LMO for {p.label()}")


@dataclass
class OptimizerConfig:
    rule: str = "orth"
    lr: float = 1e-3
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.95)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    rms_scale: float = 0.2
    orthogonalizer: str = "newton_schulz"
    ns_steps: int = 5

    def __post_init__(self):
        self.rule = resolve_rule(self.rule)
        if not self.lr >= 0:
            raise InvalidParameter("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameter("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidParameter("weight_decay must be >= 0")
        if self.orthogonalizer not in ("exact", "newton_schulz"):
            raise InvalidParameter(f"orthogonalizer must be 'exact' or 'newton_schulz'")
        self.adam_betas = tuple(float(b) for b in self.adam_betas)


@dataclass
class OptimizerState:
    momentum: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0


def step(w, grad, state, cfg):
    """One RMS-aligned steepest-descent step on ``w`` (updated in place).

    Returns ``(w, state)``. A zero direction skips the weight update but still
    advances momentum and ``step_count``.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape:
        raise InvalidParameter(f"shape mismatch {w.shape} vs {grad.shape}")
    if cfg.rule == "adamw":
        return step_adamw(w, grad, state, cfg)
    if state.momentum is None:
        state.momentum = np.zeros(w.shape)
    beta = cfg.momentum
    state.momentum *= beta
    state.momentum += (1.0 - beta) * grad
    state.step_count += 1
    u = lmo_direction(state.momentum, cfg.rule, 1.0, cfg.orthogonalizer, cfg.ns_steps)
    rms = rms_norm(u)
    if rms == 0.0:
        return w, state
    if cfg.weight_decay > 0:
        w *= 1.0 - cfg.lr * cfg.weight_decay
    w -= (cfg.lr * cfg.rms_scale / rms) * u
    return w, state


def step_adamw(w, grad, state, cfg):
    """Bias-corrected AdamW with decoupled weight decay (in place)."""
    grad = np.asarray(grad, dtype=np.float64)
    if state.adam_m is None:
        state.adam_m = np.zeros(w.shape)
        state.adam_v = np.zeros(w.shape)
    b1, b2 = cfg.adam_betas
    state.step_count += 1
    t = state.step_count
    state.adam_m *= b1
    state.adam_m += (1 - b1) * grad
    state.adam_v *= b2
    state.adam_v += (1 - b2) * grad * grad
    m_hat = state.adam_m / (1 - b1**t)
    v_hat = state.adam_v / (1 - b2**t)
    if cfg.weight_decay > 0:
        w *= 1.0 - cfg.lr * cfg.weight_decay
    w -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return w, state


@dataclass
class OptimalityReport:
    rule: str
    norm: str
    trials: int
    violations: int
    best_value: float
    max_competitor: float
    notes: list = field(default_factory=list)


def _unit_ball_sample(rng, shape, rule):
    pair = TRUE_PAIRS[rule]
    kind = rng.integers(3)
    z = rng.standard_normal(shape)
    if kind == 1:
        z = np.sign(z) if rule in ("sign", "orth") else z * (rng.random(shape) < 0.2)
    elif kind == 2:
        z = np.zeros(shape)
        z[rng.integers(shape[0]), rng.integers(shape[1])] = rng.choice([-1.0, 1.0])
    if not np.any(z):
        z[0, 0] = 1.0
    scale = np.linalg.norm(z) if pair is None else induced_norm(z, pair)
    return z / scale


def lmo_optimality_check(m, rule, trials=200, seed=0, tol=1e-9):
    """Check <U, m> >= <Z, m> for U = lmo_direction(m, rule, 1) and random unit-norm Z.

    Z is drawn from the unit ball of ``TRUE_PAIRS[rule]`` (Frobenius for raw);
    for row_max/col_max this differs from the rule's label pair, which is
    noted in the report.
    """
    m = np.asarray(m, dtype=np.float64)
    rng = np.random.default_rng(seed)
    u = lmo_direction(m, rule, 1.0)
    best = float(np.sum(u * m))
    pair = TRUE_PAIRS[rule]
    report = OptimalityReport(
        rule=rule,
        norm="frobenius" if pair is None else pair.label(),
        trials=trials,
        violations=0,
        best_value=best,
        max_competitor=-INF,
    )
    if RULE_PAIRS[rule] is not None and RULE_PAIRS[rule] != pair:
        report.notes.append(
            f"{rule} is filed under {RULE_PAIRS[rule].label()} but is the exact LMO of {pair.label()}"
        )
    for _ in range(trials):
        z = _unit_ball_sample(rng, m.shape, rule)
        val = float(np.sum(z * m))
        report.max_competitor = max(report.max_competitor, val)
        if val > best + tol * max(1.0, abs(best)):
            report.violations += 1
    return report


def cosine_lr(step_idx, total_steps, base_lr, warmup_frac=0.1, min_ratio=0.0):
    """Linear warmup over ``warmup_frac`` of the run, then cosine decay."""
    warmup = int(round(warmup_frac * total_steps))
    if warmup > 0 and step_idx < warmup:
        return base_lr * (step_idx + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, (step_idx - warmup) / span)
    return base_lr * (min_ratio + (1 - min_ratio) * 0.5 * (1 + math.cos(math.pi * progress)))


class LabOptimizer(torch.optim.Optimizer):
    """Torch wrapper: matrix rule on 2-D weights, AdamW on the rest.

    Parameter groups carry a ``matrix`` flag. The update math runs in float64
    numpy on copies of each tensor and is written back, so float32 models get
    the same arithmetic as the reference ``step`` functions.
    """

    def __init__(self, matrix_params, other_params, cfg, adamw_lr=None, adamw_weight_decay=None):
        self.cfg = cfg
        groups = []
        matrix_params = list(matrix_params)
        other_params = list(other_params)
        if matrix_params:
            groups.append({"params": matrix_params, "matrix": cfg.rule != "adamw", "lr": cfg.lr,
                           "weight_decay": cfg.weight_decay})
        if other_params:
            groups.append({
                "params": other_params,
                "matrix": False,
                "lr": cfg.lr if adamw_lr is None else adamw_lr,
                "weight_decay": cfg.weight_decay if adamw_weight_decay is None else adamw_weight_decay,
            })
        super().__init__(groups, {})
        for g in self.param_groups:
            g["base_lr"] = g["lr"]

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            base = self.cfg
            cfg = OptimizerConfig(
                rule=base.rule if group["matrix"] else "adamw",
                lr=group["lr"],
                momentum=base.momentum,
                adam_betas=base.adam_betas,
                adam_eps=base.adam_eps,
                weight_decay=group["weight_decay"],
                rms_scale=base.rms_scale,
                orthogonalizer=base.orthogonalizer,
                ns_steps=base.ns_steps,
            )
            for p in group["params"]:
                if p.grad is None:
                    continue
                st = self.state[p].setdefault("lab", OptimizerState())
                w = p.detach().cpu().numpy().astype(np.float64)
                g = p.grad.detach().cpu().numpy()
                step(w, g, st, cfg)
                p.copy_(torch.from_numpy(w).to(p.dtype))
        return loss

    def set_lr_scale(self, scale):
        for g in self.param_groups:
            g["lr"] = g["base_lr"] * scale
