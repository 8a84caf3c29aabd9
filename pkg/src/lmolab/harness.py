"""Pretrain -> SFT experiment driver: training runs, grids, CSV records, and probes."""

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, save_model
from .corpus import CorpusSpec, batch_iter, batch_stream, corrupt_blocks, generate_corpus
from .errors import IncompatibleCheckpoint, InvalidParameter, InvalidState
from .model import ActivationTrace, ModelConfig, cross_entropy, forward, init_params, lora_attach, lora_fold
from .norms import activation_sparsity_rows, stable_rank
from .optim import RULE_PAIRS, LabOptimizer, OptimizerConfig, cosine_lr, resolve_rule
from .seeding import substream

log = logging.getLogger(__name__)

DIVERGENCE_NATS = 2.0


@dataclass
class TrainConfig:
    """Everything a single training stage needs.

    ``algo`` is a rule name (sign, orth, row_max, col_max, raw, adamw) or
    ``lora(r)``. ``corpus`` is the stage's training corpus; ``pretrain_corpus``
    is the corpus whose validation loss measures forgetting (defaults to
    ``corpus`` in the pretrain stage).
    """

    algo: str = "orth"
    lr: float = 3e-3
    steps: int = 500
    batch_size: int = 16
    eval_interval: int = 100
    eval_batches: int = 4
    warmup_frac: float = 0.1
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    momentum: float = 0.9
    orthogonalizer: str = "newton_schulz"
    corrupt_alpha: float = 0.0
    window: int = None  # training window in tokens (default: the whole block)
    seed: int = 0
    f64: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    pretrain_corpus: CorpusSpec = None

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_interval < 1 or self.eval_batches < 1:
            raise InvalidParameter("steps >= 0, batch_size >= 1, eval_interval >= 1, eval_batches >= 1")
        if not self.lr >= 0:
            raise InvalidParameter("lr must be >= 0")
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.corpus, dict):
            self.corpus = CorpusSpec(**self.corpus)
        if isinstance(self.pretrain_corpus, dict):
            self.pretrain_corpus = CorpusSpec(**self.pretrain_corpus)
        lora_rank(self.algo)  # validates lora(r) syntax
        if lora_rank(self.algo) is None:
            self.algo = resolve_rule(self.algo)
        if self.window is not None and not 2 <= self.window <= self.corpus.block_len:
            raise InvalidParameter(f"window must be in [2, block_len], got {self.window}")
        if self.corpus.block_len > self.model.seq_len + 1:
            raise InvalidParameter(
                f"block_len {self.corpus.block_len} exceeds model seq_len + 1 = {self.model.seq_len + 1}"
            )

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameter(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def lora_rank(algo):
    s = str(algo).strip().lower()
    if not s.startswith("lora"):
        return None
    inner = s[4:].strip("() ")
    try:
        r = int(inner) if inner else 4
    except ValueError:
        raise InvalidParameter(f"bad LoRA spec {algo!r}; use lora(r)") from None
    if r < 1:
        raise InvalidParameter("LoRA rank must be >= 1")
    return r


@dataclass
class RunRecord:
    algo: str
    rule_alpha: object
    rule_beta: object
    lr: float
    step: int
    seed: int
    forget_metric: float
    learn_metric: float
    diverged: bool = False

    @property
    def key(self):
        return (self.algo, self.lr, self.step, self.seed)


def rule_pair(algo):
    if lora_rank(algo) is not None:
        return None, None
    pair = RULE_PAIRS.get(resolve_rule(algo))
    return (None, None) if pair is None else (pair.alpha, pair.beta)


# --- data ---------------------------------------------------------------------------


@dataclass
class StageData:
    train_blocks: list
    val_batches: list  # list of (inputs, targets) int64 arrays


def _val_batches(spec, cfg, seed, name):
    """Fixed validation windows from a held-out stream of the same generator."""
    n_tokens = max(2 * spec.block_len, cfg.eval_batches * cfg.batch_size * spec.block_len)
    held = replace(spec, seed=substream(seed, name, "val"), tokens=n_tokens)
    blocks = corrupt_blocks(generate_corpus(held), spec.block_len, 0.0, 0)
    out = []
    for b in batch_iter(blocks, spec.block_len, cfg.batch_size, 0):
        out.append((b.inputs, b.targets))
        if len(out) == cfg.eval_batches:
            break
    return out


_DATA_CACHE = {}


def stage_data(spec, cfg, name):
    """Training blocks (corrupted with ``cfg.corrupt_alpha``) and validation batches."""
    key = (repr(spec), cfg.corrupt_alpha, cfg.seed, cfg.eval_batches, cfg.batch_size, name)
    if key not in _DATA_CACHE:
        tokens = generate_corpus(spec)
        blocks = corrupt_blocks(tokens, spec.block_len, cfg.corrupt_alpha, substream(cfg.seed, name, "corrupt"))
        _DATA_CACHE[key] = StageData(blocks, _val_batches(spec, cfg, cfg.seed, name))
        if len(_DATA_CACHE) > 16:
            _DATA_CACHE.pop(next(iter(_DATA_CACHE)))
    return _DATA_CACHE[key]


@torch.no_grad()
def evaluate(model, batches):
    """Per-token mean cross-entropy over ``batches``."""
    was = model.training
    model.eval()
    total, count = 0.0, 0
    for inputs, targets in batches:
        idx = torch.as_tensor(inputs, dtype=torch.long)
        tgt = torch.as_tensor(targets, dtype=torch.long)
        total += float(cross_entropy(model(idx), tgt)) * tgt.numel()
        count += tgt.numel()
    model.train(was)
    return total / count


# --- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    model: torch.nn.Module
    records: list
    checkpoint: Path = None
    diverged: bool = False
    train_losses: list = field(default_factory=list)


def _build_optimizer(model, cfg):
    r = lora_rank(cfg.algo)
    if r is not None:
        adapter = lora_attach(model, r=r, seed=substream(cfg.seed, "lora"))
        ocfg = OptimizerConfig(rule="adamw", lr=cfg.lr, weight_decay=cfg.weight_decay)
        return LabOptimizer([], list(adapter.parameters()), ocfg), adapter
    ocfg = OptimizerConfig(
        rule=cfg.algo, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        orthogonalizer=cfg.orthogonalizer,
    )
    matrix = set(model.matrix_parameter_names())
    named = dict(model.named_parameters())
    mats = [p for n, p in named.items() if n in matrix and p.requires_grad]
    rest = [p for n, p in named.items() if n not in matrix and p.requires_grad]
    return LabOptimizer(mats, rest, ocfg), None


def _load_base(path, cfg, dtype):
    path = Path(path)
    if not path.exists():
        raise InvalidState(f"sft stage needs an existing checkpoint; {path} not found")
    model = load_model(path, cfg=cfg.model, dtype=dtype)
    return model


def run_training(stage, cfg, init=None, out=None, on_record=None):
    """Train one stage and return a ``TrainResult``.

    ``stage="pretrain"`` starts from ``init_params``; ``stage="sft"`` requires
    ``init`` (checkpoint path or model) and trains on ``cfg.corpus`` while
    measuring forgetting on ``cfg.pretrain_corpus``. Records are taken at step 0,
    every ``eval_interval`` steps, and at the end. Training stops early on
    divergence (loss > first loss + 2 nats, or non-finite), marking the last
    record ``diverged``. With ``out``, the final model is saved there (LMOL plus
    JSON sidecar).
    """
    if stage not in ("pretrain", "sft"):
        raise InvalidParameter(f"stage must be 'pretrain' or 'sft', got {stage!r}")
    dtype = torch.float64 if cfg.f64 else torch.float32
    torch.manual_seed(substream(cfg.seed, stage, "torch"))
    if stage == "pretrain":
        model = init_params(cfg.model, seed=substream(cfg.seed, "init"), dtype=dtype)
        learn = stage_data(cfg.corpus, cfg, "pretrain")
        forget = learn
    else:
        if init is None:
            raise InvalidState("sft stage needs an existing checkpoint")
        if isinstance(init, (str, Path)):
            model = _load_base(init, cfg, dtype)
        else:
            if init.cfg != cfg.model:
                raise IncompatibleCheckpoint(f"model config {init.cfg} does not match {cfg.model}")
            model = copy.deepcopy(init).to(dtype)
        if cfg.pretrain_corpus is None:
            raise InvalidParameter("sft stage needs pretrain_corpus for the forgetting metric")
        learn = stage_data(cfg.corpus, cfg, "sft")
        # forgetting is measured on the pretraining distribution with the pretrain-stage split
        forget = stage_data(cfg.pretrain_corpus, replace_cfg(cfg, corrupt_alpha=0.0), "pretrain")
    model.train()
    opt, adapter = _build_optimizer(model, cfg)
    alpha, beta = rule_pair(cfg.algo)
    algo_label = f"lora({lora_rank(cfg.algo)})" if adapter is not None else cfg.algo
    records = []

    def record(step, diverged=False):
        f = evaluate(model, forget.val_batches)
        l_ = f if forget is learn else evaluate(model, learn.val_batches)
        rec = RunRecord(algo_label, alpha, beta, float(cfg.lr), int(step), int(cfg.seed), f, l_, diverged)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        return rec

    record(0)
    window = cfg.window or cfg.corpus.block_len
    stream = batch_stream(learn.train_blocks, window, cfg.batch_size, substream(cfg.seed, stage, "batches"))
    params = [p for g in opt.param_groups for p in g["params"]]
    first_loss = None
    diverged = False
    losses = []
    for step in range(cfg.steps):
        batch = next(stream)
        idx = torch.from_numpy(np.ascontiguousarray(batch.inputs))
        tgt = torch.from_numpy(np.ascontiguousarray(batch.targets))
        opt.zero_grad(set_to_none=True)
        loss = cross_entropy(model(idx), tgt)
        lv = float(loss.detach())
        losses.append(lv)
        if first_loss is None:
            first_loss = lv
        if not math.isfinite(lv) or lv > first_loss + DIVERGENCE_NATS:
            diverged = True
            log.warning("%s lr=%g seed=%d diverged at step %d (loss %.4g)", algo_label, cfg.lr, cfg.seed, step, lv)
            break
        loss.backward()
        if cfg.grad_clip is not None and cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.set_lr_scale(cosine_lr(step, cfg.steps, 1.0, cfg.warmup_frac))
        opt.step()
        done = step + 1
        if done % cfg.eval_interval == 0 or done == cfg.steps:
            rec = record(done)
            if not (math.isfinite(rec.forget_metric) and math.isfinite(rec.learn_metric)):
                diverged = True
                rec.diverged = True
                break
    if diverged and not records[-1].diverged:
        record(step, diverged=True)
    if adapter is not None:
        lora_fold(adapter)
    path = None
    if out is not None:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(path, model, meta={"stage": stage, "train": _jsonable(cfg.to_dict())})
    return TrainResult(model=model, records=records, checkpoint=path, diverged=diverged, train_losses=losses)


def replace_cfg(cfg, **changes):
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d.update(changes)
    return TrainConfig(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def sweep_grid(base, lrs, algos, seeds=(0,), pretrain=None, on_record=None):
    """SFT every (algo, lr, seed) from a shared pretrained model.

    ``pretrain`` is a checkpoint path, a model, or None (pretrain ``base`` with
    its own algo/lr first). Divergent runs stay in the table as rows with
    ``diverged=True``.
    """
    lrs, algos, seeds = list(lrs), list(algos), list(seeds)
    if not lrs or not algos or not seeds:
        raise InvalidParameter("lr, algo and seed grids must be non-empty")
    if pretrain is None:
        pre_cfg = replace_cfg(base, corpus=base.pretrain_corpus or base.corpus, pretrain_corpus=None)
        pretrain = run_training("pretrain", pre_cfg).model
    table = []
    for algo in algos:
        for lr in lrs:
            for seed in seeds:
                cfg = replace_cfg(base, algo=algo, lr=float(lr), seed=int(seed))
                table += run_training("sft", cfg, init=pretrain, on_record=on_record).records
    return table


# --- CSV ----------------------------------------------------------------------------

RECORD_HEADER = ("algo", "rule_alpha", "rule_beta", "lr", "step", "seed", "forget_metric", "learn_metric", "diverged")


def _fmt_float(v):
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def export_records(table, path):
    """CSV with ``RECORD_HEADER``; floats use the shortest round-trip repr, LF endings."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_HEADER)
            for r in table:
                w.writerow([
                    r.algo, _fmt_float(r.rule_alpha), _fmt_float(r.rule_beta), _fmt_float(r.lr), int(r.step),
                    int(r.seed), _fmt_float(r.forget_metric), _fmt_float(r.learn_metric),
                    "true" if r.diverged else "false",
                ])
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc}") from exc


def read_records(path):
    def num(s):
        return None if s == "" else float(s)

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if tuple(header or ()) != RECORD_HEADER:
            raise InvalidParameter(f"{path}: unexpected header {header}")
        for row in rd:
            out.append(RunRecord(row[0], num(row[1]), num(row[2]), float(row[3]), int(row[4]), int(row[5]),
                                 float(row[6]), float(row[7]), row[8] == "true"))
    return out


# --- probes -------------------------------------------------------------------------


@dataclass
class ProbeReport:
    activation_sparsity: dict  # layer -> mean input activation sparsity
    stable_rank: dict  # weight name -> stable rank
    mean_activation_sparsity: float
    mean_stable_rank: float


def probe(model, batches, seed=0):
    """Mean input activation sparsity per linear layer and stable rank per weight."""
    trace = ActivationTrace(seed=seed)
    was = model.training
    model.eval()
    with torch.no_grad():
        for inputs, _ in batches:
            forward(model, inputs, capture=True, trace=trace)
    model.train(was)
    sparsity = {n: float(activation_sparsity_rows(trace[n].inputs).mean()) for n in trace.names()}
    ranks = {}
    for n, mod in model.linear_layers().items():
        ranks[n] = stable_rank(mod.weight.detach().to(torch.float64).numpy())
    return ProbeReport(
        activation_sparsity=sparsity,
        stable_rank=ranks,
        mean_activation_sparsity=float(np.mean(list(sparsity.values()))),
        mean_stable_rank=float(np.mean(list(ranks.values()))),
    )
