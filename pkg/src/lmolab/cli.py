"""``lmolab`` command line.

Global flags: ``--seed`` (root of every random substream), ``--config`` (JSON
key-value file), ``--out`` (output directory), ``--f64`` (64-bit models).
Exit codes: 0 success, 2 validation failure, 1 runtime error.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ValidationError

log = logging.getLogger("lmolab")


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return data


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _train_config(args, conf, **over):
    from .harness import TrainConfig

    d = {k: v for k, v in conf.items() if k in TrainConfig.__dataclass_fields__}
    d.update({k: v for k, v in over.items() if v is not None})
    d["seed"] = args.seed
    if args.f64:
        d["f64"] = True
    return TrainConfig.from_dict(d)


# --- subcommands --------------------------------------------------------------------


def cmd_verify_norms(args, conf):
    from .norms import SUPPORTED_PAIRS, check_norm_inequalities, induced_norm, induced_norm_oracle
    from .seeding import rng as sub_rng

    trials = int(conf.get("trials", args.trials))
    rep = check_norm_inequalities(seed=args.seed, trials=trials)
    r = sub_rng(args.seed, "oracle")
    worst = 0.0
    count = int(conf.get("oracle_matrices", 500))
    for _ in range(count):
        a = r.standard_normal((int(r.integers(1, 6)), int(r.integers(1, 6))))
        for p in SUPPORTED_PAIRS:
            worst = max(worst, abs(induced_norm(a, p) - induced_norm_oracle(a, p)))
    summary = {
        "inequality_checks": rep.checks,
        "inequality_violations": rep.violations,
        "worst_relative_slack": rep.worst_slack,
        "worst_case": rep.worst_case,
        "oracle_matrices": count,
        "oracle_max_abs_diff": worst,
    }
    _write_json(args.out / "verify_norms.json", summary)
    print(json.dumps(summary, indent=2))
    return 0 if rep.violations == 0 and worst <= 1e-9 else 1


def cmd_pretrain(args, conf):
    from .harness import export_records, run_training

    cfg = _train_config(args, conf, algo=args.algo, lr=args.lr, steps=args.steps)
    res = run_training("pretrain", cfg, out=args.out / "pretrain.lmol", on_record=_print_record)
    export_records(res.records, args.out / "records.csv")
    return 0


def cmd_sft(args, conf):
    from .harness import export_records, run_training

    init = args.init or conf.get("init")
    if init is None:
        raise ValidationError("sft needs --init <checkpoint>")
    cfg = _train_config(args, conf, algo=args.algo, lr=args.lr, steps=args.steps)
    if cfg.pretrain_corpus is None:
        raise ValidationError("sft needs a 'pretrain_corpus' entry in --config")
    res = run_training("sft", cfg, init=init, out=args.out / "sft.lmol", on_record=_print_record)
    export_records(res.records, args.out / "records.csv")
    return 0


def cmd_grid(args, conf):
    from .harness import export_records, sweep_grid
    from .pareto import ParetoConfig, pareto_frontier

    lrs = conf.get("lrs", [1e-3, 3e-3, 1e-2])
    algos = conf.get("algos", ["sign", "orth"])
    seeds = conf.get("seeds", [args.seed])
    cfg = _train_config(args, conf)
    if cfg.pretrain_corpus is None:
        raise ValidationError("grid needs a 'pretrain_corpus' entry in --config")
    table = sweep_grid(cfg, lrs, algos, seeds, pretrain=args.init or conf.get("init"), on_record=_print_record)
    export_records(table, args.out / "records.csv")
    front = pareto_frontier(table, ParetoConfig(c=float(conf.get("c", 0.001))))
    export_records(front, args.out / "frontier.csv")
    return 0


def cmd_pareto(args, conf):
    from .harness import export_records, read_records
    from .pareto import ParetoConfig, pareto_frontier

    src = args.records or conf.get("records")
    if src is None:
        raise ValidationError("pareto needs --records <csv>")
    table = read_records(src)
    pc = ParetoConfig(c=args.c if args.c is not None else float(conf.get("c", 0.001)),
                      mode=args.mode or conf.get("mode", "loss"))
    front = pareto_frontier(table, pc)
    export_records(front, args.out / "frontier.csv")
    print(f"{len(front)} of {len(table)} records on the frontier")
    return 0


def cmd_corrupt(args, conf):
    from .corpus import CorpusSpec, corrupt_blocks, generate_corpus, read_corpus, write_corpus
    from .seeding import substream

    alpha = args.alpha if args.alpha is not None else float(conf.get("alpha", 0.5))
    if args.input:
        tokens, _ = read_corpus(args.input)
        block_len = args.block_len or int(conf.get("block_len", 128))
    else:
        spec = CorpusSpec(**{"seed": substream(args.seed, "corpus"), **conf.get("corpus", {})})
        tokens = generate_corpus(spec)
        block_len = args.block_len or spec.block_len
    blocks = corrupt_blocks(tokens, block_len, alpha, substream(args.seed, "corrupt"))
    out = args.out / "corpus.bin"
    write_corpus(out, np.concatenate([b.tokens for b in blocks]), blocks)
    n_bad = sum(b.corrupted for b in blocks)
    print(f"wrote {out} ({len(blocks)} blocks, {n_bad} corrupted)")
    return 0


def _load_ckpt(args):
    import torch

    from .checkpoint import load_model

    if not args.checkpoint:
        raise ValidationError("--checkpoint is required")
    return load_model(args.checkpoint, dtype=torch.float64 if args.f64 else None)


def cmd_eval_mem(args, conf):
    from .corpus import read_corpus
    from .memorization import MemEvalSpec, memorization_accuracy
    from .seeding import substream

    model = _load_ckpt(args)
    if not args.corpus:
        raise ValidationError("--corpus <file> with a block table sidecar is required")
    _, blocks = read_corpus(args.corpus)
    if blocks is None:
        raise ValidationError(f"{args.corpus} has no block table sidecar")
    spec = MemEvalSpec(
        a=args.a or int(conf.get("a", 64)),
        b=args.b or int(conf.get("b", 1)),
        subset=int(conf.get("subset", 1000)),
        split=args.split or conf.get("split", "clean"),
        seed=substream(args.seed, "mem-prompts"),
    )
    acc = memorization_accuracy(model, blocks, spec)
    result = {**asdict(spec), "accuracy": acc}
    _write_json(args.out / "memorization.json", result)
    print(json.dumps(result))
    return 0


def cmd_probe_acts(args, conf):
    from .corpus import CorpusSpec
    from .harness import TrainConfig, probe, stage_data

    model = _load_ckpt(args)
    spec = CorpusSpec(**conf.get("corpus", {}))
    cfg = TrainConfig(model=model.cfg, corpus=spec, seed=args.seed,
                      eval_batches=int(conf.get("eval_batches", 4)))
    rep = probe(model, stage_data(spec, cfg, "pretrain").val_batches, seed=args.seed)
    _write_json(args.out / "probe.json", asdict(rep))
    print(f"mean activation sparsity {rep.mean_activation_sparsity:.6f}  mean stable rank {rep.mean_stable_rank:.6f}")
    return 0


def cmd_forgetting_sim(args, conf):
    from .forgetting import matched_rule_sweep

    out = {}
    for a1 in conf.get("alpha1", [1.0, 2.0]):
        a1 = float(a1)
        summary, _ = matched_rule_sweep(
            a1,
            n=int(conf.get("n", 32)),
            m=int(conf.get("m", 32)),
            instances=int(conf.get("instances", 100)),
            seed=args.seed,
            batch=int(conf.get("batch", 4)),
            csv_path=args.out / f"forgetting_alpha{a1:g}.csv",
        )
        out[f"{a1:g}"] = {
            "instances": summary.instances,
            "passed": summary.passed,
            "pass_fraction": summary.pass_fraction,
            "median_ratio": float(np.median(summary.ratios)),
            "max_ratio": float(np.max(summary.ratios)),
            "max_budget_error": summary.max_budget_error,
        }
        print(f"alpha1={a1:g}: {summary.passed}/{summary.instances} within {summary.threshold}x of the grid minimum")
    _write_json(args.out / "forgetting_summary.json", out)
    return 0


def _print_record(rec):
    print(f"{rec.algo} lr={rec.lr:g} step={rec.step} forget={rec.forget_metric:.4f} learn={rec.learn_metric:.4f}"
          + (" DIVERGED" if rec.diverged else ""), flush=True)


COMMANDS = {
    "verify-norms": cmd_verify_norms,
    "pretrain": cmd_pretrain,
    "sft": cmd_sft,
    "grid": cmd_grid,
    "pareto": cmd_pareto,
    "corrupt": cmd_corrupt,
    "eval-mem": cmd_eval_mem,
    "probe-acts": cmd_probe_acts,
    "forgetting-sim": cmd_forgetting_sim,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all random substreams")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--f64", action="store_true", help="use 64-bit models")
    p = argparse.ArgumentParser(prog="lmolab", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify-norms", parents=[common], help="fuzz norm inequalities and oracle equivalence")
    s.add_argument("--trials", type=int, default=1000)
    for name in ("pretrain", "sft", "grid"):
        s = sub.add_parser(name, parents=[common], help=f"{name} run(s)")
        s.add_argument("--algo")
        s.add_argument("--lr", type=float)
        s.add_argument("--steps", type=int)
        s.add_argument("--init", help="pretrained checkpoint (sft, grid)")
    s = sub.add_parser("pareto", parents=[common], help="robust frontier of a records CSV")
    s.add_argument("--records")
    s.add_argument("--c", type=float)
    s.add_argument("--mode", choices=("loss", "accuracy"))
    s = sub.add_parser("corrupt", parents=[common], help="block-shuffle a corpus")
    s.add_argument("--input", help="existing corpus file (default: generate from config 'corpus')")
    s.add_argument("--alpha", type=float)
    s.add_argument("--block-len", type=int)
    s = sub.add_parser("eval-mem", parents=[common], help="exact-match memorization accuracy")
    s.add_argument("--checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--a", type=int)
    s.add_argument("--b", type=int)
    s.add_argument("--split", choices=("clean", "corrupted", "all"))
    s = sub.add_parser("probe-acts", parents=[common], help="activation sparsity and stable rank")
    s.add_argument("--checkpoint")
    sub.add_parser("forgetting-sim", parents=[common], help="budget-matched forgetting sweep")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = _load_config(args.config)
        args.out = Path(args.out)
        args.out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        code = COMMANDS[args.command](args, conf)
        log.info("%s finished in %.1fs", args.command, time.time() - t0)
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
