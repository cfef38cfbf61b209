"""Command-line entry point: ``dualview <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from dualview.bench import bench_rerank
from dualview.data import (
    SyntheticSpec,
    generate_synthetic,
    mine_hard_negatives,
    read_dataset,
    write_binary_cache,
    write_dataset,
)
from dualview.errors import ConfigError, InputError, LoadError, NumericalError
from dualview.evaluation import (
    CosineBaseline,
    MLPBaseline,
    config_fingerprint,
    evaluate,
    format_table,
)
from dualview.losses import LossConfig
from dualview.model import ABLATIONS, DualView, ModelConfig
from dualview.nn.checkpoint import read_checkpoint
from dualview.training import TrainConfig, train

SEED_ENV = "DUALVIEW_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 42
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _coerce(field, raw: str):
    kind = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", "")
    if "float" in kind:
        return float(raw)
    if "int" in kind:
        return int(raw)
    return raw


def apply_overrides(obj, overrides: dict[str, str]):
    """Returns a copy of dataclass ``obj`` with matching ``overrides`` applied."""
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in overrides.items():
        if key in fields:
            try:
                changes[key] = _coerce(fields[key], raw)
            except ValueError:
                raise UsageError(f"bad value for {key}: {raw!r}") from None
    return dataclasses.replace(obj, **changes) if changes else obj


def _parse_sets(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _check_known(overrides, *targets):
    known = set()
    for t in targets:
        known |= {f.name for f in dataclasses.fields(t)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise UsageError(f"unknown --set keys: {unknown}")


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig()
    if getattr(args, "embed_dim", None):
        cfg = cfg.replace(embed_dim=args.embed_dim)
    if getattr(args, "ablation", None):
        cfg = cfg.replace(ablation=args.ablation)
    return apply_overrides(cfg, args.overrides)


def _train_config(args) -> TrainConfig:
    loss = apply_overrides(LossConfig(), args.overrides)
    cfg = TrainConfig(loss=loss, seed=args.seed)
    for flag, name in (("lr", "base_lr"), ("epochs", "epochs"), ("batch_size", "batch_size"),
                       ("accumulation_steps", "accumulation_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{name: value})
    return apply_overrides(cfg, args.overrides)


def load_model(path):
    """Loads either a dual-view or an MLP-baseline checkpoint."""
    header, _ = read_checkpoint(path)
    if header.get("kind") == "mlp":
        return MLPBaseline.load(path)
    return DualView.load(path)


def _emit(args, text: str, payload):
    out = json.dumps(payload, sort_keys=True) if args.format == "json" else text
    if getattr(args, "out", None) and args.command in ("eval", "ablate", "bench"):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    print(out)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args):
    spec = SyntheticSpec(
        mode=args.mode, n_queries=args.n_queries, n_candidates=args.n_candidates,
        embed_dim=args.embed_dim or 64, noise_sigma=args.noise_sigma, n_gold=args.n_gold,
        seed=args.seed, distractor_sigma=args.distractor_sigma, n_random=args.n_random,
    )
    spec = apply_overrides(spec, args.overrides)
    sets = generate_synthetic(spec)
    if args.out.endswith(".dvrk"):
        write_binary_cache(args.out, sets)
    else:
        write_dataset(args.out, sets)
    print(f"wrote {len(sets)} candidate sets to {args.out}", file=sys.stderr)


def cmd_mine_negatives(args):
    golds = np.load(args.gold_pool)
    pool = np.load(args.distractor_pool)
    mined = mine_hard_negatives(golds, pool, args.k)
    payload = {"indices": mined.indices.tolist(), "similarities": mined.similarities.tolist()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def _train_one(args, model_cfg, train_cfg, train_sets, val_sets, log_path=None):
    if args.model_type == "mlp":
        model = MLPBaseline(model_cfg.embed_dim, seed=args.seed)
    else:
        model = DualView(model_cfg, seed=args.seed)
    train(model, train_sets, val_sets, train_cfg, log_path=log_path)
    return model


def cmd_train(args):
    train_sets = read_dataset(args.train, require_gold=True)
    val_sets = read_dataset(args.val) if args.val else None
    model_cfg = _model_config(args)
    if not args.embed_dim:
        model_cfg = model_cfg.replace(embed_dim=train_sets[0].embed_dim)
        model_cfg = apply_overrides(model_cfg, args.overrides)
    model = _train_one(args, model_cfg, _train_config(args), train_sets, val_sets, args.log)
    model.save(args.out)


def cmd_rerank(args):
    model = load_model(args.model)
    lines = []
    for cs in read_dataset(args.data):
        if isinstance(model, DualView):
            sc = model.rerank(cs)
            scores = [
                {"doc_id": cs.doc_ids[i], "s_local": float(sc.s_local[i]),
                 "s_global": float(sc.s_global[i]), "gate": float(sc.gate[i]),
                 "s_fused": float(sc.s_fused[i])}
                for i in sc.ranking
            ]
            ranking = sc.ranking
        else:
            ranking = model.rank(cs)
            scores = [{"doc_id": cs.doc_ids[i]} for i in ranking]
        lines.append(json.dumps({"query_id": cs.query_id,
                                 "ranking": [cs.doc_ids[i] for i in ranking],
                                 "scores": scores}, sort_keys=True))
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _ranker_for(args):
    if args.baseline == "cosine":
        return CosineBaseline(), {"baseline": "cosine"}
    if not args.model:
        raise UsageError("eval needs --model or --baseline cosine")
    model = load_model(args.model)
    cfg = dataclasses.asdict(model.config) if isinstance(model, DualView) else {"kind": "mlp"}
    return model, cfg


def cmd_eval(args):
    ranker, cfg = _ranker_for(args)
    data = read_dataset(args.data)
    report = evaluate(ranker, data, args.k, label=args.model or args.baseline,
                      fingerprint=config_fingerprint(cfg))
    _emit(args, format_table([report]), report.as_dict())


def cmd_ablate(args):
    data = read_dataset(args.data)
    reports = []
    if args.model:
        base = DualView.load(args.model)
        for abl in ABLATIONS:
            variant = base.with_ablation(abl)
            reports.append(evaluate(variant, data, args.k, label=abl,
                                    fingerprint=config_fingerprint(dataclasses.asdict(variant.config))))
    elif args.train:
        train_sets = read_dataset(args.train, require_gold=True)
        val_sets = read_dataset(args.val) if args.val else None
        base_cfg = _model_config(args)
        if not args.embed_dim:
            base_cfg = apply_overrides(base_cfg.replace(embed_dim=train_sets[0].embed_dim),
                                       args.overrides)
        train_cfg = _train_config(args)
        args.model_type = "dualview"
        for abl in ABLATIONS:
            cfg = base_cfg.replace(ablation=abl)
            model = _train_one(args, cfg, train_cfg, train_sets, val_sets)
            reports.append(evaluate(model, data, args.k, label=abl,
                                    fingerprint=config_fingerprint(dataclasses.asdict(cfg))))
    else:
        raise UsageError("ablate needs --model CKPT (inference-time ablation) "
                         "or --train PATH (retrain every variant)")
    reports.append(evaluate(CosineBaseline(), data, args.k, label="cosine"))
    _emit(args, format_table(reports, "Ablation study"), [r.as_dict() for r in reports])


def cmd_bench(args):
    if args.model:
        model = load_model(args.model)
    else:
        model = DualView(ModelConfig(), seed=args.seed)
    dim = model.config.embed_dim if isinstance(model, DualView) else model.embed_dim
    if args.data:
        data = read_dataset(args.data)
    else:
        data = generate_synthetic(SyntheticSpec(
            "planted_similarity", n_queries=64, n_candidates=args.n_candidates,
            embed_dim=dim, seed=args.seed))
    report = bench_rerank(model, data, warmup=args.warmup, iters=args.iters, threads=args.threads)
    _emit(args, report.to_text(), report.as_dict())


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${SEED_ENV} or 42)")
    common.add_argument("--format", choices=("text", "json"), default="text",
                        help="report format")
    common.add_argument("--set", dest="sets", action="append", metavar="KEY=VALUE",
                        help="override any ModelConfig/TrainConfig/LossConfig/SyntheticSpec field")

    model_flags = _Parser(add_help=False)
    model_flags.add_argument("--embed-dim", type=int, help="embedding width")
    model_flags.add_argument("--ablation", choices=ABLATIONS, help="model variant")

    train_flags = _Parser(add_help=False)
    train_flags.add_argument("--val", help="validation JSONL used for checkpoint selection")
    train_flags.add_argument("--lr", type=float, help="peak learning rate")
    train_flags.add_argument("--epochs", type=int, help="training epochs")
    train_flags.add_argument("--batch-size", type=int, help="queries per micro-batch")
    train_flags.add_argument("--accumulation-steps", type=int,
                             help="micro-batches per optimizer step")

    parser = _Parser(prog="dualview", description="Dual-view cascaded reranker toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--mode", choices=("planted_similarity", "complementary_pair"),
                   default="planted_similarity")
    p.add_argument("--n-queries", type=int, default=2000)
    p.add_argument("--n-candidates", type=int, default=6)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--distractor-sigma", type=float, default=None)
    p.add_argument("--n-random", type=int, default=1)
    p.add_argument("--n-gold", type=int, default=2)
    p.add_argument("--out", required=True, help="output path (.jsonl, or .dvrk for the binary cache)")
    p.set_defaults(func=cmd_gen_synth, targets=(SyntheticSpec,))

    p = sub.add_parser("mine-negatives", parents=[common], help="cosine hard-negative mining")
    p.add_argument("--gold-pool", required=True, help=".npy array of gold embeddings")
    p.add_argument("--distractor-pool", required=True, help=".npy array of candidate negatives")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=cmd_mine_negatives, targets=())

    p = sub.add_parser("train", parents=[common, model_flags, train_flags], help="train a model")
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log")
    p.add_argument("--model-type", choices=("dualview", "mlp"), default="dualview")
    p.set_defaults(func=cmd_train, targets=(ModelConfig, TrainConfig, LossConfig))

    p = sub.add_parser("rerank", parents=[common], help="rank candidates and dump all scores")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write JSON lines here instead of stdout")
    p.set_defaults(func=cmd_rerank, targets=())

    p = sub.add_parser("eval", parents=[common], help="ranking metrics at K")
    p.add_argument("--model", help="checkpoint to evaluate")
    p.add_argument("--baseline", choices=("cosine",), help="evaluate a baseline instead")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval, targets=())

    p = sub.add_parser("ablate", parents=[common, model_flags, train_flags],
                       help="full / avg_fusion / no_global / no_local comparison")
    p.add_argument("--data", required=True, help="evaluation JSONL")
    p.add_argument("--model", help="evaluate one checkpoint under each ablation")
    p.add_argument("--train", help="retrain every variant on this JSONL")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_ablate, targets=(ModelConfig, TrainConfig, LossConfig))

    p = sub.add_parser("bench", parents=[common], help="batch-1 latency benchmark")
    p.add_argument("--model", help="checkpoint (default: randomly initialized full-size model)")
    p.add_argument("--data", help="dataset to cycle over (default: synthetic)")
    p.add_argument("--n-candidates", type=int, default=10)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--threads", type=int, default=1,
                   help="independent streams; >1 adds a separately labeled aggregate QPS")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_bench, targets=())
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
        args.overrides = _parse_sets(args.sets)
        _check_known(args.overrides, *args.targets)
        args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except (LoadError, InputError, FileNotFoundError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except NumericalError as exc:
        return _fail(type(exc).__name__, str(exc), 3)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
