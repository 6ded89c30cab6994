"""Command-line surface: synth, train, ablate, eval, rank.

Every subcommand is deterministic given --seed: file outputs are bitwise
reproducible. Exit codes: 0 success, 1 usage error, 2 data or validation
error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import checkpoint as ckpt
from . import data as data_mod
from . import trainer
from .errors import IoError, MMReidError
from .evaluation import format_ranking, rank as rank_query

_CONFIG_FIELDS = {
    "iterations": "iterations",
    "batch": "batch_size",
    "tau": "tau",
    "eta": "eta",
    "momentum": "momentum",
    "queue": "queue_capacity",
    "lr": "learning_rate",
    "wd_visual": "weight_decay_visual",
    "wd_text": "weight_decay_text",
    "clusters": "clusters",
    "mode": "mode",
    "seed": "seed",
    "text_warmup": "text_warmup",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")


def _add_train_flags(parser):
    parser.add_argument("--config", help="JSON file with defaults; flags override it")
    parser.add_argument("--iterations", type=int, default=None, help="training iterations (default 180)")
    parser.add_argument("--batch", type=int, default=None, help="mini-batch size (default 64)")
    parser.add_argument("--tau", type=float, default=None, help="visual loss temperature (default 0.07)")
    parser.add_argument("--eta", type=float, default=None, help="instance-loss weight in the text branch (default 10)")
    parser.add_argument("--momentum", type=float, default=None, help="key encoder momentum (default 0.999)")
    parser.add_argument("--queue", type=int, default=None, help="key queue capacity (default 4096)")
    parser.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-3)")
    parser.add_argument("--wd-visual", dest="wd_visual", type=float, default=None,
                        help="visual branch weight decay (default 1e-5)")
    parser.add_argument("--wd-text", dest="wd_text", type=float, default=None,
                        help="text branch weight decay (default 1e-7)")
    parser.add_argument("--clusters", type=int, default=None,
                        help="cluster count (default: train identity count)")
    parser.add_argument("--text-warmup", dest="text_warmup", type=int, default=None,
                        help="iterations of text-only warm start in total mode (default 0)")
    _add_seed(parser)


def _add_split_flags(parser):
    parser.add_argument("--train-frac", dest="train_frac", type=float, default=0.6,
                        help="fraction of identities used for training (default 0.6)")
    parser.add_argument("--query-frac", dest="query_frac", type=float, default=0.3,
                        help="fraction of eval items used as queries (default 0.3)")
    parser.add_argument("--no-camera-filter", dest="camera_filter", action="store_false",
                        help="keep same-identity same-camera gallery entries")


def _add_fusion(parser):
    parser.add_argument("--fusion-weight", dest="fusion_weight", type=float, default=0.5,
                        help="visual weight in the fused embedding (default 0.5)")


def build_parser() -> _Parser:
    parser = _Parser(prog="mmreid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic paired-modality dataset")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--samples", type=int, required=True, help="samples per identity")
    p.add_argument("--visual-dim", dest="visual_dim", type=int, default=32)
    p.add_argument("--text-dim", dest="text_dim", type=int, default=24)
    p.add_argument("--spread", type=float, default=1.0, help="prototype scale")
    p.add_argument("--noise", type=float, default=0.25, help="per-sample noise scale")
    p.add_argument("--cameras", type=int, default=2)
    _add_seed(p)
    p.add_argument("--out", required=True, help="output path (.jsonl, or .vtrd/.bin for binary)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one mode and write trace/checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=trainer.MODES, default=None)
    _add_train_flags(p)
    _add_split_flags(p)
    p.add_argument("--trace", help="loss trace CSV output path")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train all four modes and tabulate metrics")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    _add_split_flags(p)
    _add_fusion(p)
    p.add_argument("--out", help="metrics CSV output path")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or untrained encoders)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint path, or 'none' for untrained")
    _add_train_flags(p)
    _add_split_flags(p)
    _add_fusion(p)
    p.add_argument("--out", help="metrics CSV output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rank", help="write per-query ranking lists")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint path, or 'none' for untrained")
    _add_train_flags(p)
    _add_split_flags(p)
    _add_fusion(p)
    p.add_argument("--top", type=int, default=10, help="list length per query (default 10)")
    p.add_argument("--out", help="ranking list output path")
    p.set_defaults(func=_cmd_rank)

    return parser


def _train_config(args) -> trainer.TrainConfig:
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                file_values = json.load(handle)
        except OSError as exc:
            raise IoError(f"cannot read config {args.config}: {exc}") from None
        except ValueError as exc:
            raise IoError(f"config {args.config} is not valid JSON: {exc}") from None
        unknown = set(file_values) - set(_CONFIG_FIELDS)
        if unknown:
            raise IoError(f"config {args.config} has unknown keys {sorted(unknown)}")
    kwargs = {}
    for flag, field in _CONFIG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            value = file_values.get(flag)
        if value is not None:
            kwargs[field] = value
    try:
        return trainer.TrainConfig(**kwargs)
    except ValueError as exc:
        raise IoError(str(exc)) from None


def _load_split_dataset(args, seed: int) -> data_mod.FeatureDataset:
    dataset = data_mod.load_dataset(args.data)
    return data_mod.assign_splits(dataset, seed, args.train_frac, args.query_frac)


def _write_text(path, text: str) -> None:
    data_mod._atomic_write(path, text.encode("utf-8"))


def _metrics_csv(rows) -> str:
    lines = ["mode,mAP,rank1,rank5,rank10"]
    for mode, metrics in rows:
        lines.append(
            f"{mode},{metrics.mean_ap!r},{metrics.cmc[1]!r},"
            f"{metrics.cmc[5]!r},{metrics.cmc[10]!r}"
        )
    return "\n".join(lines) + "\n"


def _print_metrics_table(rows) -> None:
    print(f"{'mode':<12}{'mAP':>8}{'Rank-1':>8}{'Rank-5':>8}{'Rank-10':>9}")
    for mode, metrics in rows:
        print(
            f"{mode:<12}{metrics.mean_ap:>8.3f}{metrics.cmc[1]:>8.3f}"
            f"{metrics.cmc[5]:>8.3f}{metrics.cmc[10]:>9.3f}"
        )


def _trace_csv(trace) -> str:
    lines = ["iter,l_video,l_text,l_total"]
    for iteration, l_video, l_text, l_total in trace:
        lines.append(f"{iteration},{l_video!r},{l_text!r},{l_total!r}")
    return "\n".join(lines) + "\n"


def _state_for(args, config: trainer.TrainConfig, dataset) -> trainer.TrainState:
    if args.checkpoint == "none":
        return trainer.initialize(replace(config, mode="baseline"), dataset)
    return ckpt.load_checkpoint(args.checkpoint)


def _cmd_synth(args) -> int:
    spec = data_mod.SynthSpec(
        identities=args.identities,
        samples_per_identity=args.samples,
        visual_dim=args.visual_dim,
        text_dim=args.text_dim,
        cluster_spread=args.spread,
        noise=args.noise,
        cameras=args.cameras,
        seed=args.seed if args.seed is not None else 0,
    )
    dataset = data_mod.synth_generate(spec)
    data_mod.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.records)} records ({spec.identities} identities) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _train_config(args)
    dataset = _load_split_dataset(args, config.seed)
    if args.resume:
        state = ckpt.load_checkpoint(args.resume)
        state, trace = trainer.resume(state, dataset)
    else:
        state, trace = trainer.train(config, dataset)
    if args.trace:
        _write_text(args.trace, _trace_csv(trace))
    if args.out:
        ckpt.save_checkpoint(state, args.out)
    last = trace[-1][3] if trace else float("nan")
    print(f"mode={state.config.mode} iterations={state.iteration} final_loss={last:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    config = _train_config(args)
    dataset = _load_split_dataset(args, config.seed)
    rows = trainer.ablate(
        config, dataset, fusion_weight=args.fusion_weight,
        filter_same_camera=args.camera_filter,
    )
    _print_metrics_table(rows)
    if args.out:
        _write_text(args.out, _metrics_csv(rows))
    return 0


def _cmd_eval(args) -> int:
    config = _train_config(args)
    dataset = _load_split_dataset(args, config.seed)
    state = _state_for(args, config, dataset)
    metrics = trainer.evaluate_state(
        state, dataset, fusion_weight=args.fusion_weight,
        filter_same_camera=args.camera_filter,
    )
    rows = [(state.config.mode, metrics)]
    _print_metrics_table(rows)
    if args.out:
        _write_text(args.out, _metrics_csv(rows))
    return 0


def _cmd_rank(args) -> int:
    config = _train_config(args)
    dataset = _load_split_dataset(args, config.seed)
    state = _state_for(args, config, dataset)
    queries = trainer.embed_items(state, dataset, dataset.splits.query, args.fusion_weight)
    gallery = trainer.embed_items(state, dataset, dataset.splits.gallery, args.fusion_weight)
    lines = [
        format_ranking(rank_query(query, gallery, args.camera_filter), top=args.top)
        for query in sorted(queries, key=lambda item: item.id)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed the message already
        code = exc.code
        return code if isinstance(code, int) else 0
    try:
        return args.func(args)
    except MMReidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
