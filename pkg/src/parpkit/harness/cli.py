"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 run error.  Outputs go under
``$PARPKIT_OUT`` (default ``./runs``) unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from ..analytics import layerwise_sparsity
from ..autonet.params import ConfigurationError, ParamStore
from ..methods import METHODS
from ..pruning import BindingError, MaskFormatError, load_mask
from ..tasks.pretrain import OBJECTIVES
from .config import ExperimentConfig, PretrainSpec
from .experiments import RunError, iou_report, report, run, run_dir
from .records import RecordParseError, RunRecord
from .suite import output_root

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--out", help="output root (default $PARPKIT_OUT or ./runs)")
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds")
    p.add_argument("--steps", type=int, help="finetuning updates N")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--interval", type=int, help="PARP re-prune interval n")
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--from", dest="checkpoint", help="pretrained checkpoint (.npz)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parpkit", description="Sparse finetuning experiments on toy sequence tasks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="pretrain an encoder")
    _common(p)
    p.add_argument("--objective", choices=OBJECTIVES, default="masked-recon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretrain-steps", type=int)

    p = sub.add_parser("finetune", help="dense finetuning")
    _common(p)
    p.add_argument("--task", default="lang-00")

    p = sub.add_parser("prune", help="discover a mask and finetune the subnetwork")
    _common(p)
    p.add_argument("--method", choices=("rp", "mpi", "omp", "imp"), required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--task", default="lang-00")

    p = sub.add_parser("parp", help="prune-adjust-re-prune")
    _common(p)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--start-sparsity", type=float, help="run progressive PARP from this sparsity")
    p.add_argument("--initial-mask", help="mask file, or 'mpi' / 'rp' (default mpi)")
    p.add_argument("--task", default="lang-00")

    p = sub.add_parser("sweep", help="methods x sparsities x seeds")
    _common(p)
    p.add_argument("--methods", type=_names, required=True)
    p.add_argument("--sparsities", type=_floats, required=True)
    p.add_argument("--task", default="lang-00")

    p = sub.add_parser("transfer", help="cross-task OMP mask transfer matrix")
    _common(p)
    p.add_argument("--mode", choices=("frozen", "parp"), required=True)
    p.add_argument("--tasks", type=_names, default=["lang-00", "lang-01", "lang-02"])
    p.add_argument("--sparsity", type=float, default=0.5)

    p = sub.add_parser("joint", help="one mask shared by several tasks")
    _common(p)
    p.add_argument("--tasks", type=_names, required=True)
    p.add_argument("--method", choices=("omp", "parp"), default="parp")
    p.add_argument("--sparsity", type=float, default=0.5)

    p = sub.add_parser("ablation", help="PARP from RP vs MPI initial masks")
    _common(p)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--task", default="lang-00")

    p = sub.add_parser("analyze", help="mask analytics")
    asub = p.add_subparsers(dest="what", required=True, parser_class=_Parser)
    a = asub.add_parser("iou", help="IOU and overlap matrices over mask files")
    a.add_argument("masks", nargs="+")
    a.add_argument("--reference", help="pretrained checkpoint; adds MPI and RP rows")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="directory for iou.csv and overlap.csv")
    a = asub.add_parser("layerwise", help="per-layer sparsity of a mask file")
    a.add_argument("mask")
    a = asub.add_parser("trajectory", help="re-prune IOU trajectory of a run record")
    a.add_argument("record")

    p = sub.add_parser("report", help="merge run records into long-format tables")
    p.add_argument("pattern", help="glob of record files or run directories")
    p.add_argument("--out", help="directory for runs.csv, metrics.csv, trajectory.csv")
    return parser


def _config(args, **fields) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    train = {}
    for flag, key in (("steps", "total_updates"), ("lr", "peak_lr"), ("batch_size", "batch_size"),
                      ("interval", "prune_interval"), ("optimizer", "optimizer"),
                      ("eval_interval", "eval_interval")):
        if getattr(args, flag) is not None:
            train[key] = getattr(args, flag)
    if train:
        fields["train"] = base.train.replace(**train)
    if args.seeds is not None:
        fields["seeds"] = args.seeds
    if args.checkpoint is not None:
        fields["checkpoint"] = args.checkpoint
    out = args.out or (base.out_dir if args.config else str(output_root()))
    return base.replace(out_dir=out, **fields)


def _summary(record: RunRecord, root: Path) -> dict:
    out = {"kind": record.kind, "digest": record.digest, "dir": str(root), "runs_consumed": record.runs_consumed}
    if record.final:
        out["final"] = record.final
    elif record.kind == "sweep" and len(record.children) == 1:
        out["final"] = RunRecord.load(root / record.children[0] / "record.json").final
    for key in ("off_diagonal_mean", "deltas", "checkpoint"):
        if key in record.extras:
            out[key] = record.extras[key]
    return out


def _execute(args) -> int:
    cmd = args.command
    if cmd == "analyze":
        return _analyze(args)
    if cmd == "report":
        rep = report(args.pattern, args.out)
        print(json.dumps({"records": len(rep.runs), "out": args.out}))
        return EXIT_OK
    if cmd == "pretrain":
        spec = {"objective": args.objective, "seed": args.seed}
        if args.pretrain_steps is not None:
            spec["steps"] = args.pretrain_steps
        cfg = _config(args, kind="pretrain")
        cfg = cfg.replace(pretrain=PretrainSpec(**{**asdict(cfg.pretrain), **spec}))
    elif cmd == "finetune":
        cfg = _config(args, kind="sweep", methods=("dense",), tasks=(args.task,), sparsities=(0.0,))
    elif cmd == "prune":
        cfg = _config(args, kind="sweep", methods=(args.method,), tasks=(args.task,), sparsities=(args.sparsity,))
    elif cmd == "parp":
        extra = {}
        if args.initial_mask is not None:
            extra["initial_mask"] = args.initial_mask
        method = "parp"
        if args.start_sparsity is not None:
            method, extra["start_sparsity"] = "parp-p", args.start_sparsity
        cfg = _config(args, kind="sweep", methods=(method,), tasks=(args.task,), sparsities=(args.sparsity,), **extra)
    elif cmd == "sweep":
        unknown = [m for m in args.methods if m not in METHODS]
        if unknown:
            raise ConfigurationError(f"methods: unknown method id {unknown[0]!r}; expected one of {METHODS}")
        cfg = _config(args, kind="sweep", methods=tuple(args.methods), tasks=(args.task,),
                      sparsities=tuple(args.sparsities))
    elif cmd == "transfer":
        cfg = _config(args, kind="transfer-matrix", methods=("omp",), tasks=tuple(args.tasks),
                      sparsities=(args.sparsity,), mode=args.mode)
    elif cmd == "joint":
        cfg = _config(args, kind="joint", methods=(args.method,), tasks=tuple(args.tasks), sparsities=(args.sparsity,))
    else:
        cfg = _config(args, kind="ablation", methods=("parp",), tasks=(args.task,), sparsities=(args.sparsity,))
    record = run(cfg)
    print(json.dumps(_summary(record, run_dir(cfg)), sort_keys=True))
    return EXIT_OK


def _analyze(args) -> int:
    if args.what == "iou":
        ref = None
        if args.reference:
            if not Path(args.reference).exists():
                raise ConfigurationError(f"reference: file not found: {args.reference}")
            ref = ParamStore.load(args.reference)
        masks = []
        stems = [Path(p).stem for p in args.masks]
        for path, stem in zip(args.masks, stems):
            if not Path(path).exists():
                raise ConfigurationError(f"masks: file not found: {path}")
            label = stem if stems.count(stem) == 1 else f"{Path(path).parent.name}/{stem}"
            masks.append((label, load_mask(path, ref)))
        ious, overlaps = iou_report(masks, ref, seed=args.seed, out=args.out)
        sys.stdout.write(ious.to_csv())
        sys.stdout.write(overlaps.to_csv())
    elif args.what == "layerwise":
        if not Path(args.mask).exists():
            raise ConfigurationError(f"mask: file not found: {args.mask}")
        sys.stdout.write(layerwise_sparsity(load_mask(args.mask)).to_csv())
    else:
        path = Path(args.record)
        if path.is_dir():
            path = path / "record.json"
        rec = RunRecord.load(path)
        for i, v in enumerate(rec.trajectory, 1):
            print(f"{i},{v!r}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # bad flags (exit 1) or --help (exit 0)
        return int(exc.code or 0)
    try:
        return _execute(args)
    except (ConfigurationError, BindingError, MaskFormatError, RecordParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except Exception as exc:  # anything else is a failed run, not a bad config
        print(f"run error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
