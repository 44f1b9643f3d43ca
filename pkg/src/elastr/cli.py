# The MIT License (MIT)
# © 2025 elastr contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the "Software"), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

"""
Command-line pipeline: generate-data, train-teacher, rewire, train-w,
train-wd, finetune, eval, profile and dump-attention.

Every step reads and writes checkpoints whose stage tag enforces the order
teacher -> rewired -> width -> width_depth -> finetuned.
"""

# Global imports
import argparse
import copy
import io
import sys
from pathlib import Path
from types import SimpleNamespace
from typing import List, Optional

from pydantic import ValidationError

# Local imports
from . import __version__
from .attention import dump_attention
from .checkpoint import Checkpoint, CheckpointFormatError, StageOrderError, load_checkpoint, save_checkpoint
from .dataset import DatasetFormatError, Example, atomic_write_text, read_dataset, write_task
from .distill import (
    AccuracyTable,
    MissingMetricError,
    TrainedPair,
    TrainingDivergedError,
    check_plan,
    evaluate_all,
    finetune,
    mean_accuracy,
    select_model,
    train_stage,
    train_teacher,
)
from .hparams import load_hparams
from .logging import debug, logger, trace
from .metrics import MetricsLogger
from .model import AdaptiveModel
from .numerics import DimensionError, GradientError
from .profile import enumerate_grid, pareto, write_cost_csv
from .rewiring import PermutationError, rewire
from .schemas import ConfigurationError, DistillPlan, ModelConfig, SubNetSpec, SyntheticTask

MODES = {"conventional": "conventional", "inplace": "inplace", "us": "universally_slimmable"}

DOMAIN_ERRORS = (
    CheckpointFormatError,
    ConfigurationError,
    DatasetFormatError,
    DimensionError,
    GradientError,
    MissingMetricError,
    PermutationError,
    StageOrderError,
    TrainingDivergedError,
    ValidationError,
    ValueError,
    OSError,
)


def _multipliers(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="hparams.json", help="Path to hparams JSON")
    common.add_argument(
        "--local", action="store_true", help="Overlay hparams-local-run.json for a quick run"
    )
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--data", type=Path, help="Directory with train.tsv, dev.tsv, test.tsv")
    common.add_argument("--augmented-data", type=Path, help="Extra training lines, same format")
    common.add_argument("--width-list", type=_multipliers)
    common.add_argument("--depth-list", type=_multipliers)
    common.add_argument("--lambda1", type=float)
    common.add_argument("--lambda2", type=float)
    common.add_argument("--mode", choices=sorted(MODES), default="conventional")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--checkpoint", type=Path, help="Input checkpoint")
    common.add_argument("--out", type=Path, help="Output path")
    common.add_argument("--metrics", type=Path, help="Append training metrics to this CSV")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")
    common.add_argument("--trace", action="store_true", help="Enable trace logging")
    return common


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser for the CLI."""
    parser = argparse.ArgumentParser(
        prog="elastr", description="Train and profile width- and depth-adaptive transformers"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common_parser()
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    gen = subparsers.add_parser("generate-data", parents=[common], help="Write a synthetic task")
    gen.add_argument(
        "--task", choices=["majority_token", "first_last_match", "contains_bigram"]
    )
    gen.add_argument("--size", type=int, help="Total examples over the three splits")

    subparsers.add_parser("train-teacher", parents=[common], help="Train the full model on labels")
    rewire_parser = subparsers.add_parser(
        "rewire", parents=[common], help="Sort heads and neurons by importance"
    )
    rewire_parser.add_argument("--report", type=Path, help="Write importance scores as CSV")
    subparsers.add_parser("train-w", parents=[common], help="Distil the width-adaptive model")
    wd = subparsers.add_parser(
        "train-wd", parents=[common], help="Distil the width- and depth-adaptive model"
    )
    wd.add_argument(
        "--direct",
        action="store_true",
        help="Distil straight from the rewired teacher, skipping the width stage",
    )
    ft = subparsers.add_parser("finetune", parents=[common], help="Label-only fine-tuning")
    ft.add_argument(
        "--vanilla",
        action="store_true",
        help="Train every sub-network of the rewired teacher on labels only",
    )
    ev = subparsers.add_parser("eval", parents=[common], help="Accuracy of every sub-network")
    ev.add_argument("--split", choices=["dev", "test"], default="dev")
    prof = subparsers.add_parser("profile", parents=[common], help="Parameters and FLOPs per sub-network")
    prof.add_argument("--seq-len", type=int)
    prof.add_argument("--all-ops", action="store_true", help="Count element-wise FLOPs too")
    att = subparsers.add_parser("dump-attention", parents=[common], help="Write attention maps")
    att.add_argument("--tokens", required=True, help="Space-separated token ids")
    att.add_argument("--width", type=float, default=1.0)
    att.add_argument("--depth", type=float, default=1.0)
    return parser


def _first(*values):
    return next((v for v in values if v is not None), None)


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigurationError(f"{args.command} needs {', '.join(missing)}")


def _plan(
    args: argparse.Namespace,
    hp: SimpleNamespace,
    stage: str,
    cfg: ModelConfig | None = None,
    direct: bool = False,
) -> DistillPlan:
    lambdas = {
        "W": (hp.lambda1_w, hp.lambda2_w),
        "WD": (hp.lambda1_wd, hp.lambda2_wd),
    }.get(stage, (None, None))
    grid = cfg or hp.model_config
    plan = DistillPlan(
        stage=stage,
        lambda1=_first(args.lambda1, lambdas[0]),
        lambda2=_first(args.lambda2, lambdas[1]),
        width_list=_first(args.width_list, grid.width_list),
        depth_list=_first(args.depth_list, grid.depth_list),
        epochs=_first(args.epochs, hp.teacher_epochs if stage == "TEACHER" else hp.epochs),
        batch_size=_first(args.batch_size, hp.batch_size),
        base_lr=_first(args.lr, hp.learning_rate),
        mode=MODES[args.mode],
        seed=hp.seed,
        us_random_widths=hp.us_random_widths,
        max_grad_norm=hp.max_grad_norm,
        direct=direct,
    )
    check_plan(plan, grid)
    return plan


def _split(args: argparse.Namespace, cfg, name: str, augmented: bool = False) -> list[Example]:
    _require(args, "data")
    return read_dataset(
        args.data / f"{name}.tsv",
        cfg.vocab_size,
        cfg.num_classes,
        args.augmented_data if augmented else None,
    )


def _load(args: argparse.Namespace, *stages: str) -> Checkpoint:
    _require(args, "checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    if stages:
        ckpt.require_stage(args.command, *stages)
    return ckpt


def _grid(args: argparse.Namespace, hp: SimpleNamespace) -> tuple[tuple[float, ...], tuple[float, ...]]:
    return tuple(_first(args.width_list, hp.width_list)), tuple(_first(args.depth_list, hp.depth_list))


def format_accuracy_table(table: AccuracyTable) -> str:
    buf = io.StringIO()
    buf.write("m_w,m_d,accuracy\n")
    for spec, accuracy in table.items():
        buf.write(f"{spec.width_mult!r},{spec.depth_mult!r},{accuracy!r}\n")
    return buf.getvalue()


def _metrics(args: argparse.Namespace, stage: str) -> MetricsLogger | None:
    return MetricsLogger(args.metrics, stage=stage) if args.metrics is not None else None


def cmd_generate_data(args, hp) -> None:
    _require(args, "out")
    task = SyntheticTask(
        kind=_first(args.task, hp.task),
        vocab_size=hp.vocab_size,
        seq_len=hp.sequence_length,
        size=_first(args.size, hp.task_size),
        seed=hp.seed,
    )
    write_task(task, args.out)


def cmd_train_teacher(args, hp) -> None:
    _require(args, "out")
    plan = _plan(args, hp, "TEACHER")
    model = AdaptiveModel(hp.model_config, seed=hp.seed)
    train_teacher(
        model, plan, _split(args, model.cfg, "train", True), _split(args, model.cfg, "dev"), _metrics(args, "TEACHER")
    )
    save_checkpoint(Checkpoint(model, "teacher", rewired=False, seed=hp.seed), args.out)


def cmd_rewire(args, hp) -> None:
    ckpt = _load(args, "teacher", "rewired")
    report = rewire(ckpt.model, _split(args, ckpt.model.cfg, "dev"), _first(args.batch_size, hp.batch_size))
    if args.report is not None:
        report.to_csv(args.report)
    save_checkpoint(Checkpoint(ckpt.model, "rewired", rewired=True, seed=ckpt.seed), _first(args.out, args.checkpoint))


def _distil(args, hp, stage: str, teacher_stages: tuple[str, ...], out_stage: str) -> None:
    _require(args, "out")
    ckpt = _load(args, *teacher_stages)
    cfg = ckpt.model.cfg
    # a rewired teacher was only trained at full width
    plan = _plan(args, hp, stage, cfg, direct=stage == "WD" and ckpt.stage == "rewired")
    pair = TrainedPair.from_teacher(ckpt.model)
    student = train_stage(
        pair,
        plan,
        _split(args, cfg, "train", True),
        _split(args, cfg, "dev"),
        _metrics(args, stage),
    )
    save_checkpoint(Checkpoint(student, out_stage, rewired=ckpt.rewired, seed=hp.seed), args.out)


def cmd_train_w(args, hp) -> None:
    _distil(args, hp, "W", ("rewired",), "width")


def cmd_train_wd(args, hp) -> None:
    teachers = ("width", "rewired") if args.direct else ("width",)
    _distil(args, hp, "WD", teachers, "width_depth")


def cmd_finetune(args, hp) -> None:
    _require(args, "out")
    ckpt = _load(args, "rewired" if args.vanilla else "width_depth")
    cfg = ckpt.model.cfg
    plan = _plan(args, hp, "FINETUNE", cfg)
    train, dev = _split(args, cfg, "train"), _split(args, cfg, "dev")
    if args.vanilla:
        model = finetune(ckpt.model, plan, train, dev, _metrics(args, "FINETUNE"))
    else:
        widths, depths = cfg.width_list, cfg.depth_list
        before = (ckpt.model, evaluate_all(ckpt.model, dev, widths, depths))
        tuned = finetune(copy.deepcopy(ckpt.model), plan, train, dev, _metrics(args, "FINETUNE"))
        after = (tuned, evaluate_all(tuned, dev, widths, depths))
        model = select_model(before, after)
    save_checkpoint(Checkpoint(model, "finetuned", rewired=ckpt.rewired, seed=hp.seed), args.out)


def cmd_eval(args, hp) -> None:
    ckpt = _load(args)
    widths, depths = _grid(args, hp)
    table = evaluate_all(ckpt.model, _split(args, ckpt.model.cfg, args.split), widths, depths)
    text = format_accuracy_table(table)
    if args.out is not None:
        atomic_write_text(args.out, text)
    logger.info(f"Mean {args.split} accuracy {mean_accuracy(table):.4f} over {len(table)} sub-networks")
    sys.stdout.write(text)


def cmd_profile(args, hp) -> None:
    model = load_checkpoint(args.checkpoint).model if args.checkpoint else None
    cfg = model.cfg if model is not None else hp.model_config
    widths, depths = _grid(args, hp)
    report = enumerate_grid(cfg, args.seq_len, args.all_ops, widths, depths)
    accuracy = None
    if model is not None and args.data is not None:
        accuracy = evaluate_all(model, _split(args, cfg, "dev"), widths, depths)
        for row in pareto(report, accuracy):
            logger.info(f"Pareto {row.spec}: {row.flops} FLOPs, accuracy {row.accuracy:.4f}")
    if args.out is not None:
        write_cost_csv(report, args.out, accuracy)
    for row in report.rows:
        sys.stdout.write(f"{row.spec} params={row.params_transformer} flops={row.flops}\n")


def cmd_dump_attention(args, hp) -> None:
    _require(args, "out")
    ckpt = _load(args)
    tokens = [int(t) for t in args.tokens.split()]
    spec = SubNetSpec(width_mult=args.width, depth_mult=args.depth)
    dump_attention(ckpt.model, spec, tokens, args.out)


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train-teacher": cmd_train_teacher,
    "rewire": cmd_rewire,
    "train-w": cmd_train_w,
    "train-wd": cmd_train_wd,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "dump-attention": cmd_dump_attention,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI.

    Args:
        argv: Command line arguments (defaults to sys.argv[1:])

    Returns:
        int: Exit code
    """
    if argv is None:
        argv = sys.argv[1:]

    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    if args.trace:
        trace()
    elif args.debug:
        debug()

    try:
        hp = load_hparams(args.config, use_local_run_hparams=args.local)
        if args.seed is not None:
            hp.seed = args.seed
        COMMANDS[args.command](args, hp)
    except DOMAIN_ERRORS as e:
        message = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
        message = " ".join(str(message).split())
        logger.error(f"{args.command} failed: {message}")
        sys.stderr.write(f"error: {type(e).__name__}: {message}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
