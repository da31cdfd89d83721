"""
Main entry point for the confound-saliency pipeline.

This module parses the command line, loads the configuration, applies flag
overrides and dispatches to the pipeline commands. Exit codes: 0 success,
2 invalid input, 3 numeric failure.

    python -m src.main synth --n-per-group 512 --seed 7 --out runs/data
    python -m src.main pipeline --config config/config.yaml
"""

import argparse
import sys
from typing import Any, Callable, Dict, List, Optional

import structlog
from pydantic import ValidationError

from .pipeline import commands
from .utils.config_manager import LoggingConfig, PipelineConfig, initialize_config
from .utils.errors import EXIT_OK, EXIT_VALIDATION, ConfoundSaliencyError
from .utils.logging_setup import configure_logging

logger = structlog.get_logger(__name__)


def _synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    dataset = commands.cmd_synth(config.data.n_per_group, config.pipeline.seed, args.out)
    logger.info("synth.written", path=args.out, records=len(dataset))
    return EXIT_OK


def _train(args: argparse.Namespace, config: PipelineConfig) -> int:
    outcome = commands.cmd_train(args.data, args.out_model, config.train, config.pipeline.seed,
                                 gate=not args.no_gate)
    logger.info("train.written", path=args.out_model, accuracy=round(outcome.accuracy, 4))
    return EXIT_OK


def _confound_test(args: argparse.Namespace, config: PipelineConfig) -> int:
    outcome = commands.cmd_confound_test(args.data, args.model, config.glm, args.out)
    logger.info("confound_test.written", path=args.out, confounded=outcome.mask.confounded_count,
                mask=outcome.mask.as_bitstring())
    return EXIT_OK


def _saliency(args: argparse.Namespace, config: PipelineConfig) -> int:
    outcome = commands.cmd_saliency(args.data, args.model, args.mask, args.out, config.saliency)
    logger.info("saliency.written", path=args.out, mode=outcome.average.mode)
    return EXIT_OK


def _pipeline(args: argparse.Namespace, config: PipelineConfig) -> int:
    report = commands.cmd_pipeline(config)
    logger.info("pipeline.report", accuracy=round(report.training_accuracy, 4),
                confounded=report.confounded_feature_count,
                attenuation_ratio_bc=report.attenuation_ratio_bc,
                retention_ratio_ad=report.retention_ratio_ad)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML or JSON config file (default: config/config.yaml)")

    parser = argparse.ArgumentParser(
        prog="confound-saliency",
        description="Confounder-aware saliency maps for a small ConvNet on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Generate the synthetic dataset")
    synth.add_argument("--n-per-group", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out", default="data")
    synth.set_defaults(handler=_synth)

    train = sub.add_parser("train", parents=[common], help="Train the ConvNet")
    train.add_argument("--data", required=True)
    train.add_argument("--out-model", required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--l2", type=float)
    train.add_argument("--train-seed", type=int, help="Shuffle seed (default: derived from --seed)")
    train.add_argument("--accuracy-gate", type=float)
    train.add_argument("--no-gate", action="store_true", help="Do not fail when accuracy is below the gate")
    train.set_defaults(handler=_train)

    confound = sub.add_parser("confound-test", parents=[common], help="Per-feature GLM confound tests")
    confound.add_argument("--data", required=True)
    confound.add_argument("--model", required=True)
    confound.add_argument("--confounders", help="Comma-separated covariate columns")
    confound.add_argument("--alpha", type=float)
    confound.add_argument("--bonferroni", action="store_true", default=None)
    confound.add_argument("--out", required=True)
    confound.set_defaults(handler=_confound_test)

    saliency = sub.add_parser("saliency", parents=[common], help="Average saliency maps")
    saliency.add_argument("--data", required=True)
    saliency.add_argument("--model", required=True)
    saliency.add_argument("--mask", help="0/1 string, mask file or glm_report.json")
    saliency.add_argument("--out", required=True)
    saliency.add_argument("--per-subject", action="store_true", default=None)
    saliency.add_argument("--per-group", action="store_true", default=None)
    saliency.add_argument("--workers", type=int)
    saliency.set_defaults(handler=_saliency)

    pipeline = sub.add_parser("pipeline", parents=[common], help="Run every stage and write run_report.json")
    pipeline.add_argument("--seed", type=int)
    pipeline.add_argument("--output-dir")
    pipeline.set_defaults(handler=_pipeline)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Flag values by config section; unset flags are None and leave the config untouched."""
    def get(name: str) -> Any:
        return getattr(args, name, None)

    return {
        "pipeline": {"seed": get("seed"), "output_dir": get("output_dir")},
        "data": {"n_per_group": get("n_per_group")},
        "train": {
            "epochs": get("epochs"),
            "learning_rate": get("learning_rate"),
            "momentum": get("momentum"),
            "batch_size": get("batch_size"),
            "l2": get("l2"),
            "seed": get("train_seed"),
            "accuracy_gate": get("accuracy_gate"),
        },
        "glm": {"confounders": get("confounders"), "alpha": get("alpha"), "bonferroni": get("bonferroni")},
        "saliency": {"per_subject": get("per_subject"), "per_group": get("per_group"), "workers": get("workers")},
    }


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler: Callable[[argparse.Namespace, PipelineConfig], int] = args.handler
    try:
        configure_logging(LoggingConfig())
        manager = initialize_config(args.config)
        manager.apply_overrides(overrides_from_args(args))
        configure_logging(manager.get_logging_config())
        return handler(args, manager.config)
    except ConfoundSaliencyError as e:
        logger.error("command.failed", command=args.command, error=str(e), error_type=type(e).__name__,
                     stage=getattr(e, "stage", None), exit_code=e.exit_code)
        return e.exit_code
    except ValidationError as e:
        logger.error("command.invalid", command=args.command, error=str(e))
        return EXIT_VALIDATION
    except OSError as e:
        logger.error("command.io_error", command=args.command, path=e.filename, error=e.strerror or str(e))
        return EXIT_VALIDATION
    except ValueError as e:
        logger.error("command.invalid", command=args.command, error=str(e))
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
