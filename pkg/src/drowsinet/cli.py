"""
Command-line surface of the drowsiness pipeline.

Every command reads a JSON RunConfig (``--config``), applies flag overrides and
writes its artifacts under the work directory. Failures print a single
``error[<code>]: <message>`` line on stderr and exit with status 1.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from .errors import DrowsinetError
from .models.config import MODEL_NAMES, RunConfig, load_run_config
from .nodes.evaluation import THRESHOLDS_FILE, run_evaluate, run_tune, summarize_evaluation, summarize_tuning
from .nodes.generation import run_generate, summarize_manifest
from .nodes.preparation import run_prepare, summarize_split
from .nodes.reporting import run_report
from .nodes.training import run_dir_for, run_train, summarize_training
from .tools.classifiers import parse_run, run_name
from .utils.monitoring import configure_logging, setup_langsmith_env
from .workflow import DrowsinessPipeline

logger = logging.getLogger(__name__)

WORKDIR_ENV = "DROWSINET_WORKDIR"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="top-level seed; every module seed is derived from it")
    common.add_argument("--workdir", default=argparse.SUPPRESS, help="directory for all outputs")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(
        prog="drowsinet", parents=[common],
        description="Synthetic drowsiness corpus, window classifiers and evaluation reports",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("generate", parents=[common], help="write the synthetic frame corpus")

    prepare = commands.add_parser("prepare", parents=[common], help="window, split and normalize the corpus")
    prepare.add_argument("--dump-features", action="store_true",
                         help="also write the 108 statistics per sample as CSV")

    train = commands.add_parser("train", parents=[common], help="fit one model")
    train.add_argument("model", help=f"one of {', '.join(MODEL_NAMES)}")
    train.add_argument("--smote", action="store_true", help="oversample the training split first")

    tune = commands.add_parser("tune", parents=[common], help="choose thresholds on validation scores")
    tune.add_argument("run", help="model name, optionally with the +smote suffix")
    tune.add_argument("--objective", choices=["youden", "literal"], default=None)

    evaluate = commands.add_parser("evaluate", parents=[common], help="score the test split")
    evaluate.add_argument("run", help="model name, optionally with the +smote suffix")
    evaluate.add_argument("--thresholds", nargs="?", const="", default=None, metavar="PATH",
                          help="apply tuned thresholds; defaults to the run's thresholds.json")

    commands.add_parser("report", parents=[common], help="consolidate every evaluated run")

    run_all = commands.add_parser("run-all", parents=[common], help="generate through report in one go")
    run_all.add_argument("--models", nargs="+", default=None, metavar="MODEL")
    run_all.add_argument("--smote", action="store_true", help="train every model on a SMOTE-balanced split")
    run_all.add_argument("--no-smote-run", action="store_true",
                         help="skip the extra conv2d-raw+smote run")
    run_all.add_argument("--no-thresholds", action="store_true",
                         help="evaluate with argmax decisions only")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load the config file and apply environment and flag overrides."""
    config = load_run_config(getattr(args, "config", None))
    update = {}
    if hasattr(args, "workdir"):
        update["workdir"] = args.workdir
    elif "workdir" not in config.model_fields_set and os.getenv(WORKDIR_ENV):
        update["workdir"] = os.environ[WORKDIR_ENV]

    if args.command == "prepare" and args.dump_features:
        update["dump_features"] = True
    if args.command == "train" and args.smote:
        update["smote_enabled"] = True
    if args.command == "tune" and args.objective:
        update["threshold_objective"] = args.objective
    if args.command == "run-all":
        if args.models:
            update["models"] = args.models
        if args.smote:
            update["smote_enabled"] = True
        if args.no_smote_run:
            update["include_smote_run"] = False
        if args.no_thresholds:
            update["tune_thresholds"] = False

    config = RunConfig.model_validate({**config.model_dump(), **update})
    if hasattr(args, "seed"):
        config = config.with_top_seed(args.seed)
    return config


def _validated_run(run: str, smote_enabled: bool = False) -> str:
    model, smote = parse_run(run)
    return run_name(model, smote or smote_enabled)


def execute(args: argparse.Namespace, config: RunConfig) -> int:
    if args.command == "generate":
        lines = summarize_manifest(run_generate(config))
    elif args.command == "prepare":
        lines = summarize_split(run_prepare(config))
    elif args.command == "train":
        lines = summarize_training(run_train(config, _validated_run(args.model, config.smote_enabled)))
    elif args.command == "tune":
        lines = summarize_tuning(run_tune(config, _validated_run(args.run, config.smote_enabled)))
    elif args.command == "evaluate":
        run = _validated_run(args.run, config.smote_enabled)
        path = args.thresholds
        if path == "":
            path = run_dir_for(config, run) / THRESHOLDS_FILE
        lines = summarize_evaluation(run_evaluate(config, run, path))
    elif args.command == "report":
        lines = [run_report(config).read_text(encoding="utf-8")]
    else:
        pipeline = DrowsinessPipeline()
        result = pipeline.run(config)
        print(pipeline.get_summary(result))
        if result.get("processing_errors"):
            code = result.get("error_code") or "error"
            print(f"error[{code}]: {result['processing_errors'][-1]}", file=sys.stderr)
            return 1
        return 0

    for line in lines:
        print(line)
    return 0


def fail(code: str, message: str) -> int:
    logger.debug("command failed", exc_info=True)
    print(f"error[{code}]: {message}", file=sys.stderr)
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "log_level", "WARNING"))
    setup_langsmith_env()

    try:
        config = resolve_config(args)
        return execute(args, config)
    except DrowsinetError as e:
        return fail(e.code, str(e))
    except ValidationError as e:
        return fail("config", f"{e.error_count()} invalid field(s): " + "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ))
    except OSError as e:
        return fail("io", str(e))


if __name__ == "__main__":
    sys.exit(main())
