import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

# Configure logging
log_directory = os.path.join(os.path.dirname(os.path.abspath(__file__)), "logs")
os.makedirs(log_directory, exist_ok=True)
log_file_path = os.path.join(log_directory, "kws.log")

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(),
        logging.FileHandler(log_file_path)
    ]
)
logger = logging.getLogger("kws_cli")

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from components.dataset import scan_dataset, synthesize_tone_corpus, write_index_cache
from components.evaluator import evaluate, evaluate_sweep, sweep_runs
from components.gradcheck_suite import SCOPES, all_passed, format_results, run_gradcheck
from components.model_counter import DEFAULT_FRAMES, ModelCounter
from components.report_generator import eval_report_frame, format_eval_summary
from components.trainer import train_runs
from utils.audio_frontend import mix_at_snr
from utils.config_loader import SPEECH_COMMANDS_KEYWORDS, TrainConfig, load_train_config
from utils.errors import KwsError, NumericError, UsageError
from utils.excel_generator import save_eval_workbook
from utils.wav_io import read_wav, write_wav


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise UsageError(f"Invalid SNR list: {text}")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="kws_cli", description="LOVO keyword spotting toolkit")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", parser_class=UsageParser)

    prepare = commands.add_parser("prepare", help="Scan a dataset and write its index cache")
    prepare.add_argument("root")
    prepare.add_argument("--keywords", default=",".join(SPEECH_COMMANDS_KEYWORDS))
    prepare.add_argument("--rescan", action="store_true", help="Ignore an existing index cache")
    prepare.add_argument("--synthetic-tones", action="store_true",
                         help="First write a synthetic tone corpus into ROOT")
    prepare.add_argument("--classes", type=int, default=3)
    prepare.add_argument("--clips", type=int, default=100, help="Clips per tone class")
    prepare.add_argument("--seed", type=int, default=0)

    train = commands.add_parser("train", help="Train with the LOVO objective")
    train.add_argument("config")
    train.add_argument("--seed", type=int)
    train.add_argument("--repeats", type=int)

    evaluate_cmd = commands.add_parser("eval", help="Clean and noise-grid accuracy of a checkpoint")
    evaluate_cmd.add_argument("checkpoint", help="Checkpoint, run directory or repeat sweep directory")
    evaluate_cmd.add_argument("config")
    evaluate_cmd.add_argument("--snr-grid", type=_float_list, help="Comma-separated SNRs in dB (empty for clean only)")
    evaluate_cmd.add_argument("--seed", type=int)
    evaluate_cmd.add_argument("--xlsx", help="Also write an Excel workbook of the grid")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference gradient checks")
    gradcheck.add_argument("scope", nargs="?", default="all", choices=SCOPES)
    gradcheck.add_argument("--seed", type=int, default=0)

    count = commands.add_parser("count", help="Parameters and FLOPs of a model")
    count.add_argument("model")
    count.add_argument("--frames", type=int, default=DEFAULT_FRAMES)

    mix = commands.add_parser("mix", help="Mix a noise recording into a clip at a given SNR")
    mix.add_argument("input")
    mix.add_argument("noise")
    mix.add_argument("snr_db", type=float)
    mix.add_argument("output")
    mix.add_argument("--seed", type=int, default=0)
    return parser


def _with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    values = {k: v for k, v in overrides.items() if v is not None}
    if not values:
        return config
    return dataclasses.replace(config, **values)


def cmd_prepare(args) -> int:
    root = Path(args.root)
    keywords = [k.strip() for k in args.keywords.split(",") if k.strip()]
    if args.synthetic_tones:
        keywords = synthesize_tone_corpus(root, num_classes=args.classes, clips_per_class=args.clips, seed=args.seed)
    index = scan_dataset(root, keywords, rescan=args.rescan or args.synthetic_tones)
    path = write_index_cache(index)
    counts = index.counts()
    print(f"Indexed {len(index.entries)} files into {path}")
    print(f"  train {counts['train']}, val {counts['val']}, test {counts['test']}")
    print(f"  classes: {', '.join(index.classes)}")
    return 0


def cmd_train(args) -> int:
    config = _with_overrides(load_train_config(args.config), seed=args.seed, repeats=args.repeats)
    results = train_runs(config)
    for result in results:
        last = result.history[-1]
        print(f"{result.run_dir}: {len(result.history)} steps, final L_total {last.l_total:.4f}, "
              f"checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    config = _with_overrides(load_train_config(args.config), seed=args.seed)
    reports = {}
    if sweep_runs(args.checkpoint):
        runs, aggregate_path = evaluate_sweep(args.checkpoint, config, args.snr_grid)
        for name, report in runs.items():
            reports[name] = eval_report_frame(report)
            print(format_eval_summary(reports[name], title=f"EVALUATION REPORT: {name}"))
        aggregate = pd.read_csv(aggregate_path)
        print(f"Aggregate written to {aggregate_path}")
    else:
        report = evaluate(args.checkpoint, config, args.snr_grid)
        reports[Path(report.checkpoint).name] = eval_report_frame(report)
        print(format_eval_summary(reports[Path(report.checkpoint).name]))
        aggregate = None
    if args.xlsx:
        path = save_eval_workbook(args.xlsx, reports, aggregate)
        print(f"Workbook written to {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.scope, seed=args.seed)
    print(format_results(results))
    if not all_passed(results):
        raise NumericError(f"{sum(not r.passed for r in results)} gradient checks failed")
    return 0


def cmd_count(args) -> int:
    if args.frames < 1:
        raise UsageError(f"--frames must be positive, got {args.frames}")
    print(ModelCounter.format_report(ModelCounter.report(args.model, args.frames)))
    return 0


def cmd_mix(args) -> int:
    signal = read_wav(args.input)
    noise = read_wav(args.noise, downmix=True, resample=True)
    mixed = mix_at_snr(signal, noise, args.snr_db, np.random.default_rng(args.seed))
    write_wav(args.output, mixed)
    print(f"Wrote {args.output} ({args.snr_db:g} dB SNR)")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "count": cmd_count,
    "mix": cmd_mix,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        if not args.command:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        return COMMANDS[args.command](args)
    except KwsError as e:
        logger.error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
