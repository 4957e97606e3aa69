"""Command-line interface.

Subcommands map onto pipeline stages plus whole-run, stats, and
validation helpers. Global flags may appear before or after the
subcommand. Exit codes: 0 success, 2 configuration problem, 3 provider
retries exhausted, 4 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .core import PipelineConfig, read_manifest, validate_manifest
from .errors import ConfigError, ProviderExhaustedError, StageError, SynthForgeError
from .pipeline import PipelineRun, stats_report

_STAGE_COMMANDS = {
    "prompts": "prompts",
    "generate": "images",
    "dhigh": "dhigh",
    "train-relabeler": "classifier",
    "relabel": "relabel",
    "export": "export",
}

_COMMAND_HELP = [
    ("prompts", "generate, judge, and diversity-filter prompts for every class"),
    ("generate", "synthesize images for the accepted prompts"),
    ("dhigh", "apply the dual similarity gate to build the high-confidence pair set"),
    ("train-relabeler", "train the patch classifier on the high-confidence pairs"),
    ("relabel", "relabel every synthesized image with the trained classifier"),
    ("export", "write the dataset: images tree, train list, manifest"),
    ("run", "execute all stages in order, resuming where a previous run stopped"),
    ("stats", "print per-class run statistics as JSON"),
    ("validate", "check an exported manifest for violations"),
]


def load_config(path: str | None) -> PipelineConfig:
    """Parse the JSON config document; relative data paths resolve against it."""
    if path is None:
        raise ConfigError("--config is required for this command")
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    config = PipelineConfig.from_dict(doc)
    updates = {}
    for attr in ("vocabulary_path", "templates_dir"):
        value = getattr(config, attr)
        if value is not None and not Path(value).is_absolute():
            updates[attr] = str(path.parent / value)
    if updates:
        config = dataclasses.replace(config, **updates)
    return config


def build_parser() -> argparse.ArgumentParser:
    def add_global_flags(target, suppress: bool):
        default = argparse.SUPPRESS if suppress else None
        target.add_argument("--config", default=default, help="path to the JSON config document")
        target.add_argument(
            "--run-dir", dest="run_dir", default=default, help="run directory (checkpoints, outputs)"
        )
        target.add_argument(
            "--seed",
            type=int,
            default=default,
            help="override the config's random seed",
        )
        target.add_argument(
            "--provider-mode",
            dest="provider_mode",
            choices=("remote", "simulated"),
            default=argparse.SUPPRESS if suppress else "simulated",
            help="talk to remote model endpoints or the offline simulator",
        )

    common = argparse.ArgumentParser(add_help=False)
    add_global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(
        prog="synthforge",
        description="Synthesize a weakly labeled image dataset from a class vocabulary.",
    )
    add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in _COMMAND_HELP:
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _require_run_dir(args) -> Path:
    if args.run_dir is None:
        raise ConfigError("--run-dir is required for this command")
    return Path(args.run_dir)


def _build_run(args) -> PipelineRun:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, random_seed=args.seed)
    return PipelineRun(config, _require_run_dir(args), provider_mode=args.provider_mode)


def _cmd_validate(args) -> int:
    run_dir = _require_run_dir(args)
    manifest_path = run_dir / "export" / "manifest.jsonl"
    if args.config is not None:
        config = load_config(args.config)
        if config.output_dir is not None:
            manifest_path = Path(config.output_dir) / "manifest.jsonl"
    if not manifest_path.is_file():
        raise ConfigError(f"no manifest at {manifest_path}; has the export stage run?")
    manifest = read_manifest(manifest_path)
    violations = validate_manifest(manifest)
    if violations:
        for violation in violations:
            print(violation, file=sys.stderr)
        print(f"manifest INVALID: {len(violations)} violations", file=sys.stderr)
        return 4
    print(f"manifest valid: {len(manifest.entries)} entries, 0 violations")
    return 0


def _dispatch(args) -> int:
    if args.command == "stats":
        print(json.dumps(stats_report(_require_run_dir(args)), indent=2, sort_keys=True))
        return 0
    if args.command == "validate":
        return _cmd_validate(args)
    run = _build_run(args)
    if args.command == "run":
        manifest = run.run()
        print(f"run complete: {len(manifest.entries)} images exported")
        print(f"manifest: {run.manifest_path}")
        print(f"train list: {run.export_dir / 'train_list.txt'}")
        return 0
    stage = _STAGE_COMMANDS[args.command]
    state = run.run_stage(stage)
    print(f"stage {stage} complete; counts: {json.dumps(state.counts, sort_keys=True)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProviderExhaustedError as exc:
        print(f"error: provider retries exhausted: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SynthForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
