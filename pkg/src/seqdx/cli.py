"""Command line entry point: ``seqdx <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
runtime failures. Every run writes its resolved configuration as
``config.ini`` next to its outputs; wall-clock details go to
``metadata.json`` only.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .config import RunConfig
from .env import ConfigurationError
from .io import RecordFormatError, load_dataset, save_dataset
from .metrics import evaluate, run_episodes
from .policies import BayesOracle, Featurizer, ParametricPolicy
from .protocol import load_template
from .remote import RemotePolicy
from .runner import JsonlLogWriter, format_trace, trace_log_entries
from .synth import generate_dataset
from .trainer import Checkpoint, Trainer, hypothesis_calibration

logger = logging.getLogger("seqdx")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = False):
    p.add_argument("--config", help="config file or preset name (e.g. presets/one-decisive-test)")
    p.add_argument("--seed", type=int, help="overrides [run] seed and [trainer] seed")
    p.add_argument("--out", required=out_required, help="output directory")


def _backend_args(p: argparse.ArgumentParser):
    p.add_argument("--backend", choices=("checkpoint", "oracle", "remote"), default="checkpoint")
    p.add_argument("--checkpoint", default="best", help="checkpoint file, or best/last under <out>/checkpoints")
    p.add_argument("--tau", type=float, default=0.9, help="oracle confidence threshold")
    p.add_argument("--data", help="dataset directory (default: regenerate from the config)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqdx", description="Sequential diagnosis agents: data, training and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as train/val/test JSONL")
    _common(p, out_required=True)

    p = sub.add_parser("train", help="run the training loop; writes checkpoints and a metric CSV")
    _common(p, out_required=True)
    p.add_argument("--data", help="dataset directory (default: regenerate from the config)")

    p = sub.add_parser("eval", help="metrics report for a checkpoint, the oracle or a remote model")
    _common(p)
    _backend_args(p)

    p = sub.add_parser("run-episode", help="print one episode transcript")
    _common(p)
    _backend_args(p)
    p.add_argument("--index", type=int, default=0, help="record index within the split")
    p.add_argument("--log", help="append the episode's JSONL event log here")

    p = sub.add_parser("report-calibration", help="calibration-curve CSV")
    _common(p)
    _backend_args(p)
    p.add_argument("--all-steps", action="store_true",
                   help="bin every hypothesis call instead of the final one per episode")
    return parser


# ---------------------------------------------------------------- helpers


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write_run_files(out: Path, cfg: RunConfig, argv) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    meta = {
        "argv": list(argv),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _dataset(cfg: RunConfig, data_dir: Optional[str]):
    model = cfg.build_model()
    if data_dir:
        return model, load_dataset(data_dir, model.catalog)
    return model, generate_dataset(cfg.build_synthetic_config(), model)


def _checkpoint_path(args) -> Path:
    if args.checkpoint in ("best", "last"):
        base = Path(args.out or ".") / "checkpoints"
        return base / f"{args.checkpoint}.json"
    return Path(args.checkpoint)


def _backend(args, cfg: RunConfig, model):
    catalog = model.catalog
    if args.backend == "oracle":
        if not 0.0 < args.tau <= 1.0:
            raise ConfigurationError("--tau must lie in (0, 1]")
        return BayesOracle(model, args.tau)
    if args.backend == "remote":
        hyp_t = load_template("hypothesis_v1.txt", cfg.protocol.hypothesis_template or None)
        dec_t = load_template("decision_v1.txt", cfg.protocol.decision_template or None)
        return RemotePolicy(catalog, cfg.build_remote(), hypothesis_template=hyp_t, decision_template=dec_t)
    path = _checkpoint_path(args)
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    ckpt = Checkpoint.load(path)
    return ParametricPolicy(ckpt.params, Featurizer.from_model(model), allow_invalid=cfg.policy.allow_invalid_action)


def _n_workers(args, cfg: RunConfig) -> int:
    return cfg.remote.max_in_flight if args.backend == "remote" else 1


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, argv) -> int:
    cfg = _load_config(args)
    model, dataset = _dataset(cfg, None)
    out = Path(args.out)
    paths = save_dataset(dataset, out)
    _write_run_files(out, cfg, argv)
    counts = dataset.class_counts()
    for path in paths:
        split = path.stem
        print(f"{path}: {len(getattr(dataset, split))} records {counts[split]}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    cfg = _load_config(args)
    model, dataset = _dataset(cfg, args.data)
    if not dataset.train or not dataset.val:
        raise ConfigurationError("training needs non-empty train and val splits")
    out = Path(args.out)
    _write_run_files(out, cfg, argv)
    trainer = Trainer(Featurizer.from_model(model), cfg.trainer, cfg.environment, cfg.rewards, cfg.metrics.n_bins)
    result = trainer.fit(dataset.train, dataset.val)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    result.best.save(ckpt_dir / "best.json")
    result.last.save(ckpt_dir / "last.json")
    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    print(f"trained {result.last.global_step} steps; best validation mean accuracy {result.best.best_score}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    cfg = _load_config(args)
    model, dataset = _dataset(cfg, args.data)
    backend = _backend(args, cfg, model)
    records = getattr(dataset, args.split)
    report = evaluate(backend, records, model.catalog, cfg.environment, cfg.metrics.n_bins,
                      greedy=cfg.metrics.greedy, seed=cfg.run.seed, n_workers=_n_workers(args, cfg))
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        _write_run_files(out, cfg, argv)
        (out / f"metrics_{args.split}.csv").write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_run_episode(args, argv) -> int:
    cfg = _load_config(args)
    model, dataset = _dataset(cfg, args.data)
    records = getattr(dataset, args.split)
    if not 0 <= args.index < len(records):
        raise ConfigurationError(f"--index {args.index} out of range for {len(records)} {args.split} records")
    backend = _backend(args, cfg, model)
    traces = run_episodes(backend, records[args.index:args.index + 1], model.catalog, cfg.environment,
                          greedy=cfg.metrics.greedy, seed=cfg.run.seed)
    trace = traces[0]
    print(format_trace(trace))
    if args.log:
        with JsonlLogWriter(args.log) as log:
            log.write_all(trace_log_entries(trace, f"{args.split}:{args.index}"))
    return EXIT_OK


def cmd_report_calibration(args, argv) -> int:
    cfg = _load_config(args)
    model, dataset = _dataset(cfg, args.data)
    backend = _backend(args, cfg, model)
    records = getattr(dataset, args.split)
    if args.all_steps:
        if not isinstance(backend, ParametricPolicy):
            raise ConfigurationError("--all-steps needs a checkpoint backend")
        traces = run_episodes(backend, records, model.catalog, cfg.environment, greedy=False, seed=cfg.run.seed)
        report = hypothesis_calibration(backend, traces, cfg.metrics.n_bins)
    else:
        report = evaluate(backend, records, model.catalog, cfg.environment, cfg.metrics.n_bins,
                          greedy=cfg.metrics.greedy, seed=cfg.run.seed,
                          n_workers=_n_workers(args, cfg)).calibration
    text = report.to_csv()
    if args.out:
        out = Path(args.out)
        _write_run_files(out, cfg, argv)
        (out / f"calibration_{args.split}.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"# ece={report.ece!r}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "run-episode": cmd_run_episode,
    "report-calibration": cmd_report_calibration,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (ConfigurationError, RecordFormatError, ValueError) as exc:
        print(f"seqdx: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        logger.debug("runtime failure", exc_info=True)
        print(f"seqdx: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
