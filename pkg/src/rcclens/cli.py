"""Command-line entry point.

Every subcommand reads an optional INI configuration (``--config``), applies
``--set section.key=value`` overrides, then ``--seed``/``--output-dir``/
``--workers``, then the RCCLENS_OUTPUT_DIR and RCCLENS_WORKERS environment
variables (the only two environment overrides).  Results go under the output
directory and nowhere else.

Errors are reported on stderr as ``rcclens: error[<category>]: <message>``.
Exit codes: 0 success, 1 runtime, 2 usage, 3 config, 4 missing model.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import Config, ConfigError, describe
from .evolution import PAIR, SearchRun
from . import neural
from .pipeline import (
    ModelNotFoundError,
    build_scenario,
    compare_search_algorithms,
    run_pipeline,
    write_comparison,
    write_outputs,
)
from .retrain import accuracy

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3, 4
CATEGORY = {EXIT_RUNTIME: "runtime", EXIT_USAGE: "usage", EXIT_CONFIG: "config", EXIT_MODEL: "model"}

log = logging.getLogger("rcclens")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, f"{message} (see {self.prog} --help)")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="INI configuration file; every key has a default")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--output-dir", metavar="DIR", help="output directory (run.output_dir)")
    p.add_argument("--workers", type=int, help="processes for per-cluster work (run.workers)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rcclens", description="Explain and repair clustered DNN failures with simulator search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "train": "train the scenario model and save it as model.txt",
        "cluster": "cluster failing test inputs by their heatmaps",
        "explain": "search each cluster and learn its unsafe-region expression",
        "evaluate": "explain, then measure accuracy inside each expression against random inputs",
        "retrain": "evaluate, then retrain with expression samples and with random samples",
        "compare": "compare PaiR with the NSGA-II and DeepNSGA-II baselines at equal budget",
        "report": "print the report stored in the output directory",
        "config": "print the effective configuration (or --describe every key)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "compare":
            p.add_argument("--seeds", type=int, default=4, help="number of search seeds (>= 2)")
            p.add_argument("--clusters", type=int, default=4, help="largest non-degenerate clusters to use")
        if name == "config":
            p.add_argument("--describe", action="store_true", help="list every key with its default")
    return parser


def resolve_config(args, env=None) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    cfg = cfg.override(args.overrides)
    direct = {k: v for k, v in (("seed", args.seed), ("output_dir", args.output_dir), ("workers", args.workers))
              if v is not None}
    if direct:
        cfg = replace(cfg, **direct)
    return cfg.with_environment(env)


def _outdir(cfg: Config) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def _cmd_train(cfg: Config) -> int:
    out = _outdir(cfg)
    sc = build_scenario(cfg)
    neural.save(sc.net, out / "model.txt")
    (out / "train.txt").write_text(f"test accuracy: {accuracy(sc.net, sc.test)!r}\n")
    cfg.save(out / "config.ini")
    print(f"model written to {out / 'model.txt'}")
    return EXIT_OK


def _cmd_stage(cfg: Config, stage: str) -> int:
    out = _outdir(cfg)
    report = run_pipeline(cfg, stage)
    write_outputs(report, out)
    cfg.save(out / "config.ini")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_compare(cfg: Config, n_seeds: int, n_clusters: int) -> int:
    if n_seeds < 2:
        raise CliError(EXIT_USAGE, "--seeds must be at least 2")
    out = _outdir(cfg)
    report = run_pipeline(cfg, "cluster")
    if report.clustering is None:
        raise CliError(EXIT_RUNTIME, "no clusters to compare on")
    clusters = sorted((C for C in report.clustering.clusters if not C.degenerate), key=len, reverse=True)
    run = SearchRun(PAIR, cfg.pair_population, cfg.pair_iterations, cfg.pair_restarts, cfg.pair_crossover,
                    cfg.pair_mutation, cfg.seed)
    seeds = [cfg.seed + i for i in range(n_seeds)]
    cmp = compare_search_algorithms(clusters[:n_clusters], report.scenario, run, seeds)
    d = write_comparison(cmp, out)
    cfg.save(out / "config.ini")
    sys.stdout.write((d / "tests.csv").read_text())
    return EXIT_OK


def _cmd_report(cfg: Config) -> int:
    path = Path(cfg.output_dir) / "report.txt"
    if not path.is_file():
        raise CliError(EXIT_RUNTIME, f"no report at {path}; run explain, evaluate or retrain first")
    sys.stdout.write(path.read_text())
    return EXIT_OK


def run(argv=None, env=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise CliError(EXIT_USAGE, "a command is required (see rcclens --help)")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args, env)
    if args.command == "config":
        sys.stdout.write(describe() if args.describe else cfg.dumps())
        return EXIT_OK
    if args.command == "train":
        return _cmd_train(cfg)
    if args.command == "compare":
        return _cmd_compare(cfg, args.seeds, args.clusters)
    if args.command == "report":
        return _cmd_report(cfg)
    return _cmd_stage(cfg, args.command)


def main(argv=None) -> int:
    try:
        return run(argv)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except ModelNotFoundError as exc:
        code, msg = EXIT_MODEL, str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort category for the caller
        log.debug("unhandled error", exc_info=True)
        code, msg = EXIT_RUNTIME, f"{type(exc).__name__}: {exc}"
    print(f"rcclens: error[{CATEGORY[code]}]: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
