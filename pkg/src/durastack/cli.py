"""Command line interface.

Exit codes: 0 success, 2 usage or configuration problems, 3 data
problems (malformed CSV, bad artifact, infeasible fold plan), 4 numeric
failures (a model that cannot be fitted or a metric that is undefined).
Every subcommand takes the same base flags and honours the run seed, so
identical invocations produce identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

from . import pipeline, synthdata
from .config import RunConfig, load_config, with_seed, with_threads
from .errors import (ConfigError, CsvError, DurastackError, ImputationError,
                     LearnerError, MetricError, StageFailure)
from .fsutil import atomic_write_text
from .ingest import describe_cohort, load_cohort, write_csv
from .metrics import MetricReport, emit_report
from .stack import Prediction

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _exit_code(exc: DurastackError) -> int:
    if isinstance(exc, StageFailure) and isinstance(exc.original,
                                                    DurastackError):
        return _exit_code(exc.original)
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, (LearnerError, ImputationError, MetricError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def _add_run_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--config", default=None, metavar="FILE",
                     help="key=value run configuration file")
    cmd.add_argument("--seed", type=int, default=None,
                     help="override the run seed")
    cmd.add_argument("--threads", type=int, default=None,
                     help="worker threads (0 picks the machine default)")


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    config = with_seed(config, getattr(args, "seed", None))
    return with_threads(config, getattr(args, "threads", None))


def _parse_cells(raw: str) -> tuple[tuple[str, int, int], ...]:
    cells = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(
                f"synth_cells entries must look like SITE:YEAR:COUNT "
                f"(got {part!r})"
            )
        site, year_s, count_s = (b.strip() for b in bits)
        try:
            year, count = int(year_s), int(count_s)
        except ValueError:
            raise ConfigError(
                f"synth_cells year and count must be integers (got {part!r})"
            ) from None
        if not site or count < 1:
            raise ConfigError(
                f"synth_cells needs a site name and a positive count "
                f"(got {part!r})"
            )
        cells.append((site, year, count))
    if not cells:
        raise ConfigError("synth_cells is empty")
    return tuple(cells)


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _run_config(args)
    gen = synthdata.GeneratorConfig(
        seed=config.seed, residual_sd=config.synth_residual_sd,
    )
    if config.synth_cells:
        gen = dataclasses.replace(gen, cells=_parse_cells(config.synth_cells))
    records, truth = synthdata.generate(gen)
    masked, sidecar = synthdata.mask(records, gen)
    write_csv(args.out, masked)
    atomic_write_text(args.out + ".truth.json",
                      json.dumps(truth, sort_keys=True, indent=2) + "\n")
    atomic_write_text(args.out + ".mask.json",
                      json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(masked)} cases to {args.out} "
          f"(+ .truth.json, .mask.json)")
    return EXIT_OK


def _cmd_ingest(args: argparse.Namespace) -> int:
    _run_config(args)
    kept, stages, row_errors = load_cohort(args.input)
    for err in row_errors[:20]:
        detail = "; ".join(str(e) for e in err.errors)
        print(f"row {err.row}: {detail}", file=sys.stderr)
    if len(row_errors) > 20:
        print(f"... and {len(row_errors) - 20} more invalid rows",
              file=sys.stderr)
    if not kept:
        raise CsvError("no rows remain after cohort selection")
    summary = {
        "row_errors": len(row_errors),
        "exclusions": [
            {"stage": st.name, "dropped": st.dropped,
             "remaining": st.remaining}
            for st in stages
        ],
        "cohort": describe_cohort(kept),
    }
    print(json.dumps(summary, sort_keys=True, indent=2))
    if args.out:
        write_csv(args.out, kept)
        print(f"wrote {len(kept)} clean rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def _split_model_out(out: Optional[str]) -> tuple[str, str]:
    out = out or "."
    if out.endswith(".dsm"):
        return os.path.dirname(out) or ".", os.path.basename(out)
    return out, "model.dsm"


def _cmd_develop(args: argparse.Namespace) -> int:
    config = _run_config(args)
    out_dir, model_name = _split_model_out(args.out)
    result = pipeline.develop(args.train, config, out_dir)
    model_path = result.model_path
    if model_name != "model.dsm":
        dest = os.path.join(out_dir, model_name)
        os.replace(model_path, dest)
        model_path = dest
    print(f"model: {model_path}")
    print(f"tuning audit: {result.audit_path}")
    for path in result.report_paths:
        print(f"report: {path}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    result = pipeline.validate(args.model, args.test, config, args.out or ".")
    print(json.dumps(result.summary, sort_keys=True, indent=2))
    for path in result.report_paths:
        print(f"report: {path}", file=sys.stderr)
    print(f"summary: {result.summary_path}", file=sys.stderr)
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace) -> int:
    config = _run_config(args)
    results = pipeline.predict_batch(args.model, args.input, args.out,
                                     config.seed)
    ok = sum(1 for r in results if isinstance(r, Prediction))
    failed = len(results) - ok
    note = f" ({failed} failed)" if failed else ""
    print(f"scored {ok} of {len(results)} cases{note}; wrote {args.out}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    _run_config(args)
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CsvError(f"cannot read report JSON: {exc}") from exc
    try:
        report = MetricReport.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CsvError(f"not a metric report document: {exc}") from exc
    stem = args.out
    if not stem:
        stem = args.input[:-5] if args.input.endswith(".json") else args.input
    paths = emit_report(report, stem)
    for path in paths:
        print(f"report: {path}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .serve import DurastackService

    config = _run_config(args)
    host = args.host or config.serve_host
    port = args.port if args.port is not None else config.serve_port
    static = args.static or (config.static_dir or None)
    if static and not os.path.isdir(static):
        raise ConfigError(f"static directory not found: {static}")
    service = DurastackService(host, port, static)
    service.start()
    try:
        service.load_model(args.model)
    except DurastackError:
        service.shutdown()
        raise
    version = service.state.model.model_version()
    print(f"serving model {version} on http://{host}:{port} "
          f"(Ctrl-C to stop)")
    service.serve_until_interrupt()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="durastack",
        description="Surgical case-duration modelling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    _add_run_flags(p)
    p.add_argument("--out", required=True, metavar="CSV",
                   help="cohort output path (sidecars written next to it)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="validate, filter, and describe a cohort")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True, metavar="CSV")
    p.add_argument("--out", default=None, metavar="CSV",
                   help="optional cleaned cohort output")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("develop", help="fit, tune, stack, and lock a model")
    _add_run_flags(p)
    p.add_argument("--train", required=True, metavar="CSV")
    p.add_argument("--out", default=".", metavar="PATH",
                   help="output directory, or a path ending in .dsm")
    p.set_defaults(func=_cmd_develop)

    p = sub.add_parser("validate", help="score a locked model on held-out data")
    _add_run_flags(p)
    p.add_argument("--model", required=True, metavar="DSM")
    p.add_argument("--test", required=True, metavar="CSV")
    p.add_argument("--out", default=".", metavar="DIR")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("predict", help="score partial case rows from a CSV")
    _add_run_flags(p)
    p.add_argument("--model", required=True, metavar="DSM")
    p.add_argument("--in", dest="input", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("report", help="re-emit report CSVs from a report JSON")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True, metavar="JSON")
    p.add_argument("--out", default=None, metavar="STEM",
                   help="output stem (defaults to the input path sans .json)")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="serve predictions over HTTP")
    _add_run_flags(p)
    p.add_argument("--model", required=True, metavar="DSM")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static", default=None, metavar="DIR",
                   help="directory with the browser calculator bundle")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DurastackError as exc:
        print(f"durastack {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
