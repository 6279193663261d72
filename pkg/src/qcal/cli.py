"""Command-line entry points.

``qq RUNCARD`` runs a calibration pipeline and writes its report. The other
commands are subcommands of the same program, also installed under
hyphenated names::

    qq live DIR          == qq-live DIR
    qq compare DIR...    == qq-compare DIR...
    qq upload DIR        == qq-upload DIR
    qq archive           == qq-archive

Exit codes: 0 success, 1 usage/parse/validation error, 2 runtime failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from qcal.errors import (
    LayoutError,
    NetworkError,
    ParameterError,
    ParameterFileError,
    QcalError,
    RuncardSyntaxError,
    SchemaError,
    ServerRejected,
    UnknownPlatform,
    UnknownProtocol,
    UnknownQubit,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
ARCHIVE_ENV = "QCAL_ARCHIVE_URL"

VALIDATION_ERRORS = (RuncardSyntaxError, SchemaError, UnknownProtocol, UnknownQubit, ParameterError,
                     UnknownPlatform, ParameterFileError)


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for runtime failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fail(stage: str, exc: BaseException | str, code: int) -> int:
    print(f"qq: {stage} failed: {exc}", file=sys.stderr)
    return code


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose <= 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ------------------------------------------------------------------- qq run

def run_parser(prog="qq") -> Parser:
    p = Parser(
        prog=prog,
        description="Run the calibration pipeline described by RUNCARD and write an html report.",
        epilog="other commands: qq live | qq compare | qq upload | qq archive (see 'qq <command> --help')",
    )
    p.add_argument("runcard", help="path to the runcard (YAML)")
    p.add_argument("-o", "--output", metavar="DIR",
                   help="output directory (default: <runcard name>-output in the current directory)")
    p.add_argument("--platform-params", metavar="FILE",
                   help="JSON file overriding the simulated platform's hidden parameters")
    p.add_argument("--seed", type=int, default=0, help="simulator seed (default 0)")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.add_argument("--policy", choices=("halt", "continue"), default="halt",
                   help="what to do after a failed action (default halt)")
    p.add_argument("--noiseless", action="store_true", help="disable shot and readout noise in the simulator")
    p.add_argument("--row-delay", type=float, default=0.0, metavar="SECONDS",
                   help="pause after each acquired row, useful to watch with qq-live")
    p.add_argument("--no-report", action="store_true", help="skip html report generation")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    return p


def cmd_run(args) -> int:
    from qcal.executor import OutputExists, load_plan, run_plan
    from qcal.report.html import generate_report

    path = Path(args.runcard)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        return fail("read", f"cannot read runcard {path}: {exc.strerror or exc}", EXIT_IO)
    except UnicodeDecodeError as exc:
        return fail("validation", f"{path}: not UTF-8 text ({exc.reason})", EXIT_USAGE)
    if args.platform_params and not Path(args.platform_params).is_file():
        return fail("read", f"cannot read platform parameters {args.platform_params}", EXIT_IO)
    try:
        plan, platform = load_plan(text, args.platform_params, seed=args.seed, noiseless=args.noiseless)
    except VALIDATION_ERRORS as exc:
        return fail("validation", f"{path}: {exc}", EXIT_USAGE)
    output = Path(args.output) if args.output else Path(f"{path.stem}-output")
    try:
        result = run_plan(plan, platform, output, args.policy, force=args.force, runcard_text=text,
                          row_delay=args.row_delay)
    except OutputExists as exc:
        return fail("output", exc, EXIT_IO)
    except OSError as exc:
        return fail("write", exc, EXIT_IO)
    if not args.no_report:
        try:
            index = generate_report(output)
        except (QcalError, OSError) as exc:
            return fail("report", exc, EXIT_IO)
        print(f"report: {index}")
    for r in result.records:
        if r.status == "failed":
            print(f"qq: action {r.index} {r.action} (qubit {r.qubit}) failed: {r.error}", file=sys.stderr)
    if not result.succeeded:
        failed = sum(r.status == "failed" for r in result.records)
        skipped = sum(r.status == "skipped" for r in result.records)
        return fail("pipeline", f"{failed} failed, {skipped} skipped", EXIT_RUNTIME)
    return EXIT_OK


# ---------------------------------------------------------------- subcommands

def live_parser(prog="qq-live") -> Parser:
    p = Parser(prog=prog, description="Serve a self-refreshing report of a (running) output directory.")
    p.add_argument("output_dir", help="run output directory, may still be written by qq")
    p.add_argument("--port", type=int, default=8001, help="TCP port (default 8001)")
    p.add_argument("--host", default="127.0.0.1", help="bind address (default 127.0.0.1)")
    p.add_argument("--refresh", type=float, default=2.0, help="browser refresh interval in seconds (default 2)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def cmd_live(args) -> int:
    from qcal.report.live import make_live_server

    try:
        server = make_live_server(args.output_dir, args.port, args.refresh, args.host)
    except OSError as exc:
        return fail("bind", exc, EXIT_IO)
    print(f"serving {args.output_dir} on http://{args.host}:{server.server_address[1]}/", flush=True)
    return _serve(server)


def compare_parser(prog="qq-compare") -> Parser:
    p = Parser(prog=prog, description="Overlay two or more run directories and tabulate parameter drift.")
    p.add_argument("dirs", nargs="+", metavar="DIR", help="run output directories (at least two)")
    p.add_argument("-o", "--output", required=True, metavar="DIR", help="where to write the comparison")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def cmd_compare(args) -> int:
    from qcal.report.compare import compare_reports

    if len(args.dirs) < 2:
        return fail("compare", "at least two directories are required", EXIT_USAGE)
    try:
        index = compare_reports(args.dirs, args.output)
    except LayoutError as exc:
        return fail("compare", exc, EXIT_IO)
    except OSError as exc:
        return fail("write", exc, EXIT_IO)
    print(f"comparison: {index}")
    return EXIT_OK


def upload_parser(prog="qq-upload") -> Parser:
    p = Parser(prog=prog, description="Upload a run directory to a report archive.",
               epilog=f"the archive URL may also be given through ${ARCHIVE_ENV}")
    p.add_argument("output_dir", help="run output directory")
    p.add_argument("--url", help=f"archive base URL (default: ${ARCHIVE_ENV})")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def cmd_upload(args) -> int:
    from qcal.report.archive import upload_report

    url = args.url or os.environ.get(ARCHIVE_ENV)
    if not url:
        return fail("upload", f"no archive URL: pass --url or set {ARCHIVE_ENV}", EXIT_USAGE)
    try:
        rid = upload_report(args.output_dir, url)
    except LayoutError as exc:
        return fail("upload", exc, EXIT_IO)
    except NetworkError as exc:
        return fail("upload", exc, EXIT_IO)
    except ServerRejected as exc:
        return fail("upload", exc, EXIT_RUNTIME)
    print(rid)
    return EXIT_OK


def archive_parser(prog="qq-archive") -> Parser:
    p = Parser(prog=prog, description="Run the self-hosted report archive server.")
    p.add_argument("--storage", required=True, metavar="DIR", help="directory holding uploaded reports")
    p.add_argument("--port", type=int, default=8000, help="TCP port (default 8000)")
    p.add_argument("--host", default="127.0.0.1", help="bind address (default 127.0.0.1)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def cmd_archive(args) -> int:
    from qcal.report.archive import make_archive_server

    try:
        server = make_archive_server(args.storage, args.port, args.host)
    except OSError as exc:
        return fail("bind", exc, EXIT_IO)
    print(f"archive at http://{args.host}:{server.server_address[1]}/ storing in {args.storage}", flush=True)
    return _serve(server)


def _serve(server) -> int:
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


COMMANDS = {
    "live": (live_parser, cmd_live),
    "compare": (compare_parser, cmd_compare),
    "upload": (upload_parser, cmd_upload),
    "archive": (archive_parser, cmd_archive),
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in COMMANDS:
        make, run = COMMANDS[argv[0]]
        parser, argv = make(f"qq {argv[0]}"), argv[1:]
    elif argv and argv[0] == "run":
        parser, run, argv = run_parser("qq run"), cmd_run, argv[1:]
    else:
        parser, run = run_parser(), cmd_run
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    return run(args)


def _alias(name: str):
    def entry(argv=None) -> int:
        make, run = COMMANDS[name]
        try:
            args = make().parse_args(sys.argv[1:] if argv is None else argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        _setup_logging(args.verbose)
        return run(args)

    entry.__name__ = f"{name}_main"
    return entry


live_main = _alias("live")
compare_main = _alias("compare")
upload_main = _alias("upload")
archive_main = _alias("archive")

if __name__ == "__main__":
    sys.exit(main())
