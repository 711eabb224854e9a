"""Command-line entry point: campaigns, single runs and the board API.

Exit codes: 0 success, 1 property violation, 2 usage error.
"""
import argparse
import asyncio
import dataclasses
import logging
import os
import sys
from fractions import Fraction

import uvicorn
from dotenv import load_dotenv

from crowdsense.errors import AuctionError, DomainError, ScenarioError, UsageError
from crowdsense.harness import (
    audit_frequency,
    cmd_equivalence,
    cmd_fault_detection,
    cmd_overhead,
    cmd_run,
    cmd_truthfulness,
    cmd_verification_game,
    default_game_grid,
    write_metrics_csv,
)
from crowdsense.logging_config import logging_setup
from crowdsense.mechanisms import JobModel
from crowdsense.protocol import MIN_GAME_TRIALS, VerificationPolicy
from crowdsense.scenario import ScenarioSpec, load_scenario
from crowdsense.settings import Settings

load_dotenv()

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("app")


def _scenario(args) -> ScenarioSpec:
    spec = load_scenario(args.spec) if args.spec else ScenarioSpec()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.model is not None:
        overrides["job_model"] = JobModel.parse(args.model)
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return spec


def _write(out_dir, name: str, text: str) -> None:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as handle:
            handle.write(text)


def run_equivalence(args, settings) -> int:
    report = cmd_equivalence(_scenario(args), settings)
    print(report.summary(), end="")
    _write(args.out, "equivalence.txt", report.summary())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def run_truthfulness(args, settings) -> int:
    report = cmd_truthfulness(_scenario(args), settings)
    print(report.summary(), end="")
    _write(args.out, "truthfulness.txt", report.summary())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def run_game(args, settings) -> int:
    trials = args.trials or 100_000
    if args.alpha:
        policies = [VerificationPolicy(alpha=Fraction(a), fine=args.fine, p_max=args.p_max) for a in args.alpha]
    else:
        policies = default_game_grid(p_max=args.p_max, fine=args.fine)
    seed = args.seed or 0
    rows = cmd_verification_game(policies, trials, seed)
    lines = ["alpha,fine,p_max,cheat_gain,mean,stderr,expected"]
    lines.extend(",".join(row.as_csv()) for row in rows)
    frequency = audit_frequency(policies[0].alpha, max(trials // 10, MIN_GAME_TRIALS), seed)
    text = "\n".join(lines) + "\n"
    print(text, end="")
    print(f"audit frequency: {frequency.audits}/{frequency.runs} at alpha={frequency.alpha} (p={frequency.pvalue:.3f})")
    _write(args.out, "game.csv", text)
    return EXIT_OK if all(row.ok for row in rows) and frequency.ok else EXIT_VIOLATION


def run_faults(args, settings) -> int:
    report = cmd_fault_detection(_scenario(args), settings, args.faults)
    print(report.summary(), end="")
    _write(args.out, "faults.txt", report.summary())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def run_overhead(args, settings) -> int:
    report = cmd_overhead(_scenario(args), settings, sweep=args.sweep)
    print(report.summary(), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_metrics_csv(report.rows, os.path.join(args.out, "overhead.csv"))
        _write(args.out, "slopes.txt", report.summary())
    return EXIT_OK


def run_single(args, settings) -> int:
    spec = _scenario(args)
    summary = cmd_run(spec, settings, args.out)
    transcript = summary.transcript
    print(f"{transcript.protocol} {spec.describe()}")
    print(f"winners: {', '.join(transcript.outcome.winners) or '-'}")
    for user_id, result in sorted(transcript.audits.items()):
        print(f"audit {user_id}: {result.status.value}")
    for problem in summary.problems:
        print(f"problem: {problem}")
    if args.archive:
        from crowdsense.database import ArchiveManager

        async def archive_run():
            manager = ArchiveManager(settings.database_url)
            try:
                await manager.create_schema()
                await manager.save_run(transcript.config.tid, transcript, spec.describe())
            finally:
                await manager.close()

        asyncio.run(archive_run())
    return EXIT_OK if summary.ok else EXIT_VIOLATION


def run_init_db(args, settings) -> int:
    from init_db import init_database

    asyncio.run(init_database(settings.database_url))
    return EXIT_OK


def run_serve(args, settings) -> int:
    logger.info("Starting board API", extra={'component': 'Setup', 'host': settings.api_host, 'port': settings.api_port})
    uvicorn.run("crowdsense.board_api:app", host=settings.api_host, port=settings.api_port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdsense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def campaign(name, handler, help_text):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--spec", help="scenario file (key = value)")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--out", help="directory for reports")
        cmd.add_argument("--trials", type=int)
        cmd.add_argument("--model", help="h | het | sub")
        cmd.set_defaults(handler=handler)
        return cmd

    campaign("equivalence", run_equivalence, "compare encrypted runs with the plaintext mechanisms")
    campaign("truthfulness", run_truthfulness, "exhaustive bid-deviation search")
    game = campaign("game", run_game, "Monte Carlo of the cheating platform")
    game.add_argument("--alpha", action="append", help="audit probability, repeatable")
    game.add_argument("--fine", type=Fraction, default=Fraction(900))
    game.add_argument("--p-max", dest="p_max", type=Fraction, default=Fraction(100))
    faults = campaign("faults", run_faults, "inject underpayments and audit them")
    faults.add_argument("--faults", type=int, default=100)
    overhead = campaign("overhead", run_overhead, "message and operation scaling")
    overhead.add_argument("--sweep", choices=("n", "m"), default="n")
    run = campaign("run", run_single, "single scenario with board dump and counters")
    run.add_argument("--archive", action="store_true", help="store the run in the archive database")

    sub.add_parser("serve", help="read-only board API").set_defaults(handler=run_serve)
    sub.add_parser("init-db", help="apply archive migrations").set_defaults(handler=run_init_db)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    settings = Settings.from_env()
    logging_setup(settings.log_dir)
    try:
        return args.handler(args, settings)
    except (ScenarioError, UsageError, DomainError) as e:
        logger.error(f"Usage error: {e}", extra={'component': 'CLI', 'command': args.command})
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except AuctionError as e:
        logger.error(f"Run failed: {e}", extra={'component': 'CLI', 'command': args.command})
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.exit(EXIT_OK)
