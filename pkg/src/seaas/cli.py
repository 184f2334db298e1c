"""Command-line entry points: the cloud server, the device agent, and the
trial bench."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .admin import AdminServer
from .agent import AgentConnection, Mode, load_script, run_scenario
from .bench import export_results, run_suite
from .engine import SecurityEngine
from .packs import default_policy_document
from .server import OffloadServer, ProtocolService
from .suite import DEFAULT_SEED, build_default_suite, load_suite, write_suite

logger = logging.getLogger(__name__)


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _default_ui_dir() -> Path | None:
    for candidate in (
        Path.cwd() / "frontend" / "dist",
        Path(__file__).resolve().parents[2] / "frontend" / "dist",
    ):
        if candidate.is_dir():
            return candidate
    return None


def server_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="seaas-server", description="Run the cloud policy engine.")
    parser.add_argument("--listen", type=_address, default=("0.0.0.0", 7740), help="device protocol address (default 0.0.0.0:7740)")
    parser.add_argument("--admin", type=_address, default=("0.0.0.0", 7741), help="admin API address (default 0.0.0.0:7741)")
    parser.add_argument("--data", type=Path, default=None, help="data directory for the event log and snapshots")
    parser.add_argument("--policy", type=Path, default=None, help="initial policy document (built-in pack when omitted)")
    parser.add_argument("--ui-dir", type=Path, default=None, help="built console assets served under /ui")
    parser.add_argument("--snapshot-every", type=int, default=None, help="write a snapshot every N log records")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    policy_document = args.policy.read_text(encoding="utf-8") if args.policy else None
    if args.data is not None:
        engine = SecurityEngine.recover(
            args.data, policy_document=policy_document, snapshot_every=args.snapshot_every
        )
    else:
        engine = SecurityEngine.fresh(policy_document=policy_document)

    service = ProtocolService(engine)
    offload = OffloadServer(args.listen, service)
    admin = AdminServer(args.admin, engine, service, ui_dir=args.ui_dir or _default_ui_dir())
    offload.start()
    admin.start()
    logger.info(
        "listening: devices on %s:%d, admin on %s:%d, policy version %d",
        *args.listen, *args.admin, engine.policy_version,
    )
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        logger.info("shutting down")
    finally:
        offload.stop()
        admin.stop()
        engine.close()
    return 0


def agent_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="seaas-agent", description="Replay a scenario script as a device agent.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--script", type=Path, required=True)
    run.add_argument("--mode", choices=["local", "offloaded"], required=True)
    run.add_argument("--server", type=_address, default=("127.0.0.1", 7740), help="offload server host:port")
    run.add_argument("--report", type=Path, required=True, help="where to write the run report (JSON)")
    run.add_argument("--device-id", default=None, help="device id (default: script file stem)")
    run.add_argument("--policy", type=Path, default=None, help="policy document for local mode (built-in pack when omitted)")
    args = parser.parse_args(argv)

    script = load_script(args.script)
    device_id = args.device_id or args.script.stem
    if args.mode == "offloaded":
        connection = AgentConnection(*args.server)
        try:
            report = run_scenario(script, Mode.OFFLOADED, connection, device_id=device_id)
        finally:
            connection.close()
    else:
        policy_document = args.policy.read_text(encoding="utf-8") if args.policy else None
        report = run_scenario(
            script, Mode.LOCAL, device_id=device_id, policy_document=policy_document
        )
    args.report.write_text(report.to_json(), encoding="utf-8")
    print(f"{device_id}: {report.events_emitted} events, {report.work.total} work units -> {args.report}")
    return 0


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="seaas-bench", description="Run labeled trials and export the metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a trial suite")
    run.add_argument("--suite", type=Path, default=None, help="suite directory (trial_<n>/user_<m>.jsonl); built-in suite when omitted")
    run.add_argument("--policy", type=Path, default=None, help="policy pack (built-in 64-rule pack when omitted)")
    run.add_argument("--trials", type=int, default=5)
    run.add_argument("--seed", type=int, default=DEFAULT_SEED)
    run.add_argument("--out", type=Path, required=True, help="results CSV path")
    run.add_argument("--figures", type=Path, default=None, help="directory for rendered charts (default: beside the CSV)")
    run.add_argument("--no-figures", action="store_true", help="skip chart rendering")

    gen_suite = sub.add_parser("gen-suite", help="materialize the built-in suite as script files")
    gen_suite.add_argument("--out", type=Path, required=True)
    gen_suite.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gen_suite.add_argument("--trials", type=int, default=5)
    gen_suite.add_argument("--users", type=int, default=10)

    gen_policy = sub.add_parser("gen-policy", help="write the built-in policy pack")
    gen_policy.add_argument("--out", type=Path, required=True)

    args = parser.parse_args(argv)

    if args.command == "gen-suite":
        write_suite(args.out, build_default_suite(seed=args.seed, trials=args.trials, users=args.users))
        print(f"suite written to {args.out}")
        return 0
    if args.command == "gen-policy":
        args.out.write_text(default_policy_document(), encoding="utf-8")
        print(f"policy pack written to {args.out}")
        return 0

    suite = load_suite(args.suite) if args.suite else None
    policy_document = args.policy.read_text(encoding="utf-8") if args.policy else None
    reports = run_suite(
        suite=suite, policy_document=policy_document, trials=args.trials, seed=args.seed
    )
    export_results(reports, args.out)
    print(f"results -> {args.out}")
    for r in reports:
        ratio = "N/A" if r.detection_ratio is None else f"{r.detection_ratio:.2f}"
        rate = "N/A" if r.detection_rate is None else f"{r.detection_rate:.3f}"
        work = "N/A" if r.work_ratio is None else f"{r.work_ratio:.3f}"
        print(
            f"  {r.trial_id}: events={r.events_total} injected={r.threats_injected} "
            f"detected={r.detected} undetected={r.undetected} fp={r.false_positives} "
            f"ratio={ratio} rate={rate} work_ratio={work}"
        )
    if not args.no_figures:
        from .figures import render_all

        fig_dir = args.figures if args.figures is not None else args.out.parent
        for fig in render_all(reports, fig_dir):
            print(f"figure -> {fig}")
    return 0


if __name__ == "__main__":
    sys.exit(bench_main())
