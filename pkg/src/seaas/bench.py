"""Trial harness: replays labeled scenario suites against an embedded server,
joins threat reports back to the script labels, and reports detection accuracy
plus the device work saved by offloading."""

from __future__ import annotations

import csv
import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .agent import AgentConnection, AgentRunReport, Mode, ScriptedEvent, run_scenario
from .engine import SecurityEngine
from .packs import default_policy_document
from .policy import parse_policy_document
from .server import OffloadServer, ProtocolService
from .suite import build_default_suite, labels_for

logger = logging.getLogger(__name__)

BENIGN_LABEL = "benign"
EFFICIENCY_THRESHOLD = 0.25
EFFICIENCY_MIN_RULES = 64

CSV_COLUMNS = [
    "trial_id",
    "events_total",
    "threats_injected",
    "detected",
    "undetected",
    "false_positives",
    "detection_ratio",
    "detection_rate",
    "work_units_local",
    "work_units_offloaded",
    "work_ratio",
]


class MetricError(Exception):
    pass


class ComparisonError(Exception):
    pass


class ExportError(Exception):
    pass


class TrialAborted(Exception):
    pass


class TrialInvalid(Exception):
    pass


@dataclass(frozen=True)
class TrialConfig:
    trial_id: str
    scripts: tuple[tuple[str, tuple[ScriptedEvent, ...]], ...]
    policy_document: str
    agents_count: int
    seed: int


@dataclass(frozen=True)
class TrialReport:
    trial_id: str
    events_total: int
    threats_injected: int
    detected: int
    undetected: int
    false_positives: int
    detection_ratio: float | None
    detection_rate: float | None
    work_units_local: int
    work_units_offloaded: int
    work_ratio: float | None

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "events_total": self.events_total,
            "threats_injected": self.threats_injected,
            "detected": self.detected,
            "undetected": self.undetected,
            "false_positives": self.false_positives,
            "detection_ratio": self.detection_ratio,
            "detection_rate": self.detection_rate,
            "work_units_local": self.work_units_local,
            "work_units_offloaded": self.work_units_offloaded,
            "work_ratio": self.work_ratio,
        }


def compute_detection_metrics(
    detected: int, undetected: int
) -> tuple[float | None, float | None]:
    """(detected/undetected ratio, detected/total rate); either is None when
    its denominator vanishes."""
    if detected < 0 or undetected < 0:
        raise MetricError("counts must be non-negative")
    ratio = detected / undetected if undetected > 0 else None
    total = detected + undetected
    rate = detected / total if total > 0 else None
    return ratio, rate


@dataclass(frozen=True)
class EfficiencyVerdict:
    work_ratio: float
    threshold: float | None
    threshold_applied: bool
    passed: bool


def compare_cpu_modes(
    report: TrialReport,
    rules_count: int,
    threshold: float = EFFICIENCY_THRESHOLD,
) -> EfficiencyVerdict:
    """Judge offloaded-vs-local device work. Packs of fewer than 64 rules only
    claim strict improvement; the ratio threshold applies from 64 rules up."""
    if report.work_units_local <= 0:
        raise ComparisonError("no local work baseline to compare against")
    ratio = report.work_units_offloaded / report.work_units_local
    if rules_count >= EFFICIENCY_MIN_RULES:
        return EfficiencyVerdict(
            work_ratio=ratio, threshold=threshold, threshold_applied=True, passed=ratio <= threshold
        )
    return EfficiencyVerdict(
        work_ratio=ratio,
        threshold=None,
        threshold_applied=False,
        passed=report.work_units_offloaded < report.work_units_local,
    )


def run_trial(config: TrialConfig, data_dir: Path | None = None) -> TrialReport:
    report, engine, _, _ = run_trial_detailed(config, data_dir=data_dir)
    engine.close()
    return report


def run_trial_detailed(
    config: TrialConfig, data_dir: Path | None = None
) -> tuple[TrialReport, SecurityEngine, list[AgentRunReport], list[AgentRunReport]]:
    """Run one trial and also hand back the engine and per-agent reports so
    callers can audit the join against the raw stores."""
    engine = SecurityEngine.fresh(data_dir=data_dir, policy_document=config.policy_document)
    service = ProtocolService(engine)
    server = OffloadServer(("127.0.0.1", 0), service)
    server.start()
    port = server.server_address[1]
    offloaded: list[AgentRunReport] = []
    try:
        for device_id, script in config.scripts:
            try:
                connection = AgentConnection("127.0.0.1", port)
            except OSError as exc:
                raise TrialAborted(f"cannot reach the trial server: {exc}") from None
            try:
                offloaded.append(
                    run_scenario(script, Mode.OFFLOADED, connection, device_id=device_id)
                )
            finally:
                connection.close()
    finally:
        server.stop()

    local = [
        run_scenario(script, Mode.LOCAL, device_id=device_id, policy_document=config.policy_document)
        for device_id, script in config.scripts
    ]

    report = _join_metrics(config, engine, offloaded, local)
    engine.record_trial_report(report.to_dict())
    return report, engine, offloaded, local


def _join_metrics(
    config: TrialConfig,
    engine: SecurityEngine,
    offloaded: list[AgentRunReport],
    local: list[AgentRunReport],
) -> TrialReport:
    labels: dict[tuple[str, int], str] = {}
    for device_id, script in config.scripts:
        labels.update(labels_for(device_id, script))

    reported_keys: set[tuple[str, int]] = set()
    for _, threat in engine.threat_feed:
        for seq in threat.event_seqs:
            key = (threat.device_id, seq)
            if key not in labels:
                raise TrialInvalid(f"threat report for unlabeled event {key}")
            reported_keys.add(key)

    injected_keys = {k for k, label in labels.items() if label != BENIGN_LABEL}
    detected = len(injected_keys & reported_keys)
    undetected = len(injected_keys) - detected
    false_positives = sum(1 for k in reported_keys if labels[k] == BENIGN_LABEL)
    ratio, rate = compute_detection_metrics(detected, undetected)

    if detected + undetected != len(injected_keys):
        raise TrialInvalid("conservation violated: detected + undetected != threats injected")

    work_local = sum(r.work.total for r in local)
    work_offloaded = sum(r.work.total for r in offloaded)
    return TrialReport(
        trial_id=config.trial_id,
        events_total=sum(r.events_emitted for r in offloaded),
        threats_injected=len(injected_keys),
        detected=detected,
        undetected=undetected,
        false_positives=false_positives,
        detection_ratio=ratio,
        detection_rate=rate,
        work_units_local=work_local,
        work_units_offloaded=work_offloaded,
        work_ratio=(work_offloaded / work_local) if work_local > 0 else None,
    )


def run_suite(
    suite: Sequence[tuple[str, list[tuple[str, list[ScriptedEvent]]]]] | None = None,
    policy_document: str | None = None,
    trials: int | None = None,
    seed: int = 42,
    data_root: Path | None = None,
) -> list[TrialReport]:
    """Run a whole suite (the shipped default when none is given), one fresh
    embedded server per trial."""
    if suite is None:
        suite = build_default_suite(seed=seed, trials=trials or 5)
    if trials is not None:
        suite = list(suite)[:trials]
    document = policy_document if policy_document is not None else default_policy_document()
    parse_policy_document(document)  # fail fast on a broken pack
    reports = []
    owns_root = data_root is None
    root = Path(data_root) if data_root is not None else Path(tempfile.mkdtemp(prefix="seaas-bench-"))
    try:
        for trial_id, scripts in suite:
            config = TrialConfig(
                trial_id=trial_id,
                scripts=tuple((d, tuple(s)) for d, s in scripts),
                policy_document=document,
                agents_count=len(scripts),
                seed=seed,
            )
            reports.append(run_trial(config, data_dir=root / trial_id))
    finally:
        if owns_root:
            shutil.rmtree(root, ignore_errors=True)
    return reports


def format_metric(value: float | None) -> str:
    return "N/A" if value is None else f"{value:.4f}"


def export_results(reports: Sequence[TrialReport], path: Path) -> Path:
    """One CSV row per trial, stable column order; identical reports export
    byte-identically."""
    if not reports:
        raise ExportError("no trial reports to export")
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in reports:
                writer.writerow(
                    [
                        r.trial_id,
                        r.events_total,
                        r.threats_injected,
                        r.detected,
                        r.undetected,
                        r.false_positives,
                        format_metric(r.detection_ratio),
                        format_metric(r.detection_rate),
                        r.work_units_local,
                        r.work_units_offloaded,
                        format_metric(r.work_ratio),
                    ]
                )
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from None
    return path
