"""The built-in policy pack: a 64-rule fleet policy covering the stock app
personas plus deny rules for known-bad app families. Default posture is
deny on critical resources, allow on normal ones."""

from __future__ import annotations

from .policy import (
    Constraints,
    Criticality,
    FrequencyWindow,
    PolicyRule,
    PolicySet,
    RuleContext,
    RuleDecision,
    serialize_policy_document,
)
from .resources import AppState

_GRANT_PRIORITY = 100
_NIGHT = (0, 18_000_000)  # midnight to 05:00 device time


def _grant(rule_id: str, app: str, resource: str, action: str) -> PolicyRule:
    return PolicyRule(
        rule_id=rule_id,
        priority=_GRANT_PRIORITY,
        app_selector=app,
        resource_selector=resource,
        action_selector=action,
        decision=RuleDecision.GRANT,
    )


def _deny(
    rule_id: str,
    app: str,
    resource: str,
    action: str,
    priority: int,
    when: RuleContext | None = None,
) -> PolicyRule:
    return PolicyRule(
        rule_id=rule_id,
        priority=priority,
        app_selector=app,
        resource_selector=resource,
        action_selector=action,
        decision=RuleDecision.DENY,
        when=when,
    )


def _selective(
    rule_id: str, app: str, resource: str, action: str, constraints: Constraints
) -> PolicyRule:
    return PolicyRule(
        rule_id=rule_id,
        priority=_GRANT_PRIORITY,
        app_selector=app,
        resource_selector=resource,
        action_selector=action,
        decision=RuleDecision.SELECTIVE,
        constraints=constraints,
    )


def default_policy_rules() -> tuple[PolicyRule, ...]:
    rules = [
        # Stock personas.
        _grant("g-maps-gps", "com.maps.nav", "GPS", "READ"),
        _grant("g-maps-wifi", "com.maps.nav", "WIFI_RADIO", "READ"),
        _grant("g-camera-rec", "com.camera.pro", "CAMERA", "RECORD"),
        _grant("g-camera-photos-w", "com.camera.pro", "PHOTOS", "WRITE"),
        _grant("g-camera-photos-r", "com.camera.pro", "PHOTOS", "READ"),
        _grant("g-chat-contacts", "com.chat.hello", "CONTACTS", "READ"),
        _grant("g-chat-sms-w", "com.chat.hello", "SMS", "WRITE"),
        _grant("g-chat-sms-r", "com.chat.hello", "SMS", "READ"),
        _grant("g-voice-mic", "com.voice.memo", "MICROPHONE", "RECORD"),
        _grant("g-fit-gps", "com.fit.tracker", "GPS", "READ"),
        _grant("g-fit-accel", "com.fit.tracker", "ACCELEROMETER", "READ"),
        _grant("g-photo-r", "com.photo.edit", "PHOTOS", "READ"),
        _grant("g-photo-w", "com.photo.edit", "PHOTOS", "WRITE"),
        _grant("g-cal-r", "com.cal.plan", "CALENDAR", "READ"),
        _grant("g-cal-w", "com.cal.plan", "CALENDAR", "WRITE"),
        _grant("g-social-contacts", "com.social.wave", "CONTACTS", "READ"),
        # Wider fleet.
        _grant("g-bank-id", "com.bank.safe", "DEVICE_IDENTITY", "READ"),
        _grant("g-bank-sms", "com.bank.safe", "SMS", "READ"),
        _grant("g-mail-contacts", "com.mail.lite", "CONTACTS", "READ"),
        _grant("g-mail-cal", "com.mail.lite", "CALENDAR", "READ"),
        _grant("g-pay-id", "com.pay.tap", "DEVICE_IDENTITY", "READ"),
        _grant("g-pay-camera", "com.pay.tap", "CAMERA", "RECORD"),
        _grant("g-ride-gps", "com.ride.go", "GPS", "READ"),
        _grant("g-ride-contacts", "com.ride.go", "CONTACTS", "READ"),
        _grant("g-call-mic", "com.video.call", "MICROPHONE", "RECORD"),
        _grant("g-call-camera", "com.video.call", "CAMERA", "RECORD"),
        _grant("g-scan-camera", "com.scan.doc", "CAMERA", "RECORD"),
        _grant("g-scan-photos", "com.scan.doc", "PHOTOS", "WRITE"),
        _grant("g-vault-photos", "com.backup.vault", "PHOTOS", "READ"),
        _grant("g-vault-contacts", "com.backup.vault", "CONTACTS", "READ"),
        _grant("g-vault-sms", "com.backup.vault", "SMS", "READ"),
        _grant("g-vault-calllog", "com.backup.vault", "CALL_LOG", "READ"),
        _grant("g-home-wifi-r", "com.home.ctrl", "WIFI_RADIO", "READ"),
        _grant("g-home-wifi-w", "com.home.ctrl", "WIFI_RADIO", "WRITE"),
        _grant("g-health-accel", "com.health.sync", "ACCELEROMETER", "READ"),
        _grant("g-health-gyro", "com.health.sync", "GYROSCOPE", "READ"),
        _grant("g-translate-mic", "com.translate.it", "MICROPHONE", "RECORD"),
        _grant("g-news-gps", "com.news.daily", "GPS", "READ"),
        # Bounded grants.
        _selective(
            "s-weather-gps",
            "com.weather.now",
            "GPS",
            "READ",
            Constraints(max_per_window=FrequencyWindow(count=10, window_s=60)),
        ),
        _selective(
            "s-social-camera",
            "com.social.wave",
            "CAMERA",
            "RECORD",
            Constraints(foreground_only=True),
        ),
        _selective(
            "s-social-mic",
            "com.social.wave",
            "MICROPHONE",
            "RECORD",
            Constraints(max_per_window=FrequencyWindow(count=5, window_s=60), foreground_only=True),
        ),
        _selective(
            "s-kids-camera",
            "com.kids.draw",
            "CAMERA",
            "RECORD",
            Constraints(foreground_only=True),
        ),
        _selective(
            "s-deals-gps",
            "com.shop.deals",
            "GPS",
            "READ",
            Constraints(max_per_window=FrequencyWindow(count=5, window_s=300)),
        ),
        _selective(
            "s-note-mic",
            "com.note.taker",
            "MICROPHONE",
            "RECORD",
            Constraints(redact=True),
        ),
        # Known-bad app families.
        _deny("d-game-mic", "com.game.*", "MICROPHONE", "*", 500),
        _deny("d-game-gps-tx", "com.game.*", "GPS", "TRANSMIT", 500),
        _deny("d-game-contacts", "com.game.*", "CONTACTS", "*", 500),
        _deny("d-adtrack-id", "com.adtrack.*", "DEVICE_IDENTITY", "*", 500),
        _deny("d-adtrack-calllog", "com.adtrack.*", "CALL_LOG", "*", 500),
        _deny("d-adtrack-sw-tx", "com.adtrack.*", "category:SOFTWARE", "TRANSMIT", 500),
        _deny("d-flash-contacts", "com.flashlight.*", "CONTACTS", "*", 700),
        _deny("d-flash-id", "com.flashlight.*", "DEVICE_IDENTITY", "*", 700),
        _deny("d-wall-sms", "com.wallpaper.*", "SMS", "*", 700),
        _deny("d-emoji-calllog", "com.emoji.*", "CALL_LOG", "*", 700),
        _deny("d-freegame-hw-tx", "com.freegame.*", "category:HARDWARE", "TRANSMIT", 650),
        _deny("d-torrent-photos", "com.torrent.*", "PHOTOS", "*", 650),
        _deny("d-kiosk-gyro", "com.kiosk.*", "GYROSCOPE", "*", 500),
        _deny("d-demo-accel-tx", "com.demo.*", "ACCELEROMETER", "TRANSMIT", 500),
        # Blanket hygiene.
        _deny("d-any-id-tx", "*", "DEVICE_IDENTITY", "TRANSMIT", 900),
        _deny("d-any-calllog-tx", "*", "CALL_LOG", "TRANSMIT", 900),
        _deny(
            "d-bg-sms-write",
            "*",
            "SMS",
            "WRITE",
            850,
            when=RuleContext(app_state=AppState.BACKGROUND),
        ),
        # Quiet hours.
        _deny("d-night-camera", "com.social.*", "CAMERA", "*", 600, when=RuleContext(time_window=_NIGHT)),
        _deny("d-night-mic", "com.social.*", "MICROPHONE", "*", 600, when=RuleContext(time_window=_NIGHT)),
        _deny(
            "d-night-party-photos",
            "com.party.*",
            "PHOTOS",
            "READ",
            600,
            when=RuleContext(time_window=(0, 21_600_000)),
        ),
    ]
    return tuple(rules)


def default_policy_set(version: int = 1) -> PolicySet:
    return PolicySet(
        version=version,
        rules=default_policy_rules(),
        defaults={Criticality.CRITICAL: RuleDecision.DENY, Criticality.NORMAL: RuleDecision.GRANT},
    )


def default_policy_document() -> str:
    """Canonical text of the built-in pack."""
    return serialize_policy_document(default_policy_set())


def small_policy_document(rule_count: int) -> str:
    """A truncated variant of the built-in pack, for cost-model comparisons."""
    full = default_policy_rules()
    pset = PolicySet(
        version=1,
        rules=full[:rule_count],
        defaults={Criticality.CRITICAL: RuleDecision.DENY, Criticality.NORMAL: RuleDecision.GRANT},
    )
    return serialize_policy_document(pset)
