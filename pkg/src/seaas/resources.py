"""Device resource vocabulary: the hardware/software inventory of a simulated
mobile device, the apps that touch it, and the access events every other layer
consumes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class UnknownResource(Exception):
    """Raised for a resource name outside the built-in inventory."""


class InventoryMismatch(Exception):
    """Raised when an event references a resource the device does not carry."""


class MalformedEvent(Exception):
    """Raised for an event whose fields violate the event contract."""


class Category(str, Enum):
    HARDWARE = "HARDWARE"
    SOFTWARE = "SOFTWARE"


class Resource(str, Enum):
    MICROPHONE = "MICROPHONE"
    GPS = "GPS"
    CAMERA = "CAMERA"
    ACCELEROMETER = "ACCELEROMETER"
    GYROSCOPE = "GYROSCOPE"
    WIFI_RADIO = "WIFI_RADIO"
    DEVICE_IDENTITY = "DEVICE_IDENTITY"
    CONTACTS = "CONTACTS"
    PHOTOS = "PHOTOS"
    SMS = "SMS"
    CALL_LOG = "CALL_LOG"
    CALENDAR = "CALENDAR"

    @property
    def category(self) -> Category:
        return Category.HARDWARE if self in _HARDWARE else Category.SOFTWARE


_HARDWARE = frozenset(
    {
        Resource.MICROPHONE,
        Resource.GPS,
        Resource.CAMERA,
        Resource.ACCELEROMETER,
        Resource.GYROSCOPE,
        Resource.WIFI_RADIO,
        Resource.DEVICE_IDENTITY,
    }
)

_SOFTWARE = frozenset(
    {
        Resource.CONTACTS,
        Resource.PHOTOS,
        Resource.SMS,
        Resource.CALL_LOG,
        Resource.CALENDAR,
    }
)

FULL_INVENTORY = frozenset(Resource)

# Fixed in code, not configurable: a deterministic criticality table keeps
# default-deny semantics reproducible.
_CRITICAL = frozenset(
    {
        Resource.MICROPHONE,
        Resource.GPS,
        Resource.CAMERA,
        Resource.CONTACTS,
        Resource.PHOTOS,
        Resource.SMS,
        Resource.CALL_LOG,
        Resource.DEVICE_IDENTITY,
    }
)


class Criticality(str, Enum):
    CRITICAL = "CRITICAL"
    NORMAL = "NORMAL"


class Action(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    RECORD = "RECORD"
    TRANSMIT = "TRANSMIT"


class AppState(str, Enum):
    FOREGROUND = "FOREGROUND"
    BACKGROUND = "BACKGROUND"


def resource_from_name(name: str) -> Resource:
    try:
        return Resource(name)
    except ValueError:
        raise UnknownResource(f"unknown resource: {name!r}") from None


def classify_criticality(resource: Resource | str) -> Criticality:
    """Map a resource to its fixed criticality level. Total over the inventory."""
    if not isinstance(resource, Resource):
        resource = resource_from_name(str(resource))
    return Criticality.CRITICAL if resource in _CRITICAL else Criticality.NORMAL


def valid_app_id(app_id: str) -> bool:
    return bool(app_id) and not any(ch.isspace() for ch in app_id)


@dataclass(frozen=True)
class DeviceDescriptor:
    device_id: str
    resources: frozenset[Resource]
    agent_version: str = "0.1.0"

    def __post_init__(self) -> None:
        if not self.device_id:
            raise MalformedEvent("device_id must be non-empty")
        if not self.resources <= FULL_INVENTORY:
            raise UnknownResource("inventory contains resources outside the built-in set")

    def to_wire(self) -> dict:
        return {
            "device_id": self.device_id,
            "resources": sorted(r.value for r in self.resources),
            "agent_version": self.agent_version,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "DeviceDescriptor":
        if not isinstance(obj, dict) or not isinstance(obj.get("device_id"), str):
            raise MalformedEvent("bad device descriptor")
        names = obj.get("resources")
        if not isinstance(names, list):
            raise MalformedEvent("bad device descriptor: resources must be a list")
        resources = frozenset(resource_from_name(n) for n in names)
        version = obj.get("agent_version", "0.1.0")
        if not isinstance(version, str):
            raise MalformedEvent("bad device descriptor: agent_version must be a string")
        return cls(device_id=obj["device_id"], resources=resources, agent_version=version)


def full_device(device_id: str, agent_version: str = "0.1.0") -> DeviceDescriptor:
    """A device carrying the whole built-in inventory."""
    return DeviceDescriptor(device_id=device_id, resources=FULL_INVENTORY, agent_version=agent_version)


@dataclass(frozen=True)
class AccessEvent:
    """One attempt by an app to use a device resource, with context."""

    event_seq: int
    device_id: str
    app_id: str
    resource: Resource
    action: Action
    app_state: AppState
    at_ms: int
    payload_bytes: int = 0

    def to_wire(self) -> dict:
        return {
            "device": self.device_id,
            "seq": self.event_seq,
            "app": self.app_id,
            "resource": self.resource.value,
            "action": self.action.value,
            "state": self.app_state.value,
            "at_ms": self.at_ms,
            "bytes": self.payload_bytes,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "AccessEvent":
        if not isinstance(obj, dict):
            raise MalformedEvent("event must be an object")
        try:
            return cls(
                event_seq=_require_int(obj, "seq"),
                device_id=_require_str(obj, "device"),
                app_id=_require_str(obj, "app"),
                resource=resource_from_name(_require_str(obj, "resource")),
                action=Action(_require_str(obj, "action")),
                app_state=AppState(_require_str(obj, "state")),
                at_ms=_require_int(obj, "at_ms"),
                payload_bytes=_require_int(obj, "bytes"),
            )
        except ValueError as exc:
            raise MalformedEvent(f"bad event field: {exc}") from None


def _require_str(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise MalformedEvent(f"event field {key!r} must be a string")
    return value


def _require_int(obj: dict, key: str) -> int:
    value = obj.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise MalformedEvent(f"event field {key!r} must be an integer")
    return value


class EventStatus(str, Enum):
    ACCEPTED = "ACCEPTED"
    DUPLICATE = "DUPLICATE"


def validate_event(
    event: AccessEvent, device: DeviceDescriptor, last_seq: int
) -> tuple[EventStatus, AccessEvent]:
    """Check an incoming event against the device's inventory and cursor.

    Returns the event unchanged, tagged ACCEPTED when it advances the
    per-device sequence or DUPLICATE when it replays one already seen.
    Duplicates are not errors: replay must stay idempotent.
    """
    if not valid_app_id(event.app_id):
        raise MalformedEvent(f"malformed app id: {event.app_id!r}")
    if event.payload_bytes < 0:
        raise MalformedEvent("payload_bytes must be non-negative")
    if event.resource not in device.resources:
        raise InventoryMismatch(
            f"device {device.device_id} does not carry {event.resource.value}"
        )
    if event.event_seq <= last_seq:
        return EventStatus.DUPLICATE, event
    return EventStatus.ACCEPTED, event
