"""Deterministic discrete-event network with man-in-the-middle tap points.

Endpoints are named; each path carries a channel-security label (plain
HTTP, HTTPS backed by a mini-TLS server config, or a phone line). Events
are delivered in nondecreasing time order with insertion order breaking
ties, so a full trace is a pure function of (scenario, seed).

Taps are the adversary surface: a tap matches a (src, dst) pair and maps
each event to a decision — forward it, modify it (optionally re-routing
it to a different endpoint), drop it, or replace it with injected events.
Taps compose in installation order; later taps see earlier modifications.

On HTTPS paths, application payloads travel as encrypted records, so a
tap that flips ciphertext bits without holding the session key produces a
record failure at the receiver rather than a silent change.
"""

import fnmatch
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .minitls import ServerTlsConfig


class NetsimError(Exception):
    pass


class SchedulingAfterFinalize(NetsimError):
    pass


class UnknownHandle(NetsimError):
    pass


# --- channel policies ---

@dataclass(frozen=True)
class PlainHttp:
    pass


@dataclass(frozen=True)
class Https:
    server_config: ServerTlsConfig


@dataclass(frozen=True)
class PhoneIvr:
    pass


ChannelPolicy = Any  # PlainHttp | Https | PhoneIvr


@dataclass
class Endpoint:
    """Named network participant. `policies` maps peer-name patterns
    (fnmatch globs, e.g. "voter*") to the channel label used when that
    peer talks to this endpoint.
    """

    name: str
    policies: dict[str, ChannelPolicy] = field(default_factory=dict)
    handler: Optional[Callable[["Event", "Simulator"], None]] = None

    def policy_for(self, peer: str) -> Optional[ChannelPolicy]:
        if peer in self.policies:
            return self.policies[peer]
        for pattern, policy in self.policies.items():
            if fnmatch.fnmatchcase(peer, pattern):
                return policy
        return None


# --- events and decisions ---

@dataclass
class Event:
    time: int
    src: str
    dst: str
    payload: Any
    seq: int = -1


class Decision:
    """Tap verdict on one event."""

    FORWARD = "forward"
    DROP = "drop"

    def __init__(self, kind: str, payload: Any = None, dst: Optional[str] = None,
                 events: Optional[list[Event]] = None):
        self.kind = kind
        self.payload = payload
        self.dst = dst
        self.events = events or []

    @classmethod
    def forward(cls) -> "Decision":
        return cls("forward")

    @classmethod
    def modify(cls, payload: Any, dst: Optional[str] = None) -> "Decision":
        """Substitute the payload; optionally re-route to another endpoint."""
        return cls("modify", payload=payload, dst=dst)

    @classmethod
    def drop(cls) -> "Decision":
        return cls("drop")

    @classmethod
    def inject(cls, events: list[Event]) -> "Decision":
        """Replace this event with the given ones (include a copy of the
        original to keep it).
        """
        return cls("inject", events=events)


@dataclass
class MitmTap:
    name: str
    matcher: Callable[[str, str], bool]
    handler: Callable[[Event, "Simulator"], Decision]


class TapHandle:
    def __init__(self, tap: MitmTap, token: int):
        self.tap = tap
        self.token = token


def describe_payload(payload: Any) -> str:
    """Stable single-token description for trace lines. Payload objects may
    provide trace_fields() -> dict; bytes are hexed; everything else falls
    back to its class name (never repr, which can leak object ids).
    """
    fields = None
    if hasattr(payload, "trace_fields"):
        fields = payload.trace_fields()
    elif isinstance(payload, bytes):
        return f"bytes[{len(payload)}]:{payload[:8].hex()}"
    elif isinstance(payload, (str, int, float, bool)):
        return repr(payload)
    if fields is not None:
        inner = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(fields.items()))
        return f"{type(payload).__name__}({inner})"
    return type(payload).__name__


def _fmt(v: Any) -> str:
    if isinstance(v, bytes):
        return v[:8].hex()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


class Simulator:
    """Single-threaded event loop with a global virtual clock."""

    def __init__(self, start_time: int = 0):
        self.now = start_time
        self._queue: list[tuple[int, int, Event]] = []  # heap on (time, seq)
        self._seq = 0
        self._taps: list[tuple[int, MitmTap]] = []
        self._tap_token = 0
        self.endpoints: dict[str, Endpoint] = {}
        self.trace: list[str] = []
        self.finalized = False
        self.counters = {"scheduled": 0, "delivered": 0, "dropped": 0, "replaced": 0}
        self._path_delay: dict[tuple[str, str], int] = {}
        self.default_delay = 0

    # --- topology ---

    def add_endpoint(self, endpoint: Endpoint) -> Endpoint:
        if endpoint.name in self.endpoints:
            raise NetsimError(f"duplicate endpoint {endpoint.name}")
        self.endpoints[endpoint.name] = endpoint
        return endpoint

    def endpoint(self, name: str) -> Endpoint:
        ep = self.endpoints.get(name)
        if ep is None:
            # voters and other families register lazily via glob owners
            for candidate in self.endpoints.values():
                if fnmatch.fnmatchcase(name, candidate.name):
                    return candidate
            raise NetsimError(f"unknown endpoint {name}")
        return ep

    def policy_for(self, src: str, dst: str) -> Optional[ChannelPolicy]:
        return self.endpoint(dst).policy_for(src)

    def set_path_delay(self, src: str, dst: str, delay: int) -> None:
        self._path_delay[(src, dst)] = delay

    def _delay(self, src: str, dst: str) -> int:
        return self._path_delay.get((src, dst), self.default_delay)

    # --- taps ---

    def install_tap(self, tap: MitmTap) -> TapHandle:
        self._tap_token += 1
        self._taps.append((self._tap_token, tap))
        return TapHandle(tap, self._tap_token)

    def remove_tap(self, handle: TapHandle) -> None:
        for i, (token, _) in enumerate(self._taps):
            if token == handle.token:
                del self._taps[i]
                return
        raise UnknownHandle("tap not installed")

    # --- scheduling and delivery ---

    def schedule(self, time: int, src: str, dst: str, payload: Any) -> Event:
        if self.finalized:
            raise SchedulingAfterFinalize("simulator already finalized")
        event = Event(time=time + self._delay(src, dst), src=src, dst=dst,
                      payload=payload, seq=self._seq)
        self._seq += 1
        self.counters["scheduled"] += 1
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event

    def _pop_next(self, limit: Optional[int]) -> Optional[Event]:
        if not self._queue:
            return None
        if limit is not None and self._queue[0][0] > limit:
            return None
        return heapq.heappop(self._queue)[2]

    def _apply_taps(self, event: Event) -> Optional[Event]:
        notes = []
        for _, tap in list(self._taps):
            if not tap.matcher(event.src, event.dst):
                continue
            decision = tap.handler(event, self)
            if decision is None or decision.kind == Decision.FORWARD:
                continue
            if decision.kind == "modify":
                event = Event(time=event.time, src=event.src,
                              dst=decision.dst or event.dst,
                              payload=decision.payload, seq=event.seq)
                notes.append(f"modified:{tap.name}")
                continue
            if decision.kind == Decision.DROP:
                self.counters["dropped"] += 1
                self._trace(event, "drop", notes + [f"dropped:{tap.name}"])
                return None
            if decision.kind == "inject":
                self.counters["replaced"] += 1
                self._trace(event, "replace", notes + [f"replaced:{tap.name}"])
                for injected in decision.events:
                    self.schedule(injected.time, injected.src, injected.dst,
                                  injected.payload)
                return None
            raise NetsimError(f"unknown decision {decision.kind}")
        event._notes = notes  # type: ignore[attr-defined]
        return event

    def _trace(self, event: Event, status: str, notes: list[str]) -> None:
        note = ";".join(notes) if notes else "-"
        self.trace.append(
            f"t={event.time:08d} seq={event.seq:06d} {event.src}->{event.dst} "
            f"{status} {describe_payload(event.payload)} {note}"
        )

    def run_until(self, limit: Optional[int] = None) -> list[Event]:
        """Deliver every event with time <= limit (all pending if None).
        Returns the delivered events in delivery order.
        """
        delivered = []
        while True:
            event = self._pop_next(limit)
            if event is None:
                break
            self.now = max(self.now, event.time)
            final = self._apply_taps(event)
            if final is None:
                continue
            self.counters["delivered"] += 1
            self._trace(final, "deliver", getattr(final, "_notes", []))
            delivered.append(final)
            handler = self.endpoint(final.dst).handler
            if handler is not None:
                handler(final, self)
        return delivered

    def run_all(self) -> list[Event]:
        return self.run_until(None)

    def finalize(self) -> dict[str, int]:
        """Stop accepting events and reconcile conservation: every scheduled
        event was delivered, dropped, replaced, or is still pending.
        """
        self.finalized = True
        pending = len(self._queue)
        counts = dict(self.counters)
        counts["pending"] = pending
        if counts["delivered"] + counts["dropped"] + counts["replaced"] + pending \
                != counts["scheduled"]:
            raise NetsimError(f"event conservation violated: {counts}")
        return counts


# --- the pre-TLS stripping attack ---

def sslstrip_decision(sim: Simulator, event: Event, attacker_endpoint: str) -> Decision:
    """Redirect a registration attempt to the attacker's look-alike site.
    Only possible before TLS: on HTTPS paths this refuses and forwards.
    """
    policy = sim.policy_for(event.src, event.dst)
    if not isinstance(policy, PlainHttp):
        return Decision.forward()
    return Decision.modify(event.payload, dst=attacker_endpoint)


def make_sslstrip_tap(attacker_endpoint: str, src_pattern: str = "voter*",
                      dst_name: str = "registration-gateway") -> MitmTap:
    def matcher(src: str, dst: str) -> bool:
        return fnmatch.fnmatchcase(src, src_pattern) and dst == dst_name

    def handler(event: Event, sim: Simulator) -> Decision:
        return sslstrip_decision(sim, event, attacker_endpoint)

    return MitmTap(name="sslstrip", matcher=matcher, handler=handler)
