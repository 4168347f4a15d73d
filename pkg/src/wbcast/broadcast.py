"""Witness-based broadcast, Bracha's broadcast and the long-lived wrapper.

Every state machine here is a plain object whose handlers take one input
(a broadcast call or an authenticated message) and return an
:class:`Emission` describing what to send and whether a payload was
delivered. Nothing performs I/O; ``netsim`` owns routing and the clock.
"""

from __future__ import annotations

import enum
import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import FaultBoundError, ProtocolMisuseError
from .slash import DEFAULT_PARAMS, SlashParams, SlashState, event_bytes, slash_absorb


class Kind(str, enum.Enum):
    SEND = "SEND"
    NOTIFY = "NOTIFY"
    ECHO = "ECHO"
    READY = "READY"
    VALIDATE = "VALIDATE"
    RECOVER = "RECOVER"
    REPLY = "REPLY"
    RECOVERY_ECHO = "RECOVERY_ECHO"
    RECOVERY_READY = "RECOVERY_READY"
    LOG = "LOG"


class Tag(str, enum.Enum):
    W = "W"
    PI = "PI"
    NONE = "none"


@dataclass(frozen=True, order=True)
class EventId:
    source: int
    seq: int

    def encode(self) -> bytes:
        return event_bytes(self.source, self.seq)


@dataclass(frozen=True)
class Payload:
    """A broadcast value bound to its event and signed by the event's source."""

    event: EventId
    value: bytes
    signature: bytes

    @property
    def size(self) -> int:
        return len(self.value)


class Keyring:
    """Hash-based stand-in for per-process signing keys.

    Signatures are SHA256(key || event || value). Verification has access
    to every key, which models a public-key check; forging requires the
    source's key, which only the adversary's own processes expose.
    """

    def __init__(self, n: int, seed: int = 0):
        self._keys = [hashlib.sha256(b"key" + seed.to_bytes(8, "big") + i.to_bytes(8, "big")).digest()
                      for i in range(n)]

    def _mac(self, event: EventId, value: bytes) -> bytes:
        return hashlib.sha256(self._keys[event.source] + event.encode() + value).digest()

    def sign(self, event: EventId, value: bytes) -> Payload:
        return Payload(event, value, self._mac(event, value))

    def verify(self, payload: Payload) -> bool:
        if not 0 <= payload.event.source < len(self._keys):
            return False
        return payload.signature == self._mac(payload.event, payload.value)


@dataclass(frozen=True)
class ProtocolMessage:
    """One wire message; ``sender`` is authenticated by the transport.

    ``carried`` is set on RECOVER messages to the kind of the embedded
    Pi-tagged message (None for the bottom value). ``log`` carries a
    round-log delta on LOG messages.
    """

    instance: Optional[EventId]
    kind: Kind
    payload: Optional[Payload]
    tag: Tag
    sender: int
    carried: Optional[Kind] = None
    log: object = None

    @property
    def size(self) -> int:
        units = 1 + (self.payload.size if self.payload is not None else 0)
        if self.log is not None:
            units += getattr(self.log, "size", 0)
        return units


ALL = None  # destination marker: every process


@dataclass(frozen=True)
class Send:
    dests: Optional[frozenset]
    message: ProtocolMessage


@dataclass
class Emission:
    sends: list = field(default_factory=list)
    deliver: Optional[Payload] = None
    set_timer: bool = False
    rejected: bool = False

    def __bool__(self):
        return bool(self.sends) or self.deliver is not None or self.set_timer

    def send(self, dests, message: ProtocolMessage):
        if dests is not ALL:
            dests = frozenset(dests)
            if not dests:
                return
        self.sends.append(Send(dests, message))

    def extend(self, other: "Emission") -> "Emission":
        self.sends.extend(other.sends)
        if other.deliver is not None:
            self.deliver = other.deliver
        self.set_timer |= other.set_timer
        self.rejected |= other.rejected
        return self


def quorum_size(n: int, f: int) -> int:
    """Byzantine quorum floor((n + f) / 2) + 1; any two intersect in >= f + 1."""
    if f < 0 or 3 * f >= n:
        raise FaultBoundError(f"need 0 <= f < n/3, got n={n}, f={f}")
    return (n + f) // 2 + 1


Verifier = Callable[[Payload], bool]


def _accept_all(_payload: Payload) -> bool:
    return True


_WBB_TAGS = {
    Kind.NOTIFY: {Tag.PI},
    Kind.ECHO: {Tag.W, Tag.PI},
    Kind.READY: {Tag.W, Tag.PI},
    Kind.VALIDATE: {Tag.NONE},
}


class WBBInstance:
    """One witness-based broadcast instance at process ``pid``.

    ``own`` is W_i (the witnesses this process waits on, threshold ``k``)
    and ``potential`` is V_i (the processes it transmits to). The process
    acts as a witness iff ``pid`` is in V_i.
    """

    def __init__(self, pid: int, event: EventId, n: int, f: int,
                 own: Iterable[int], potential: Iterable[int], k: int,
                 verify: Verifier = _accept_all, quorum: Optional[int] = None):
        if k < 1:
            raise ProtocolMisuseError(f"witness threshold must be >= 1, got {k}")
        self.pid = pid
        self.event = event
        self.n, self.f = n, f
        self.quorum = quorum_size(n, f) if quorum is None else quorum
        self.own = frozenset(own)
        self.potential = frozenset(potential)
        self.k = k
        self.verify = verify
        self.is_witness = pid in self.potential
        self.delivered: Optional[Payload] = None
        self.phase = "witness"
        self.last_pi: Optional[tuple[Kind, Payload]] = None
        self._fired: set[str] = set()
        self._tally: dict[tuple, set[int]] = defaultdict(set)

    # -- helpers ---------------------------------------------------------

    def _once(self, action: str) -> bool:
        if action in self._fired:
            return False
        self._fired.add(action)
        return True

    def fired(self, action: str) -> bool:
        return action in self._fired

    def _msg(self, kind: Kind, payload: Payload, tag: Tag) -> ProtocolMessage:
        return ProtocolMessage(self.event, kind, payload, tag, self.pid)

    def _send_pi(self, out: Emission, kind: Kind, payload: Payload):
        self.last_pi = (kind, payload)
        out.send(self.potential, self._msg(kind, payload, Tag.PI))

    def halt(self):
        """Stop emitting WBB messages; VALIDATE-based delivery stays possible."""
        self.phase = "recovering"

    @property
    def halted(self) -> bool:
        return self.phase == "recovering"

    def valid(self, msg: ProtocolMessage) -> bool:
        allowed = _WBB_TAGS.get(msg.kind)
        if allowed is None or msg.tag not in allowed or msg.instance != self.event:
            return False
        p = msg.payload
        return p is not None and p.event == self.event and self.verify(p)

    # -- transitions -----------------------------------------------------

    def broadcast(self, payload: Payload) -> Emission:
        if self.pid != self.event.source or payload.event != self.event:
            raise ProtocolMisuseError("only the event's source may broadcast its payload")
        if not self._once("notify"):
            raise ProtocolMisuseError(f"instance {self.event} already broadcast")
        out = Emission()
        self._send_pi(out, Kind.NOTIFY, payload)
        return out

    def relay(self, payload: Payload) -> Emission:
        """Forward a first-seen payload to V_i (initialisation update used with recovery)."""
        out = Emission()
        if not self.halted and payload.event == self.event and self._once("notify"):
            self._send_pi(out, Kind.NOTIFY, payload)
        return out

    def on_message(self, msg: ProtocolMessage) -> Emission:
        if not self.valid(msg):
            return Emission(rejected=True)
        key = (msg.kind, msg.tag, msg.payload)
        senders = self._tally[key]
        if msg.sender in senders:
            return Emission()
        senders.add(msg.sender)
        out = Emission()
        m = msg.payload
        kind, tag = msg.kind, msg.tag

        if not self.halted:
            if kind is Kind.NOTIFY and self.is_witness and self._once("echo_w"):
                out.send(ALL, self._msg(Kind.ECHO, m, Tag.W))
            elif kind is Kind.ECHO and tag is Tag.W and self._once("echo_pi"):
                self._send_pi(out, Kind.ECHO, m)
            if (self.is_witness and kind in (Kind.ECHO, Kind.READY) and tag is Tag.PI
                    and not self.fired("ready_w")
                    and (len(self._tally[(Kind.ECHO, Tag.PI, m)]) >= self.quorum
                         or len(self._tally[(Kind.READY, Tag.PI, m)]) >= self.f + 1)):
                self._once("ready_w")
                out.send(ALL, self._msg(Kind.READY, m, Tag.W))
            if (kind is Kind.READY and tag is Tag.W and not self.fired("ready_pi")
                    and len(senders & self.own) >= self.k):
                self._once("ready_pi")
                self._send_pi(out, Kind.READY, m)
            if (self.is_witness and kind is Kind.READY and tag is Tag.PI
                    and not self.fired("validate") and len(senders) >= self.quorum):
                self._once("validate")
                out.send(ALL, self._msg(Kind.VALIDATE, m, Tag.NONE))
        if (kind is Kind.VALIDATE and self.delivered is None
                and len(senders & self.own) >= self.k):
            self.delivered = m
            out.deliver = m
        return out


class BrachaInstance:
    """Classical three-phase Byzantine reliable broadcast (SEND, ECHO, READY)."""

    def __init__(self, pid: int, event: EventId, n: int, f: int,
                 verify: Verifier = _accept_all, quorum: Optional[int] = None):
        self.pid = pid
        self.event = event
        self.n, self.f = n, f
        self.quorum = quorum_size(n, f) if quorum is None else quorum
        self.verify = verify
        self.delivered: Optional[Payload] = None
        self._fired: set[str] = set()
        self._tally: dict[tuple, set[int]] = defaultdict(set)

    def _msg(self, kind: Kind, payload: Payload) -> ProtocolMessage:
        return ProtocolMessage(self.event, kind, payload, Tag.NONE, self.pid)

    def broadcast(self, payload: Payload) -> Emission:
        if self.pid != self.event.source or payload.event != self.event:
            raise ProtocolMisuseError("only the event's source may broadcast its payload")
        if "send" in self._fired:
            raise ProtocolMisuseError(f"instance {self.event} already broadcast")
        self._fired.add("send")
        out = Emission()
        out.send(ALL, self._msg(Kind.SEND, payload))
        return out

    def valid(self, msg: ProtocolMessage) -> bool:
        if msg.kind not in (Kind.SEND, Kind.ECHO, Kind.READY) or msg.tag is not Tag.NONE:
            return False
        if msg.kind is Kind.SEND and msg.sender != self.event.source:
            return False
        p = msg.payload
        return (msg.instance == self.event and p is not None and p.event == self.event
                and self.verify(p))

    def on_message(self, msg: ProtocolMessage) -> Emission:
        if not self.valid(msg):
            return Emission(rejected=True)
        key = (msg.kind, msg.payload)
        if msg.sender in self._tally[key]:
            return Emission()
        self._tally[key].add(msg.sender)
        out = Emission()
        m = msg.payload
        if msg.kind is Kind.SEND and "echo" not in self._fired:
            self._fired.add("echo")
            out.send(ALL, self._msg(Kind.ECHO, m))
        if ("ready" not in self._fired
                and (len(self._tally[(Kind.ECHO, m)]) >= self.quorum
                     or len(self._tally[(Kind.READY, m)]) >= self.f + 1)):
            self._fired.add("ready")
            out.send(ALL, self._msg(Kind.READY, m))
        if self.delivered is None and len(self._tally[(Kind.READY, m)]) >= self.quorum:
            self.delivered = m
            out.deliver = m
        return out


class InstanceTable:
    """Per-process instance registry; initialising a known event is a no-op."""

    def __init__(self, factory: Callable[[EventId], object]):
        self._factory = factory
        self._by_event: dict[EventId, object] = {}

    def init(self, event: EventId):
        """Return (instance, created)."""
        inst = self._by_event.get(event)
        if inst is not None:
            return inst, False
        inst = self._by_event[event] = self._factory(event)
        return inst, True

    def get(self, event: EventId):
        return self._by_event.get(event)

    def __contains__(self, event):
        return event in self._by_event

    def __len__(self):
        return len(self._by_event)

    def events(self):
        return list(self._by_event)


class LongLivedBroadcast:
    """Sequence numbering and delivered history on top of single-shot instances."""

    def __init__(self, pid: int, slash_params: SlashParams = DEFAULT_PARAMS):
        self.pid = pid
        self.seq = 0
        self.hist: dict[EventId, Payload] = {}
        self.slash = SlashState(slash_params)
        self._pending: Optional[EventId] = None

    @property
    def ready_to_broadcast(self) -> bool:
        return self._pending is None

    def broadcast(self, value: bytes, sign: Callable[[EventId, bytes], Payload]) -> Payload:
        if self._pending is not None:
            raise ProtocolMisuseError(
                f"process {self.pid} broadcast again before delivering {self._pending}")
        self.seq += 1
        event = EventId(self.pid, self.seq)
        self._pending = event
        return sign(event, value)

    def on_deliver(self, payload: Payload) -> bool:
        """Record a delivery; returns False for an EventId already in the history."""
        event = payload.event
        if event in self.hist:
            return False
        self.hist[event] = payload
        self.slash = slash_absorb(self.slash, event.encode())
        if event == self._pending:
            self._pending = None
        return True
