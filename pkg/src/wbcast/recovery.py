"""Timeout fallback for witness-based broadcast and the close-histories rounds.

:class:`RecoveryInstance` wraps a :class:`~wbcast.broadcast.WBBInstance`.
After a timeout (or a delivery) it harvests the last Pi-tagged message of
every process and finishes with a Bracha-style echo/ready exchange, so a
payload delivered through witnesses can never be contradicted.

The round mechanism decides, once per round, whether a process may keep
using witnesses or must go straight to recovery.
"""

from __future__ import annotations

import enum
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .broadcast import ALL, Emission, EventId, Kind, Payload, ProtocolMessage, Tag, WBBInstance
from .errors import ParameterError

_RECOVERY_KINDS = {Kind.RECOVER, Kind.REPLY, Kind.RECOVERY_ECHO, Kind.RECOVERY_READY}
_CARRIED_KINDS = {Kind.NOTIFY, Kind.ECHO, Kind.READY}


def is_recovery_kind(kind: Kind) -> bool:
    return kind in _RECOVERY_KINDS


@dataclass(frozen=True)
class RecoveryRecord:
    kind: Optional[Kind]
    payload: Optional[Payload]


class RecoveryInstance:
    """Recovery automaton for one event at one process.

    Messages arriving before the process has timed out or delivered are
    buffered and replayed in arrival order once the gate opens.
    """

    def __init__(self, wbb: WBBInstance):
        self.wbb = wbb
        self.pid = wbb.pid
        self.event = wbb.event
        self.n, self.f, self.quorum = wbb.n, wbb.f, wbb.quorum
        self.rec_hist: dict[int, RecoveryRecord] = {}
        self.gate_open = False
        self.buffer: list[ProtocolMessage] = []
        self.sent_recover = False
        self.sent_echo = False
        self.sent_ready = False
        self.ready_for: Optional[Payload] = None
        self.replies: dict[Payload, set[int]] = defaultdict(set)
        self.echoes: dict[Payload, set[int]] = defaultdict(set)
        self.readies: dict[Payload, set[int]] = defaultdict(set)

    @property
    def delivered(self) -> Optional[Payload]:
        return self.wbb.delivered

    @property
    def phase(self) -> str:
        return self.wbb.phase

    def _recover_msg(self) -> ProtocolMessage:
        kind, payload = self.wbb.last_pi if self.wbb.last_pi else (None, None)
        return ProtocolMessage(self.event, Kind.RECOVER, payload, Tag.NONE, self.pid, carried=kind)

    def _send_recover(self, out: Emission):
        self.sent_recover = True
        self.wbb.halt()
        out.send(ALL, self._recover_msg())

    def _deliver(self, out: Emission, payload: Payload):
        if self.wbb.delivered is None:
            self.wbb.delivered = payload
            out.deliver = payload

    # -- gate ------------------------------------------------------------

    def _open(self) -> Emission:
        out = Emission()
        if self.gate_open:
            return out
        self.gate_open = True
        pending, self.buffer = self.buffer, []
        for msg in pending:
            out.extend(self._handle(msg))
        return out

    def on_timeout(self) -> Emission:
        """Timer expiry: broadcast RECOVER with the last Pi-tagged message, unless delivered."""
        if self.wbb.delivered is not None:
            return self._open()
        out = Emission()
        if not self.sent_recover:
            self._send_recover(out)
        out.extend(self._open())
        out.extend(self._evaluate())
        return out

    def on_deliver(self) -> Emission:
        """Called after the wrapped WBB instance delivered."""
        return self._open()

    # -- messages --------------------------------------------------------

    def valid(self, msg: ProtocolMessage) -> bool:
        if msg.kind not in _RECOVERY_KINDS or msg.instance != self.event or msg.tag is not Tag.NONE:
            return False
        p = msg.payload
        if p is not None and (p.event != self.event or not self.wbb.verify(p)):
            return False
        if msg.kind is Kind.RECOVER:
            return (p is None) == (msg.carried is None) and (
                msg.carried is None or msg.carried in _CARRIED_KINDS)
        return p is not None

    def on_message(self, msg: ProtocolMessage) -> Emission:
        if not self.valid(msg):
            return Emission(rejected=True)
        if not self.gate_open:
            self.buffer.append(msg)
            return Emission()
        return self._handle(msg)

    def _handle(self, msg: ProtocolMessage) -> Emission:
        out = Emission()
        j, m = msg.sender, msg.payload
        if msg.kind is Kind.RECOVER:
            if j in self.rec_hist:
                return out
            self.rec_hist[j] = RecoveryRecord(msg.carried, m)
            if self.wbb.delivered is not None:
                out.send({j}, ProtocolMessage(self.event, Kind.REPLY, self.wbb.delivered,
                                              Tag.NONE, self.pid))
        elif msg.kind is Kind.REPLY:
            self.replies[m].add(j)
        elif msg.kind is Kind.RECOVERY_ECHO:
            self.echoes[m].add(j)
        elif msg.kind is Kind.RECOVERY_READY:
            self.readies[m].add(j)
        out.extend(self._evaluate())
        return out

    def _echo(self, out: Emission, m: Payload):
        self.sent_echo = True
        out.send(ALL, ProtocolMessage(self.event, Kind.RECOVERY_ECHO, m, Tag.NONE, self.pid))

    def _evaluate(self) -> Emission:
        out = Emission()
        if not self.gate_open:
            return out
        for m, senders in self.replies.items():
            if len(senders) >= self.f + 1:
                self._deliver(out, m)
        if not self.sent_recover and len(self.rec_hist) >= self.f + 1:
            self._send_recover(out)
        if not self.sent_echo and len(self.rec_hist) >= self.quorum:
            values = {rec.payload for rec in self.rec_hist.values() if rec.payload is not None}
            if len(values) == 1:
                self._echo(out, next(iter(values)))
        if not self.sent_echo:
            ready_pi: dict[Payload, int] = defaultdict(int)
            for rec in self.rec_hist.values():
                if rec.kind is Kind.READY:
                    ready_pi[rec.payload] += 1
            for m, count in sorted(ready_pi.items(), key=lambda kv: kv[0].signature):
                if count >= self.f + 1:
                    self._echo(out, m)
                    break
        if not self.sent_ready:
            for m in sorted(set(self.echoes) | set(self.readies), key=lambda p: p.signature):
                if (len(self.echoes[m]) >= self.quorum
                        or len(self.readies[m]) >= self.f + 1):
                    self.sent_ready = True
                    self.ready_for = m
                    out.send(ALL, ProtocolMessage(self.event, Kind.RECOVERY_READY, m,
                                                  Tag.NONE, self.pid))
                    break
        for m, senders in self.readies.items():
            if len(senders) >= self.quorum:
                self._deliver(out, m)
        return out


# -- close-histories rounds ----------------------------------------------------


class Decision(str, enum.Enum):
    USE_WBB = "USE_WBB"
    USE_RECOVERY = "USE_RECOVERY"


@dataclass(frozen=True)
class RoundLog:
    """Delivered events and events a process sent READY for, as of a round start."""

    round: int
    delivered: frozenset = frozenset()
    ready_log: frozenset = frozenset()

    @property
    def ready_events(self) -> frozenset:
        return frozenset(e for e, _ in self.ready_log)


@dataclass(frozen=True)
class LogDelta:
    """A round log encoded against the sender's previous round log."""

    round: int
    base_round: Optional[int]
    delivered_add: frozenset = frozenset()
    delivered_drop: frozenset = frozenset()
    ready_add: frozenset = frozenset()
    ready_drop: frozenset = frozenset()

    @property
    def size(self) -> int:
        return (len(self.delivered_add) + len(self.delivered_drop)
                + len(self.ready_add) + len(self.ready_drop))


def encode_log_delta(prev: Optional[RoundLog], cur: RoundLog) -> LogDelta:
    if prev is None:
        return LogDelta(cur.round, None, cur.delivered, frozenset(), cur.ready_log, frozenset())
    return LogDelta(cur.round, prev.round,
                    cur.delivered - prev.delivered, prev.delivered - cur.delivered,
                    cur.ready_log - prev.ready_log, prev.ready_log - cur.ready_log)


def apply_log_delta(prev: Optional[RoundLog], delta: LogDelta) -> RoundLog:
    if delta.base_round is None:
        base_d, base_r = frozenset(), frozenset()
    else:
        if prev is None or prev.round != delta.base_round:
            raise ParameterError(f"delta for round {delta.round} needs base round {delta.base_round}")
        base_d, base_r = prev.delivered, prev.ready_log
    return RoundLog(delta.round, (base_d - delta.delivered_drop) | delta.delivered_add,
                    (base_r - delta.ready_drop) | delta.ready_add)


class LogReassembler:
    """Rebuilds full round logs per sender from deltas that may arrive out of order."""

    def __init__(self):
        self._last: dict[int, RoundLog] = {}
        self._pending: dict[int, dict[int, LogDelta]] = defaultdict(dict)

    def add(self, sender: int, delta: LogDelta) -> list[RoundLog]:
        """Feed one delta; returns the logs that became reconstructible, in round order."""
        self._pending[sender][delta.base_round] = delta
        done = []
        while True:
            last = self._last.get(sender)
            key = last.round if last is not None else None
            nxt = self._pending[sender].pop(key, None)
            if nxt is None:
                break
            log = apply_log_delta(last, nxt)
            self._last[sender] = log
            done.append(log)
        return done


@dataclass(frozen=True)
class RoundConfig:
    """Round length ``delta_seconds``, permitted log difference ``d_log``,
    tolerable history difference ``gamma`` and max throughput ``th_max``."""

    delta_seconds: float
    d_log: int
    gamma: int
    th_max: float

    def __post_init__(self):
        if self.delta_seconds <= 0:
            raise ParameterError("round length must be positive")
        if self.d_log < 0 or self.gamma < 0 or self.th_max < 0:
            raise ParameterError("d_log, gamma and th_max must be nonnegative")

    @property
    def feasible(self) -> bool:
        """True iff gamma > 3*d_log + 2*delta*th_max (the close-histories guarantee)."""
        return self.gamma > 3 * self.d_log + 2 * self.delta_seconds * self.th_max


def ready_majority(logs: Iterable[RoundLog], f: int) -> frozenset:
    """Events listed in at least f + 1 READY logs."""
    counts: dict[EventId, int] = defaultdict(int)
    for log in logs:
        for e in log.ready_events:
            counts[e] += 1
    return frozenset(e for e, c in counts.items() if c >= f + 1)


def round_tick(local: RoundLog, received: Iterable[RoundLog], cfg: RoundConfig,
               n: int, f: int) -> Decision:
    """Decide how the next round's instances are validated.

    ``received`` holds the logs heard this round, one per sender, including
    the process's own if it was delivered to itself.
    """
    received = list(received)
    close = sum(1 for log in received if len(log.delivered ^ local.delivered) <= cfg.d_log)
    if close < n - f:
        return Decision.USE_RECOVERY
    ready_m = ready_majority(received, f)
    if len(local.delivered ^ ready_m) > cfg.d_log:
        return Decision.USE_RECOVERY
    return Decision.USE_WBB


# -- round-level harness -------------------------------------------------------


@dataclass
class RoundSimResult:
    rounds: int
    decisions: dict = field(default_factory=lambda: defaultdict(int))
    max_wbb_difference: int = 0
    violations: int = 0
    # largest pairwise history difference seen among all correct processes
    max_any_difference: int = 0


def simulate_rounds(cfg: RoundConfig, f: int, rounds: int, seed: int,
                    slow: int | None = None, max_lag_rounds: float = 4.0,
                    byzantine_logs: str = "mirror") -> RoundSimResult:
    """Synthetic executions checking the close-histories guarantee.

    n = 4f + 1 processes (the last f faulty). New messages are first
    delivered at most floor(delta * th_max) per round. Before the first
    delivery of a message a random quorum of n - f processes has sent
    READY for it; every other correct process sends READY and delivers it
    after a random lag, with ``slow`` processes lagging up to
    ``max_lag_rounds`` rounds. Faulty processes either echo every
    recipient's own log back to it (``"mirror"``, the most flattering lie)
    or report empty logs (``"empty"``). Logs are taken at each round start
    and reach every process within the round; each process decides at the
    round end by comparing its own round-start log. The result records, for
    every round, the largest delivered-history difference between two
    processes that chose witnesses, checked at every delivery instant.
    """
    rng = random.Random(seed)
    n = 4 * f + 1
    correct = list(range(n - f))
    if byzantine_logs not in ("mirror", "empty"):
        raise ParameterError(f"unknown faulty log behaviour {byzantine_logs!r}")
    slow = f if slow is None else slow
    slow_set = set(rng.sample(correct, min(slow, len(correct))))
    per_round = int(cfg.delta_seconds * cfg.th_max)
    period = cfg.delta_seconds
    horizon = rounds + 2

    events: list[EventId] = []
    ready_rows, deliver_rows = [], []
    for r in range(horizon):
        for _ in range(per_round):
            t0 = (r + rng.random()) * period
            events.append(EventId(n, len(events)))
            quorum = rng.sample(range(n), n - f)
            ready = [np.inf] * n
            for p in quorum:
                ready[p] = t0 - rng.random() * 0.5 * period
            first = rng.choice([p for p in quorum if p < n - f] or correct)
            deliver = []
            for p in correct:
                lag_scale = max_lag_rounds if p in slow_set else 0.5
                lag = 0.0 if p == first else rng.random() * lag_scale * period
                deliver.append(t0 + lag)
                ready[p] = min(ready[p], t0 + lag)
            ready_rows.append(ready)
            deliver_rows.append(deliver)
    ready_t = np.array(ready_rows).reshape(len(events), n)
    deliver_t = np.array(deliver_rows).reshape(len(events), len(correct))

    def delivered_set(col: np.ndarray) -> frozenset:
        return frozenset(events[i] for i in np.flatnonzero(col))

    def max_pair_difference(mask: np.ndarray, members: list[int]) -> int:
        if len(members) < 2:
            return 0
        sub = mask[:, members].astype(np.int64)
        # |A ^ B| = |A| + |B| - 2|A & B|
        sizes = sub.sum(axis=0)
        inter = sub.T @ sub
        diff = sizes[:, None] + sizes[None, :] - 2 * inter
        return int(diff.max())

    result = RoundSimResult(rounds)
    for r in range(rounds):
        start = r * period
        logs = []
        for p in correct:
            ready = ready_t[:, p] <= start
            logs.append(RoundLog(r, delivered_set(deliver_t[:, p] <= start),
                                 frozenset((events[i], None) for i in np.flatnonzero(ready))))
        end = (r + 1) * period
        users = []
        for p in correct:
            lies = [logs[p] if byzantine_logs == "mirror" else RoundLog(r)] * f
            decision = round_tick(logs[p], logs + lies, cfg, n, f)
            result.decisions[decision.value] += 1
            if decision is Decision.USE_WBB:
                users.append(p)
        # histories during round r + 1, at every delivery instant
        in_window = deliver_t[(deliver_t >= end) & (deliver_t <= end + period)]
        for t in np.unique(np.concatenate([[end, end + period], in_window])):
            mask = deliver_t <= t
            result.max_any_difference = max(result.max_any_difference,
                                            max_pair_difference(mask, correct))
            worst = max_pair_difference(mask, users)
            result.max_wbb_difference = max(result.max_wbb_difference, worst)
            if worst > cfg.gamma:
                result.violations += 1
                break
    result.decisions = dict(result.decisions)
    return result


__all__ = [
    "RecoveryInstance", "RecoveryRecord", "Decision", "RoundLog", "LogDelta", "RoundConfig",
    "encode_log_delta", "apply_log_delta", "LogReassembler", "ready_majority", "round_tick",
    "simulate_rounds", "RoundSimResult", "is_recovery_kind",
]
