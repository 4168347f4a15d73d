"""Seeded discrete-event network simulator for the broadcast protocols.

A run is a pure function of its :class:`ScenarioConfig`. Events sit in a
heap ordered by (time, sender, insertion count); channels are reliable,
with loss emulated as extra retransmission delay. The adversary controls
a set of corrupted processes and can only sign for their own events.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterable, Optional

from .broadcast import (ALL, BrachaInstance, Emission, EventId, InstanceTable, Keyring, Kind,
                        LongLivedBroadcast, Payload, ProtocolMessage, Tag, WBBInstance)
from .errors import ConfigError, FaultBoundError, ParameterError
from .recovery import (Decision, LogReassembler, RecoveryInstance, RoundConfig, RoundLog,
                       encode_log_delta, is_recovery_kind, round_tick)
from .slash import OracleParams, SlashParams, oracle_params_for, select_witnesses


class Protocol(str, enum.Enum):
    WBB = "WBB"
    BRACHA = "BRACHA"
    WBB_WITH_RECOVERY = "WBB_WITH_RECOVERY"


class OracleMode(str, enum.Enum):
    SLASH = "slash"        # history-based selection, |W| = w_coef log2 n, |V| = v_coef log2 n
    COMPLETE = "complete"  # W = V = every process, k = f + 1
    FORCED = "forced"      # common V, per-process W with >= k correct and <= k - 1 faulty
    FAULTY = "faulty"      # W = V = the corrupted set, k = f + 1: witnesses never suffice


class AdversaryMode(str, enum.Enum):
    EQUIVOCATING_SOURCE = "EQUIVOCATING_SOURCE"
    MUTE_WITNESS = "MUTE_WITNESS"
    CONFLICTING_VALIDATE = "CONFLICTING_VALIDATE"
    SLOW_ADAPTIVE = "SLOW_ADAPTIVE"


# -- configuration --------------------------------------------------------------


def _build(cls, data: Optional[dict]):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class DelayModel:
    """Per-message delay ``base + randint(0, jitter)``; each loss adds ``loss_delay``."""

    base: int = 1
    jitter: int = 0
    loss: float = 0.0
    loss_delay: int = 10

    def __post_init__(self):
        if self.base < 1 or self.jitter < 0 or self.loss_delay < 0:
            raise ConfigError("delays must be integers with base >= 1 and jitter >= 0")
        if not 0.0 <= self.loss < 1.0:
            raise ConfigError(f"loss probability {self.loss} outside [0, 1)")

    @property
    def mean(self) -> float:
        return self.base + self.jitter / 2 + self.loss_delay * self.loss / (1 - self.loss)

    def sample(self, rng: random.Random) -> int:
        delay = self.base + (rng.randint(0, self.jitter) if self.jitter else 0)
        while self.loss and rng.random() < self.loss:
            delay += self.loss_delay
        return delay


@dataclass(frozen=True)
class AdversarySpec:
    """Behaviour of corrupted processes.

    ``budget`` caps the total number of processes ever corrupted (default f);
    ``static`` of them are corrupted from the start (default: all of the
    budget, or none under SLOW_ADAPTIVE). ``faulty`` pins the static set.
    ``delta`` is the number of instances a SLOW_ADAPTIVE target completes
    after being selected before control begins.
    """

    modes: tuple = ()
    delta: int = 0
    budget: Optional[int] = None
    static: Optional[int] = None
    faulty: Optional[tuple] = None

    def __post_init__(self):
        try:
            modes = tuple(sorted({AdversaryMode(m) for m in self.modes}, key=lambda m: m.value))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "modes", modes)
        if self.faulty is not None:
            object.__setattr__(self, "faulty", tuple(sorted(set(self.faulty))))
        if self.delta < 0:
            raise ConfigError("corruption delay must be nonnegative")

    def has(self, mode: AdversaryMode) -> bool:
        return mode in self.modes


@dataclass(frozen=True)
class Workload:
    """Who broadcasts and when.

    ``closed`` loops start the next broadcast on delivery of the previous
    one; ``open`` loops attempt one every ``interval`` time units and queue
    when the previous is still pending. Corrupted sources ignore delivery
    and broadcast every ``byzantine_interval``.
    """

    mode: str = "closed"
    sources: Optional[tuple] = None
    instances_per_source: int = 1
    interval: int = 10
    byzantine_interval: int = 5

    def __post_init__(self):
        if self.mode not in ("closed", "open"):
            raise ConfigError(f"workload mode must be 'closed' or 'open', got {self.mode!r}")
        if self.instances_per_source < 0 or self.interval < 1 or self.byzantine_interval < 1:
            raise ConfigError("workload counts and intervals must be positive")
        if self.sources is not None:
            object.__setattr__(self, "sources", tuple(sorted(set(self.sources))))


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulator input. ``seed`` is mandatory; everything else has a default.

    Witness sizing defaults to |W| = 3 log2 n and |V| = 4 log2 n. With
    ``guarantees`` set the run refuses f >= n/3.
    """

    n: int
    seed: int
    f: Optional[int] = None
    fault_ratio: Optional[float] = None
    protocol: Protocol = Protocol.WBB
    oracle: OracleMode = OracleMode.SLASH
    w_coef: float = 3.0
    v_coef: float = 4.0
    k: Optional[int] = None
    slash: SlashParams = field(default_factory=SlashParams)
    delay: DelayModel = field(default_factory=DelayModel)
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    workload: Workload = field(default_factory=Workload)
    timeout: Optional[int] = None
    rounds: Optional[RoundConfig] = None
    max_time: int = 100_000
    guarantees: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "protocol", Protocol(self.protocol))
            object.__setattr__(self, "oracle", OracleMode(self.oracle))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.seed, int):
            raise ConfigError("a scenario needs an integer seed")
        if self.n < 1:
            raise ConfigError("a scenario needs at least one process")
        if (self.f is None) == (self.fault_ratio is None):
            if self.f is None:
                object.__setattr__(self, "f", 0)
            else:
                raise ConfigError("give either f or fault_ratio, not both")
        if self.f is None:
            if not 0.0 <= self.fault_ratio < 1.0:
                raise ConfigError("fault_ratio must lie in [0, 1)")
            object.__setattr__(self, "f", math.floor(self.fault_ratio * self.n))
        if not 0 <= self.f < self.n:
            raise ConfigError(f"fault bound f={self.f} outside [0, n)")
        if self.guarantees and 3 * self.f >= self.n:
            raise ConfigError(f"f={self.f} >= n/3 = {self.n / 3:.2f} but guarantees were requested")
        adv = self.adversary
        budget = self.f if adv.budget is None else adv.budget
        if not 0 <= budget <= self.f:
            raise ConfigError(f"corruption budget {budget} outside [0, f={self.f}]")
        if adv.faulty is not None:
            if len(adv.faulty) > budget or any(not 0 <= p < self.n for p in adv.faulty):
                raise ConfigError("pinned faulty set exceeds the budget or names unknown processes")
        if adv.static is not None and not 0 <= adv.static <= budget:
            raise ConfigError("static corruption count exceeds the budget")
        if self.workload.sources is not None and any(
                not 0 <= p < self.n for p in self.workload.sources):
            raise ConfigError("workload names an unknown source")
        if self.timeout is not None and self.timeout < 1:
            raise ConfigError("timeout must be a positive integer")
        if self.k is not None and self.k < 1:
            raise ConfigError("witness threshold k must be >= 1")

    @property
    def budget(self) -> int:
        return self.f if self.adversary.budget is None else self.adversary.budget

    @property
    def static_corruptions(self) -> int:
        adv = self.adversary
        if adv.faulty is not None:
            return len(adv.faulty)
        if adv.static is not None:
            return adv.static
        return 0 if adv.has(AdversaryMode.SLOW_ADAPTIVE) else self.budget

    @property
    def effective_timeout(self) -> int:
        """Explicit timeout, else 10 x mean one-hop delay x 6 (protocol depth)."""
        if self.timeout is not None:
            return self.timeout
        return max(1, math.ceil(10 * self.delay.mean * 6))

    @property
    def sources(self) -> tuple:
        return tuple(range(self.n)) if self.workload.sources is None else self.workload.sources

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        if "seed" not in data:
            raise ConfigError("a scenario needs a seed")
        try:
            data["slash"] = _build(SlashParams, data.get("slash"))
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        data["delay"] = _build(DelayModel, data.get("delay"))
        adv = dict(data.get("adversary") or {})
        for key in ("modes", "faulty"):
            if adv.get(key) is not None:
                adv[key] = tuple(adv[key])
        data["adversary"] = _build(AdversarySpec, adv)
        wl = dict(data.get("workload") or {})
        if wl.get("sources") is not None:
            wl["sources"] = tuple(wl["sources"])
        data["workload"] = _build(Workload, wl)
        if data.get("rounds") is not None:
            try:
                data["rounds"] = _build(RoundConfig, data["rounds"])
            except ParameterError as exc:
                raise ConfigError(str(exc)) from None
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["protocol"] = self.protocol.value
        out["oracle"] = self.oracle.value
        out["adversary"]["modes"] = [m.value for m in self.adversary.modes]
        for key in ("faulty",):
            if out["adversary"][key] is not None:
                out["adversary"][key] = list(out["adversary"][key])
        if out["workload"]["sources"] is not None:
            out["workload"]["sources"] = list(out["workload"]["sources"])
        return out


# -- metrics ----------------------------------------------------------------------


CSV_COLUMNS = ["source", "seq", "source_correct", "broadcast_time", "messages", "byte_units",
               "delivered", "via_recovery", "distinct_payloads", "first_delivery",
               "last_delivery", "max_latency"]


@dataclass
class InstanceRecord:
    source: int
    seq: int
    broadcast_time: Optional[int] = None
    messages: int = 0
    byte_units: int = 0
    deliveries: dict = field(default_factory=dict)   # pid -> (time, payload)
    via_recovery: set = field(default_factory=set)
    potential_size: dict = field(default_factory=dict)  # pid -> |V_i| at init


@dataclass
class MetricsRecord:
    n: int
    f: int
    protocol: str
    end_time: int
    correct: tuple
    instances: list
    consistency_violations: int
    liveness_failures: int
    rejected_messages: int
    corruption_rejections: int
    decisions: dict

    def rows(self) -> list[dict]:
        correct = set(self.correct)
        rows = []
        for rec in self.instances:
            good = {p: v for p, v in rec.deliveries.items() if p in correct}
            times = [t for t, _ in good.values()]
            start = rec.broadcast_time
            rows.append({
                "source": rec.source,
                "seq": rec.seq,
                "source_correct": int(rec.source in correct),
                "broadcast_time": "" if start is None else start,
                "messages": rec.messages,
                "byte_units": rec.byte_units,
                "delivered": len(good),
                "via_recovery": len(rec.via_recovery & correct),
                "distinct_payloads": len({p for _, p in good.values()}),
                "first_delivery": min(times) if times else "",
                "last_delivery": max(times) if times else "",
                "max_latency": (max(times) - start) if times and start is not None else "",
            })
        return rows

    def latencies(self) -> list[int]:
        correct = set(self.correct)
        out = []
        for rec in self.instances:
            if rec.broadcast_time is None or rec.source not in correct:
                continue
            out.extend(t - rec.broadcast_time for p, (t, _) in rec.deliveries.items()
                       if p in correct)
        return sorted(out)

    def summary(self) -> dict:
        lat = self.latencies()
        correct = set(self.correct)
        complete = sum(1 for rec in self.instances
                       if correct and correct <= set(rec.deliveries))
        messages = [rec.messages for rec in self.instances]

        def pct(q):
            if not lat:
                return None
            return lat[min(len(lat) - 1, int(math.ceil(q * len(lat))) - 1)]

        v_sizes = [s for rec in self.instances for s in rec.potential_size.values()]
        mean_v = sum(v_sizes) / len(v_sizes) if v_sizes else None
        mean_msgs = sum(messages) / len(messages) if messages else 0.0
        return {
            "n": self.n,
            "f": self.f,
            "protocol": self.protocol,
            "instances": len(self.instances),
            "end_time": self.end_time,
            "throughput": complete / self.end_time if self.end_time else 0.0,
            "mean_latency": sum(lat) / len(lat) if lat else None,
            "p50_latency": pct(0.5),
            "p95_latency": pct(0.95),
            "max_latency": lat[-1] if lat else None,
            "messages_total": sum(messages),
            "messages_per_instance": mean_msgs,
            "mean_potential_size": mean_v,
            "message_constant": (mean_msgs / (self.n * mean_v)) if mean_v else None,
            "consistency_violations": self.consistency_violations,
            "liveness_failures": self.liveness_failures,
            "rejected_messages": self.rejected_messages,
            "corruption_rejections": self.corruption_rejections,
            "decisions": dict(sorted(self.decisions.items())),
        }

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()


@dataclass
class RunResult:
    metrics: MetricsRecord
    trace: list
    adversary_log: list

    def trace_ndjson(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.trace)


# -- processes ----------------------------------------------------------------------


@dataclass
class _Entry:
    inst: Any
    recovery: Optional[RecoveryInstance] = None


def _describe(msg: ProtocolMessage) -> dict:
    out = {"kind": msg.kind.value, "tag": msg.tag.value, "from": msg.sender}
    if msg.instance is not None:
        out["event"] = [msg.instance.source, msg.instance.seq]
    if msg.payload is not None:
        out["value"] = msg.payload.value.hex()
    if msg.log is not None:
        out["round"] = msg.log.round
    return out


class Node:
    """A process: instance table, long-lived history and (optionally) round logs."""

    def __init__(self, sim: "Simulator", pid: int):
        self.sim = sim
        self.pid = pid
        self.ll = LongLivedBroadcast(pid, sim.cfg.slash)
        self.table = InstanceTable(self._make)
        self.decision = Decision.USE_WBB
        self.logs = LogReassembler()
        self.heard: dict[int, dict[int, RoundLog]] = defaultdict(dict)
        self.sent_log: Optional[RoundLog] = None
        self.backlog = 0
        self.instances_done = 0

    @property
    def corrupted(self) -> bool:
        return self.pid in self.sim.corrupted

    def _make(self, event: EventId) -> _Entry:
        sim = self.sim
        cfg = sim.cfg
        if cfg.protocol is Protocol.BRACHA:
            return _Entry(BrachaInstance(self.pid, event, cfg.n, cfg.f, sim.keys.verify,
                                         quorum=sim.quorum))
        own, potential, k = sim.oracle(self, event)
        sim.record(event).potential_size[self.pid] = len(potential)
        wbb = WBBInstance(self.pid, event, cfg.n, cfg.f, own, potential, k, sim.keys.verify,
                          quorum=sim.quorum)
        entry = _Entry(wbb)
        if cfg.protocol is Protocol.WBB_WITH_RECOVERY:
            entry.recovery = RecoveryInstance(wbb)
            sim.schedule_timer(self.pid, event, cfg.effective_timeout)
        return entry

    def entry(self, event: EventId) -> _Entry:
        return self.table.init(event)[0]

    # inputs

    def on_message(self, msg: ProtocolMessage):
        if msg.kind is Kind.LOG:
            for log in self.logs.add(msg.sender, msg.log):
                self.heard[log.round][msg.sender] = log
            return
        if self.corrupted and self.sim.mute:
            return
        entry = self.entry(msg.instance)
        if self.corrupted:
            self.sim.adversary.on_observe(self, msg)
        if entry.recovery is not None and is_recovery_kind(msg.kind):
            out = entry.recovery.on_message(msg)
            self.apply(out, msg.instance, via_recovery=True)
        else:
            out = entry.inst.on_message(msg)
            self.apply(out, msg.instance)
        if out.rejected:
            self.sim.rejected += 1

    def on_timer(self, event: EventId):
        if self.corrupted and self.sim.mute:
            return
        entry = self.entry(event)
        if entry.recovery is not None:
            self.sim.trace_rec("timeout", pid=self.pid, event=[event.source, event.seq])
            self.apply(entry.recovery.on_timeout(), event, via_recovery=True)

    def apply(self, out: Emission, event: EventId, via_recovery: bool = False):
        for send in out.sends:
            self.sim.transmit(self.pid, send.dests, send.message)
        if out.deliver is not None:
            self._delivered(out.deliver, via_recovery)
            entry = self.table.get(event)
            if entry is not None and entry.recovery is not None:
                self.apply(entry.recovery.on_deliver(), event, via_recovery=True)

    def _delivered(self, payload: Payload, via_recovery: bool):
        sim = self.sim
        rec = sim.record(payload.event)
        if self.pid not in rec.deliveries:
            rec.deliveries[self.pid] = (sim.now, payload)
            if via_recovery:
                rec.via_recovery.add(self.pid)
        sim.trace_rec("deliver", pid=self.pid, event=[payload.event.source, payload.event.seq],
                      value=payload.value.hex())
        own = payload.event.source == self.pid and payload.event == self.ll._pending
        if self.ll.on_deliver(payload):
            self.instances_done += 1
            sim.adversary.on_progress(self)
        if own and not self.corrupted:
            if sim.cfg.workload.mode == "closed" or self.backlog:
                self.backlog = max(0, self.backlog - 1)
                sim.schedule_broadcast(self.pid, 0)

    def broadcast(self):
        sim = self.sim
        if self.ll.seq >= sim.cfg.workload.instances_per_source:
            return
        if self.corrupted:
            sim.adversary.source_broadcast(self)
            return
        if not self.ll.ready_to_broadcast:
            self.backlog += 1
            return
        value = sim.value_for(self.pid, self.ll.seq + 1)
        payload = self.ll.broadcast(value, sim.keys.sign)
        event = payload.event
        rec = sim.record(event)
        rec.broadcast_time = sim.now
        sim.trace_rec("broadcast", pid=self.pid, event=[event.source, event.seq],
                      value=value.hex())
        entry = self.entry(event)
        sim.adversary.on_broadcast_started(
            self.pid, event, getattr(entry.inst, "potential", range(sim.cfg.n)))
        if entry.recovery is not None and self.decision is Decision.USE_RECOVERY:
            # bypass the witnesses and start recovery with the payload as the Pi message
            entry.inst.last_pi = (Kind.NOTIFY, payload)
            entry.inst._fired.add("notify")
            self.apply(entry.recovery.on_timeout(), event, via_recovery=True)
        else:
            self.apply(entry.inst.broadcast(payload), event)
        if sim.cfg.workload.mode == "open":
            sim.schedule_broadcast(self.pid, sim.cfg.workload.interval)

    # rounds

    def current_log(self, rnd: int) -> RoundLog:
        ready = set()
        for event in self.table.events():
            entry = self.table.get(event)
            inst = entry.inst
            if isinstance(inst, WBBInstance) and inst.fired("ready_pi") and inst.last_pi:
                ready.add((event, inst.last_pi[1]))
            if entry.recovery is not None and entry.recovery.ready_for is not None:
                ready.add((event, entry.recovery.ready_for))
        return RoundLog(rnd, frozenset(self.ll.hist), frozenset(ready))

    def round_tick(self, rnd: int):
        sim = self.sim
        if rnd > 0 and self.sent_log is not None:
            self.decision = round_tick(self.sent_log, self.heard.pop(rnd - 1, {}).values(),
                                       sim.cfg.rounds, sim.cfg.n, sim.cfg.f)
            sim.decisions[self.decision.value] += 1
            sim.trace_rec("round", pid=self.pid, round=rnd, decision=self.decision.value)
        log = self.current_log(rnd)
        delta = encode_log_delta(self.sent_log, log)
        self.sent_log = log
        sim.transmit(self.pid, ALL, ProtocolMessage(None, Kind.LOG, None, Tag.NONE, self.pid,
                                                    log=delta))


# -- adversary -----------------------------------------------------------------------


class Adversary:
    """Drives the corrupted processes. It signs only for corrupted sources."""

    def __init__(self, sim: "Simulator", rng: random.Random):
        self.sim = sim
        self.rng = rng
        self.spec = sim.cfg.adversary
        self.targets: dict[int, int] = {}   # pid -> instances completed when selected
        self.log: list[dict] = []
        self.rejections = 0
        self._conflicted: set = set()

    def _act(self, actor: int, action: str, **kw):
        assert actor in self.sim.corrupted, "adversary action from a correct process"
        rec = {"t": self.sim.now, "actor": actor, "action": action, **kw}
        self.log.append(rec)
        self.sim.trace_rec("adversary", **{k: v for k, v in rec.items() if k != "t"})

    def sign(self, event: EventId, value: bytes) -> Payload:
        if event.source not in self.sim.corrupted:
            raise PermissionError("the adversary cannot sign for a correct source")
        return self.sim.keys.sign(event, value)

    def source_broadcast(self, node: Node):
        sim = self.sim
        node.ll.seq += 1
        event = EventId(node.pid, node.ll.seq)
        rec = sim.record(event)
        rec.broadcast_time = sim.now
        m = self.sign(event, sim.value_for(node.pid, node.ll.seq))
        entry = node.entry(event)
        if self.spec.has(AdversaryMode.EQUIVOCATING_SOURCE):
            alt = self.sign(event, sim.value_for(node.pid, node.ll.seq, alt=True))
            if sim.cfg.protocol is Protocol.BRACHA:
                kind, tag, dests = Kind.SEND, Tag.NONE, list(range(sim.cfg.n))
            else:
                kind, tag, dests = Kind.NOTIFY, Tag.PI, sorted(entry.inst.potential)
            self.rng.shuffle(dests)
            half = len(dests) // 2
            self._act(node.pid, "equivocate", event=[event.source, event.seq])
            sim.transmit(node.pid, dests[:half], ProtocolMessage(event, kind, m, tag, node.pid))
            sim.transmit(node.pid, dests[half:], ProtocolMessage(event, kind, alt, tag, node.pid))
        elif not sim.mute:
            node.apply(entry.inst.broadcast(m), event)
        if node.ll.seq < sim.cfg.workload.instances_per_source:
            sim.schedule_broadcast(node.pid, sim.cfg.workload.byzantine_interval)

    def on_observe(self, node: Node, msg: ProtocolMessage):
        """Corrupted, non-mute process saw a message: maybe push conflicting votes."""
        if not self.spec.has(AdversaryMode.CONFLICTING_VALIDATE) or msg.payload is None:
            return
        key = (node.pid, msg.instance)
        if key in self._conflicted:
            return
        self._conflicted.add(key)
        event = msg.instance
        payloads = [msg.payload]
        if event.source in self.sim.corrupted:
            payloads.append(self.sign(event, self.sim.value_for(event.source, event.seq,
                                                                alt=msg.payload.value[-1:] != b"'")))
        self._act(node.pid, "conflicting_validate", event=[event.source, event.seq])
        for m in payloads:
            if self.sim.cfg.protocol is Protocol.BRACHA:
                votes = [(Kind.READY, Tag.NONE)]
            else:
                votes = [(Kind.READY, Tag.W), (Kind.READY, Tag.PI), (Kind.VALIDATE, Tag.NONE)]
            for kind, tag in votes:
                self.sim.transmit(node.pid, ALL, ProtocolMessage(event, kind, m, tag, node.pid))

    def on_broadcast_started(self, source: int, event: EventId, witnesses: Iterable[int]):
        """SLOW_ADAPTIVE: pick a witness of a fresh instance as the next target."""
        if not self.spec.has(AdversaryMode.SLOW_ADAPTIVE):
            return
        sim = self.sim
        pool = sorted(p for p in witnesses
                      if p not in sim.corrupted and p not in self.targets and p != source)
        if not pool:
            return
        target = self.rng.choice(pool)
        if len(sim.corrupted) + len(self.targets) >= sim.cfg.budget:
            self.rejections += 1
            sim.trace_rec("corruption_rejected", target=target, event=[event.source, event.seq])
            return
        self.targets[target] = sim.nodes[target].instances_done
        sim.trace_rec("corruption_selected", target=target, event=[event.source, event.seq])

    def on_progress(self, node: Node):
        start = self.targets.get(node.pid)
        if start is None or node.instances_done - start < self.spec.delta:
            return
        del self.targets[node.pid]
        self.sim.corrupted.add(node.pid)
        self.sim.ever_corrupted.add(node.pid)
        self._act(node.pid, "corrupted", after=node.instances_done - start)


# -- simulator -----------------------------------------------------------------------


class Simulator:
    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self.tracing = trace
        self.trace: list[dict] = []
        self.now = 0
        self._heap: list = []
        self._count = 0
        base = random.Random(cfg.seed)
        self.net_rng = random.Random(base.getrandbits(64))
        adv_rng = random.Random(base.getrandbits(64))
        self.oracle_seed = base.getrandbits(64)
        self.keys = Keyring(cfg.n, cfg.seed)
        self.quorum = (cfg.n + cfg.f) // 2 + 1
        adv = cfg.adversary
        if adv.faulty is not None:
            static = set(adv.faulty)
        else:
            static = set(adv_rng.sample(range(cfg.n), cfg.static_corruptions))
        self.corrupted: set[int] = set(static)
        self.ever_corrupted: set[int] = set(static)
        self.mute = adv.has(AdversaryMode.MUTE_WITNESS)
        self.adversary = Adversary(self, adv_rng)
        self.nodes = [Node(self, p) for p in range(cfg.n)]
        self.records: dict[EventId, InstanceRecord] = {}
        self.rejected = 0
        self.decisions: dict[str, int] = defaultdict(int)
        self._slash_oracle: Optional[OracleParams] = None
        if cfg.protocol is not Protocol.BRACHA and cfg.oracle is OracleMode.SLASH:
            self._slash_oracle = slash_oracle_params(cfg)

    # bookkeeping

    def record(self, event: EventId) -> InstanceRecord:
        rec = self.records.get(event)
        if rec is None:
            rec = self.records[event] = InstanceRecord(event.source, event.seq)
        return rec

    def trace_rec(self, kind: str, **kw):
        if self.tracing:
            self.trace.append({"t": self.now, "type": kind, **kw})

    def value_for(self, source: int, seq: int, alt: bool = False) -> bytes:
        return f"v{source}.{seq}".encode() + (b"'" if alt else b"")

    # oracle

    def oracle(self, node: Node, event: EventId):
        cfg = self.cfg
        n, f = cfg.n, cfg.f
        mode = cfg.oracle
        if mode is OracleMode.COMPLETE:
            everyone = frozenset(range(n))
            return everyone, everyone, cfg.k or f + 1
        if mode is OracleMode.FAULTY:
            bad = frozenset(self.ever_corrupted)
            # k = f + 1 exceeds the corrupted population, so witnesses alone never deliver
            return bad, bad, f + 1
        if mode is OracleMode.FORCED:
            return self._forced(node.pid, event)
        own, potential = select_witnesses(node.ll.slash, range(n), event, self._slash_oracle)
        return own, potential, self._slash_oracle.k

    def _forced(self, pid: int, event: EventId):
        """Common V per event; W_i drawn per process with >= k correct and <= k - 1 faulty."""
        n, f = self.cfg.n, self.cfg.f
        ev_rng = random.Random(f"{self.oracle_seed}:{event.source}:{event.seq}")
        size = min(n, max(2 * f + 1, math.ceil(3 * n / 4)))
        potential = sorted(ev_rng.sample(range(n), size))
        good = [p for p in potential if p not in self.ever_corrupted]
        bad = [p for p in potential if p in self.ever_corrupted]
        k = self.cfg.k or size // 2 + 1
        k = min(k, len(good))
        rng = random.Random(f"{self.oracle_seed}:{event.source}:{event.seq}:{pid}")
        n_good = rng.randint(k, len(good))
        n_bad = rng.randint(0, min(k - 1, len(bad)))
        own = frozenset(rng.sample(good, n_good) + rng.sample(bad, n_bad))
        return own, frozenset(potential), k

    # scheduling

    def _push(self, time: int, sender: int, item: tuple):
        self._count += 1
        heapq.heappush(self._heap, (time, sender, self._count, item))

    def transmit(self, sender: int, dests, msg: ProtocolMessage):
        if sender in self.corrupted and self.mute and msg.kind is not Kind.LOG:
            # mute processes only speak when equivocating as a source
            if not (self.cfg.adversary.has(AdversaryMode.EQUIVOCATING_SOURCE)
                    and msg.instance is not None and msg.instance.source == sender):
                return
        if sender in self.corrupted and self.mute and msg.kind is Kind.LOG:
            return
        targets = range(self.cfg.n) if dests is ALL else sorted(dests)
        rec = self.record(msg.instance) if msg.instance is not None else None
        size = msg.size
        for dest in targets:
            if rec is not None:
                rec.messages += 1
                rec.byte_units += size
            delay = self.cfg.delay.sample(self.net_rng)
            self._push(self.now + delay, sender, ("msg", dest, msg))
            if self.tracing:
                self.trace.append({"t": self.now, "type": "send", "to": dest,
                                   "at": self.now + delay, **_describe(msg)})

    def schedule_timer(self, pid: int, event: EventId, after: int):
        self._push(self.now + after, pid, ("timer", pid, event))

    def schedule_broadcast(self, pid: int, after: int):
        self._push(self.now + after, pid, ("broadcast", pid))

    # main loop

    def run(self) -> RunResult:
        cfg = self.cfg
        for pid in cfg.sources:
            if cfg.workload.instances_per_source > 0:
                self.schedule_broadcast(pid, 0)
        rounds = cfg.rounds
        if rounds is not None and cfg.protocol is Protocol.WBB_WITH_RECOVERY:
            self._push(0, -1, ("round", 0))
        while self._heap:
            time, _, _, item = heapq.heappop(self._heap)
            if time > cfg.max_time:
                break
            self.now = time
            kind = item[0]
            if kind == "msg":
                _, dest, msg = item
                self.nodes[dest].on_message(msg)
            elif kind == "timer":
                self.nodes[item[1]].on_timer(item[2])
            elif kind == "broadcast":
                self.nodes[item[1]].broadcast()
            elif kind == "round":
                rnd = item[1]
                for node in self.nodes:
                    if not (node.corrupted and self.mute):
                        node.round_tick(rnd)
                if any(entry[3][0] != "msg" or entry[3][2].kind is not Kind.LOG
                       for entry in self._heap):
                    self._push(self.now + max(1, round(rounds.delta_seconds)), -1,
                               ("round", rnd + 1))
        return RunResult(self._metrics(), self.trace, self.adversary.log)

    def _metrics(self) -> MetricsRecord:
        cfg = self.cfg
        correct = tuple(p for p in range(cfg.n) if p not in self.ever_corrupted)
        cset = set(correct)
        violations = liveness = 0
        instances = [self.records[e] for e in sorted(self.records)]
        for rec in instances:
            good = {p: v[1] for p, v in rec.deliveries.items() if p in cset}
            if len(set(good.values())) > 1:
                violations += 1
            delivered_all = cset <= set(good)
            if rec.source in cset and rec.broadcast_time is not None and not delivered_all:
                liveness += 1
            elif good and not delivered_all:
                liveness += 1   # totality
        return MetricsRecord(cfg.n, cfg.f, cfg.protocol.value, self.now, correct, instances,
                             violations, liveness, self.rejected, self.adversary.rejections,
                             dict(self.decisions))


def slash_oracle_params(cfg: ScenarioConfig) -> OracleParams:
    """Radii giving E|W| = w_coef log2 n and E|V| = v_coef log2 n over n members."""
    lg = math.log2(cfg.n) if cfg.n > 1 else 1.0
    return oracle_params_for(cfg.n, cfg.w_coef * lg, cfg.v_coef * lg, cfg.slash, k=cfg.k)


def run(cfg: ScenarioConfig, trace: bool = False) -> RunResult:
    """Execute one scenario. The same config always yields the same trace and metrics."""
    try:
        return Simulator(cfg, trace).run()
    except FaultBoundError as exc:
        raise ConfigError(str(exc)) from None


COMPARE_COLUMNS = ["protocol", "messages_per_instance", "throughput", "mean_latency",
                   "messages_ratio", "throughput_ratio", "latency_ratio"]


def compare(cfgs: list[ScenarioConfig]) -> list[dict]:
    """Run each scenario and normalise against the BRACHA row."""
    if not cfgs:
        raise ConfigError("nothing to compare")
    head = cfgs[0]
    for cfg in cfgs[1:]:
        if (cfg.n, cfg.seed, cfg.workload) != (head.n, head.seed, head.workload):
            raise ConfigError("compared scenarios must share n, seed and workload")
    base_idx = next((i for i, c in enumerate(cfgs) if c.protocol is Protocol.BRACHA), None)
    if base_idx is None:
        raise ConfigError("comparison needs a BRACHA baseline row")
    summaries = [run(cfg).metrics.summary() for cfg in cfgs]
    base = summaries[base_idx]

    def ratio(a, b):
        if a is None or b is None:
            return None
        return a / b if b else (1.0 if a == b else math.inf)

    rows = []
    for s in summaries:
        rows.append({
            "protocol": s["protocol"],
            "messages_per_instance": s["messages_per_instance"],
            "throughput": s["throughput"],
            "mean_latency": s["mean_latency"],
            "messages_ratio": ratio(s["messages_per_instance"], base["messages_per_instance"]),
            "throughput_ratio": ratio(s["throughput"], base["throughput"]),
            "latency_ratio": ratio(s["mean_latency"], base["mean_latency"]),
        })
    return rows
