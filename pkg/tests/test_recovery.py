import pytest
from hypothesis import given, strategies as st

from schedules import RandomScheduler
from wbcast.broadcast import ALL, EventId, Keyring, Kind, ProtocolMessage, Tag, WBBInstance
from wbcast.errors import ParameterError
from wbcast.recovery import (Decision, LogReassembler, RecoveryInstance, RoundConfig, RoundLog,
                             apply_log_delta, encode_log_delta, ready_majority, round_tick,
                             simulate_rounds)

EV = EventId(0, 1)


def make(pid, n=7, f=2, keys=None):
    keys = keys or Keyring(n)
    wbb = WBBInstance(pid, EV, n, f, range(n), range(n), f + 1, keys.verify)
    return RecoveryInstance(wbb), keys


def msg(kind, payload, sender, carried=None):
    return ProtocolMessage(EV, kind, payload, Tag.NONE, sender, carried=carried)


def test_timeout_without_pi_message_sends_bottom():
    rec, _ = make(3)
    out = rec.on_timeout()
    [send] = out.sends
    assert send.dests is ALL and send.message.kind is Kind.RECOVER
    assert send.message.payload is None and send.message.carried is None
    assert rec.phase == "recovering"


def test_timeout_embeds_last_pi_message():
    rec, keys = make(3)
    m = keys.sign(EV, b"m")
    for s in range(3):
        rec.wbb.on_message(ProtocolMessage(EV, Kind.READY, m, Tag.W, s))
    assert rec.wbb.last_pi == (Kind.READY, m)
    [send] = rec.on_timeout().sends
    assert send.message.payload == m and send.message.carried is Kind.READY


def test_timeout_after_delivery_is_silent():
    rec, keys = make(3)
    m = keys.sign(EV, b"m")
    for s in range(3):
        rec.wbb.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, s))
    assert rec.delivered == m
    assert not rec.on_timeout().sends


def test_messages_buffered_until_gate_opens():
    rec, keys = make(3)
    m = keys.sign(EV, b"m")
    for s in range(3):
        assert not rec.on_message(msg(Kind.REPLY, m, s))
    assert rec.delivered is None and len(rec.buffer) == 3
    out = rec.on_timeout()
    assert out.deliver == m


def test_f_plus_one_replies_deliver():
    rec, keys = make(3)
    rec.on_timeout()
    m = keys.sign(EV, b"m")
    assert rec.on_message(msg(Kind.REPLY, m, 0)).deliver is None
    assert rec.on_message(msg(Kind.REPLY, m, 1)).deliver is None
    assert rec.on_message(msg(Kind.REPLY, m, 1)).deliver is None
    assert rec.on_message(msg(Kind.REPLY, m, 5)).deliver == m


def test_recover_after_delivery_gets_reply():
    rec, keys = make(3)
    m = keys.sign(EV, b"m")
    for s in range(3):
        rec.wbb.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, s))
    rec.on_deliver()
    out = rec.on_message(msg(Kind.RECOVER, None, 6))
    replies = [s for s in out.sends if s.message.kind is Kind.REPLY]
    assert len(replies) == 1 and replies[0].dests == frozenset({6})
    assert replies[0].message.payload == m


def test_split_ready_records_do_not_echo():
    rec, keys = make(3)
    rec.on_timeout()
    m, alt = keys.sign(EV, b"m"), keys.sign(EV, b"m'")
    rec.on_message(msg(Kind.RECOVER, m, 0, Kind.READY))
    rec.on_message(msg(Kind.RECOVER, alt, 1, Kind.READY))
    for s in (2, 4, 5):
        out = rec.on_message(msg(Kind.RECOVER, None, s))
        assert not any(x.message.kind is Kind.RECOVERY_ECHO for x in out.sends)
    assert not rec.sent_echo
    # two READY records for m stay one short of f + 1 = 3
    rec.on_message(msg(Kind.RECOVER, m, 6, Kind.READY))
    assert not rec.sent_echo


def test_unique_value_in_quorum_is_echoed():
    rec, keys = make(3)
    rec.on_timeout()
    m = keys.sign(EV, b"m")
    outs = [rec.on_message(msg(Kind.RECOVER, m if s == 0 else None, s,
                               Kind.NOTIFY if s == 0 else None)) for s in (0, 1, 2, 4, 5)]
    assert any(x.message.kind is Kind.RECOVERY_ECHO and x.message.payload == m
               for out in outs for x in out.sends)


def test_f_plus_one_recover_amplifies_after_gate():
    rec, _ = make(3)
    for s in (0, 1, 2):
        assert not rec.on_message(msg(Kind.RECOVER, None, s)).sends
    assert not rec.sent_recover  # gate still closed
    rec, _ = make(4)
    rec.on_deliver()  # nothing delivered yet, but opening the gate starts processing
    outs = [rec.on_message(msg(Kind.RECOVER, None, s)) for s in (0, 1, 2)]
    assert not any(outs[:2])
    assert [x.message.kind for x in outs[2].sends] == [Kind.RECOVER]
    assert rec.sent_recover and rec.phase == "recovering"


def test_rejects_malformed():
    rec, keys = make(3)
    m = keys.sign(EV, b"m")
    assert rec.on_message(msg(Kind.REPLY, None, 1)).rejected
    assert rec.on_message(msg(Kind.RECOVER, m, 1, None)).rejected
    assert rec.on_message(msg(Kind.RECOVER, m, 1, Kind.VALIDATE)).rejected
    assert rec.on_message(ProtocolMessage(EV, Kind.REPLY, m, Tag.W, 1)).rejected


def recovery_run(n, f, seed, faulty, source_value=True):
    """Faulty witness sets: W = V = faulty, k = f + 1, faulty processes silent."""
    keys = Keyring(n, seed)
    nodes = {}
    for p in range(n):
        if p in faulty:
            continue
        wbb = WBBInstance(p, EV, n, f, faulty, faulty, f + 1, keys.verify)
        nodes[p] = _Gate(RecoveryInstance(wbb))
    sched = RandomScheduler(nodes, n, seed)
    src = nodes[0]
    m = keys.sign(EV, b"m")
    sched.push(0, src.rec.wbb.broadcast(m))
    for p in sorted(nodes):
        sched.push(p, nodes[p].rec.on_timeout())
    sched.run()
    return sched.deliveries, set(nodes)


class _Gate:
    def __init__(self, rec):
        self.rec = rec

    def on_message(self, m):
        if m.kind in (Kind.RECOVER, Kind.REPLY, Kind.RECOVERY_ECHO, Kind.RECOVERY_READY):
            out = self.rec.on_message(m)
        else:
            out = self.rec.wbb.on_message(m)
        if out.deliver is not None:
            out.extend(self.rec.on_deliver())
        return out


@pytest.mark.parametrize("n", [4, 7, 10])
def test_recovery_delivers_everywhere(n):
    f = (n - 1) // 3
    for seed in range(50):
        faulty = set(range(n - f, n))
        deliveries, correct = recovery_run(n, f, seed, faulty)
        assert set(deliveries) == correct
        assert {p.value for p in deliveries.values()} == {b"m"}


# -- rounds ---------------------------------------------------------------------

CFG = RoundConfig(delta_seconds=1.0, d_log=2, gamma=20, th_max=5.0)


def e(i):
    return EventId(9, i)


def log(delivered, ready=None, rnd=0):
    ready = delivered if ready is None else ready
    return RoundLog(rnd, frozenset(map(e, delivered)), frozenset((e(i), None) for i in ready))


def test_round_config_feasibility():
    assert RoundConfig(1.0, 2, 17, 5.0).feasible
    assert not RoundConfig(1.0, 2, 16, 5.0).feasible
    with pytest.raises(ParameterError):
        RoundConfig(0, 1, 1, 1)


def test_identical_logs_use_wbb():
    local = log([1, 2, 3])
    assert round_tick(local, [local] * 5, CFG, n=5, f=1) is Decision.USE_WBB


def test_too_few_logs_force_recovery():
    local = log([1, 2, 3])
    assert round_tick(local, [local] * 3, CFG, n=5, f=1) is Decision.USE_RECOVERY


def test_ready_majority_far_ahead_forces_recovery():
    local = log([1])
    ahead = log([1], ready=[1, 2, 3, 4])
    # delivered sets stay close, but readyM = {1..4} exceeds local by d_log + 1
    assert round_tick(local, [ahead] * 5, CFG, n=5, f=1) is Decision.USE_RECOVERY
    assert ready_majority([ahead, ahead, local], 1) == frozenset(map(e, [1, 2, 3, 4]))


@given(st.lists(st.sets(st.integers(0, 30), max_size=15), min_size=1, max_size=6))
def test_log_deltas_roundtrip(snapshots):
    prev_sent = None
    prev_rebuilt = None
    for rnd, items in enumerate(snapshots):
        cur = RoundLog(rnd, frozenset(map(e, items)), frozenset((e(i), b"x") for i in items))
        rebuilt = apply_log_delta(prev_rebuilt, encode_log_delta(prev_sent, cur))
        assert rebuilt == cur
        prev_sent, prev_rebuilt = cur, rebuilt


def test_reassembler_handles_reordering():
    logs = [log([1]), log([1, 2], rnd=1), log([2, 3], rnd=2)]
    deltas = [encode_log_delta(None, logs[0])] + [
        encode_log_delta(a, b) for a, b in zip(logs, logs[1:])]
    ra = LogReassembler()
    assert ra.add(4, deltas[2]) == []
    assert ra.add(4, deltas[1]) == []
    assert ra.add(4, deltas[0]) == logs


def test_delta_needs_matching_base():
    with pytest.raises(ParameterError):
        apply_log_delta(None, encode_log_delta(log([1]), log([2], rnd=1)))


def test_simulated_rounds_respect_gamma():
    cfg = RoundConfig(1.0, 3, 3 * 3 + 2 * 5 + 1, 5.0)
    assert cfg.feasible
    for f in (1, 2):
        res = simulate_rounds(cfg, f, rounds=60, seed=f, max_lag_rounds=10.0)
        assert res.violations == 0
        assert res.max_wbb_difference <= cfg.gamma < res.max_any_difference
        assert sum(res.decisions.values()) == 60 * (3 * f + 1)
        assert res.decisions["USE_WBB"] and res.decisions["USE_RECOVERY"]


def test_empty_faulty_logs_push_towards_recovery():
    cfg = RoundConfig(1.0, 3, 20, 5.0)
    mirror = simulate_rounds(cfg, 1, rounds=30, seed=2)
    empty = simulate_rounds(cfg, 1, rounds=30, seed=2, byzantine_logs="empty")
    assert empty.decisions.get("USE_WBB", 0) < mirror.decisions["USE_WBB"]
    with pytest.raises(ParameterError):
        simulate_rounds(cfg, 1, rounds=1, seed=2, byzantine_logs="loud")


def test_simulated_rounds_decide_wbb_when_histories_close():
    cfg = RoundConfig(1.0, 3, 20, 5.0)
    res = simulate_rounds(cfg, 1, rounds=40, seed=3, slow=0)
    assert res.decisions.get("USE_WBB", 0) > 0
