import pytest
from hypothesis import given, strategies as st

from schedules import RandomScheduler
from wbcast.broadcast import (ALL, BrachaInstance, EventId, InstanceTable, Keyring, Kind,
                              LongLivedBroadcast, ProtocolMessage, Tag, WBBInstance, quorum_size)
from wbcast.errors import FaultBoundError, ProtocolMisuseError

EV = EventId(0, 1)


def dest_count(emission, n):
    return sum(n if s.dests is ALL else len(s.dests) for s in emission.sends)


def test_quorum_examples():
    assert quorum_size(4, 1) == 3
    assert quorum_size(1024, 341) == 683
    with pytest.raises(FaultBoundError):
        quorum_size(3, 1)


@given(st.integers(1, 300), st.data())
def test_quorums_intersect_in_a_correct_process(n, data):
    f = data.draw(st.integers(0, (n - 1) // 3))
    q = quorum_size(n, f)
    assert q <= n - f          # a quorum of correct processes exists
    assert 2 * q - n >= f + 1  # any two quorums share a correct process


def make_wbb(pid, n=4, f=1, own=None, pot=None, k=2, keys=None):
    own = set(range(n)) if own is None else own
    pot = set(range(n)) if pot is None else pot
    verify = keys.verify if keys else (lambda p: True)
    return WBBInstance(pid, EV, n, f, own, pot, k, verify)


def test_role_gating():
    keys = Keyring(4)
    m = keys.sign(EV, b"m")
    outsider = make_wbb(3, pot={0, 1, 2}, keys=keys)
    assert not outsider.is_witness
    notify = ProtocolMessage(EV, Kind.NOTIFY, m, Tag.PI, 0)
    assert not outsider.on_message(notify).sends
    # READY Pi from a quorum would trigger a witness into VALIDATE; a non-witness stays quiet
    for s in range(4):
        out = outsider.on_message(ProtocolMessage(EV, Kind.READY, m, Tag.PI, s))
        assert all(send.message.tag is not Tag.W and send.message.kind is not Kind.VALIDATE
                   for send in out.sends)
    witness = make_wbb(2, pot={0, 1, 2}, keys=keys)
    assert witness.is_witness


def test_broadcast_reaches_every_potential_witness():
    keys = Keyring(20)
    inst = WBBInstance(0, EV, 20, 3, range(12), range(12), 3, keys.verify)
    out = inst.broadcast(keys.sign(EV, b"m"))
    assert dest_count(out, 20) == 12
    assert all(s.message.kind is Kind.NOTIFY and s.message.tag is Tag.PI for s in out.sends)
    with pytest.raises(ProtocolMisuseError):
        inst.broadcast(keys.sign(EV, b"m"))


def test_broadcast_preconditions():
    keys = Keyring(4)
    with pytest.raises(ProtocolMisuseError):
        make_wbb(1, keys=keys).broadcast(keys.sign(EV, b"m"))
    with pytest.raises(ProtocolMisuseError):
        make_wbb(0, keys=keys).broadcast(keys.sign(EventId(2, 1), b"m"))
    with pytest.raises(ProtocolMisuseError):
        make_wbb(0, k=0)


def test_witness_first_notify_echoes_to_all_once():
    keys = Keyring(4)
    m = keys.sign(EV, b"m")
    inst = make_wbb(1, keys=keys)
    out = inst.on_message(ProtocolMessage(EV, Kind.NOTIFY, m, Tag.PI, 0))
    assert [(s.dests, s.message.kind, s.message.tag) for s in out.sends] == [(ALL, Kind.ECHO, Tag.W)]
    assert dest_count(out, 4) == 4
    assert not inst.on_message(ProtocolMessage(EV, Kind.NOTIFY, m, Tag.PI, 0))


def test_k_validates_from_own_witnesses_deliver():
    keys = Keyring(7)
    m = keys.sign(EV, b"m")
    inst = WBBInstance(6, EV, 7, 2, {1, 2, 3}, range(7), 2, keys.verify)
    assert inst.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, 5)).deliver is None
    assert inst.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, 1)).deliver is None
    assert inst.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, 1)).deliver is None
    assert inst.on_message(ProtocolMessage(EV, Kind.VALIDATE, m, Tag.NONE, 3)).deliver == m
    other = keys.sign(EV, b"other")
    for s in (1, 2, 3):
        assert inst.on_message(ProtocolMessage(EV, Kind.VALIDATE, other, Tag.NONE, s)).deliver is None
    assert inst.delivered == m


@pytest.mark.parametrize("kind,tag", [(Kind.NOTIFY, Tag.W), (Kind.VALIDATE, Tag.PI),
                                      (Kind.ECHO, Tag.NONE), (Kind.RECOVER, Tag.NONE)])
def test_malformed_messages_rejected(kind, tag):
    keys = Keyring(4)
    inst = make_wbb(1, keys=keys)
    out = inst.on_message(ProtocolMessage(EV, kind, keys.sign(EV, b"m"), tag, 0))
    assert out.rejected and not out.sends


def test_forged_and_misrouted_payloads_rejected():
    keys = Keyring(4)
    inst = make_wbb(1, keys=keys)
    forged = keys.sign(EV, b"m").__class__(EV, b"m", b"\0" * 32)
    assert inst.on_message(ProtocolMessage(EV, Kind.NOTIFY, forged, Tag.PI, 0)).rejected
    other = keys.sign(EventId(2, 1), b"m")
    assert inst.on_message(ProtocolMessage(EV, Kind.NOTIFY, other, Tag.PI, 0)).rejected
    assert inst.on_message(ProtocolMessage(EV, Kind.NOTIFY, None, Tag.PI, 0)).rejected


def run_wbb(n, f, seed, own_of=None, pot=None, k=None, silent=()):
    keys = Keyring(n)
    pot = set(range(n)) if pot is None else pot
    k = k or f + 1
    nodes = {p: WBBInstance(p, EV, n, f, own_of(p) if own_of else pot, pot, k, keys.verify)
             for p in range(n)}
    sched = RandomScheduler(nodes, n, seed, silent=silent)
    sched.push(0, nodes[0].broadcast(keys.sign(EV, b"m")))
    return sched, nodes


def test_wbb_good_run_everyone_delivers():
    for seed in range(20):
        sched, nodes = run_wbb(7, 2, seed)
        sched.run()
        assert set(sched.deliveries) == set(range(7))
        assert {p.value for p in sched.deliveries.values()} == {b"m"}


def test_wbb_at_most_once_per_action():
    sched, nodes = run_wbb(7, 2, 3)
    sent = []
    orig = sched.push

    def spy(sender, emission):
        for s in emission.sends:
            sent.append((sender, s.message.kind, s.message.tag))
        orig(sender, emission)

    sched.push = spy
    sched.run()
    counts = {}
    for key in sent:
        counts[key] = counts.get(key, 0) + 1
    assert max(counts.values()) == 1


def test_wbb_mute_witnesses_within_slack():
    # 10 processes, f=3, W = V = 0..6, k = 4: three mute witnesses leave four correct ones
    for seed in range(20):
        sched, _ = run_wbb(10, 3, seed, pot=set(range(7)), k=4, silent={4, 5, 6})
        sched.run()
        assert set(range(4)) | set(range(7, 10)) <= set(sched.deliveries)


class CountingScheduler(RandomScheduler):
    sent = 0

    def push(self, sender, emission):
        if sender not in self.silent:
            self.sent += dest_count(emission, self.n)
        super().push(sender, emission)


def test_wbb_message_count_is_order_n_v():
    n, v = 16, 6
    keys = Keyring(n)
    nodes = {p: WBBInstance(p, EV, n, 2, range(v), range(v), 3, keys.verify) for p in range(n)}
    sched = CountingScheduler(nodes, n, 1)
    sched.push(0, nodes[0].broadcast(keys.sign(EV, b"m")))
    sched.run()
    assert len(sched.deliveries) == n
    # NOTIFY to V, then ECHO-W, ECHO-Pi, READY-W, READY-Pi and VALIDATE: v + 5 n v
    assert sched.sent == v + 5 * n * v


def test_bracha_good_run_three_delays():
    keys = Keyring(4)
    nodes = {p: BrachaInstance(p, EV, 4, 1, keys.verify) for p in range(4)}
    frontier = [(0, nodes[0].broadcast(keys.sign(EV, b"m")))]
    delivered_at = {}
    for step in range(1, 5):
        nxt = []
        for sender, em in frontier:
            for send in em.sends:
                for d in (range(4) if send.dests is ALL else send.dests):
                    out = nodes[d].on_message(send.message)
                    if out.deliver is not None:
                        delivered_at[d] = step
                    nxt.append((d, out))
        frontier = nxt
    assert delivered_at == {p: 3 for p in range(4)}


def test_bracha_ready_amplification():
    keys = Keyring(7)
    m = keys.sign(EV, b"m")
    inst = BrachaInstance(6, EV, 7, 2, keys.verify)
    assert not inst.on_message(ProtocolMessage(EV, Kind.READY, m, Tag.NONE, 1)).sends
    assert not inst.on_message(ProtocolMessage(EV, Kind.READY, m, Tag.NONE, 2)).sends
    out = inst.on_message(ProtocolMessage(EV, Kind.READY, m, Tag.NONE, 3))
    assert [s.message.kind for s in out.sends] == [Kind.READY]


def test_bracha_send_only_from_source():
    keys = Keyring(4)
    inst = BrachaInstance(2, EV, 4, 1, keys.verify)
    assert inst.on_message(ProtocolMessage(EV, Kind.SEND, keys.sign(EV, b"m"), Tag.NONE, 1)).rejected


def test_bracha_equivocating_source_never_splits():
    n, f = 7, 2
    for seed in range(1000):
        keys = Keyring(n, seed)
        bad = {0, 1}
        nodes = {p: BrachaInstance(p, EV, n, f, keys.verify) for p in range(n) if p not in bad}
        sched = RandomScheduler(nodes, n, seed)
        m, alt = keys.sign(EV, b"m"), keys.sign(EV, b"m'")
        half = sched.rng.sample(range(n), n // 2)
        sched.inject(half, ProtocolMessage(EV, Kind.SEND, m, Tag.NONE, 0))
        sched.inject([p for p in range(n) if p not in half],
                     ProtocolMessage(EV, Kind.SEND, alt, Tag.NONE, 0))
        # the second faulty process votes for both values
        for payload in (m, alt):
            for kind in (Kind.ECHO, Kind.READY):
                sched.inject(range(n), ProtocolMessage(EV, kind, payload, Tag.NONE, 1))
        sched.run()
        assert len({p for p in sched.deliveries.values()}) <= 1


def test_instance_table_init_is_idempotent():
    made = []
    table = InstanceTable(lambda e: made.append(e) or object())
    a, created = table.init(EV)
    b, again = table.init(EV)
    assert created and not again and a is b and made == [EV]
    assert EV in table and len(table) == 1


def test_long_lived_sequence_and_history():
    keys = Keyring(3)
    ll = LongLivedBroadcast(1)
    p1 = ll.broadcast(b"a", keys.sign)
    assert p1.event == EventId(1, 1)
    with pytest.raises(ProtocolMisuseError):
        ll.broadcast(b"b", keys.sign)
    assert ll.on_deliver(p1)
    assert not ll.on_deliver(p1)
    other = keys.sign(EventId(2, 1), b"z")
    assert ll.on_deliver(other)
    assert len(ll.hist) == 2 and ll.slash.count == 2
    assert ll.broadcast(b"b", keys.sign).event == EventId(1, 2)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(1, 5)), max_size=30))
def test_history_is_a_set(events):
    keys = Keyring(5)
    ll = LongLivedBroadcast(0)
    for src, seq in events:
        ll.on_deliver(keys.sign(EventId(src, seq), b"v"))
    assert len(ll.hist) == len(set(events)) == ll.slash.count
