"""Random-order message scheduler for driving state machines without netsim."""

import random

from wbcast.broadcast import ALL


class RandomScheduler:
    """Delivers pending messages in a seeded random order.

    ``nodes`` maps pid -> state machine with ``on_message``. Messages from
    ``silent`` senders are dropped; ``deliveries`` collects pid -> payload.
    """

    def __init__(self, nodes, n, seed, silent=()):
        self.nodes = nodes
        self.n = n
        self.rng = random.Random(seed)
        self.silent = set(silent)
        self.pending = []
        self.deliveries = {}
        self.delivery_step = {}
        self.steps = 0

    def push(self, sender, emission):
        if sender in self.silent:
            emission.sends = []
        for send in emission.sends:
            dests = range(self.n) if send.dests is ALL else send.dests
            for d in dests:
                self.pending.append((d, send.message))
        if emission.deliver is not None:
            self.deliveries.setdefault(sender, emission.deliver)
            self.delivery_step.setdefault(sender, self.steps)

    def inject(self, dests, message):
        for d in dests:
            self.pending.append((d, message))

    def run(self, max_steps=10**6):
        while self.pending and self.steps < max_steps:
            i = self.rng.randrange(len(self.pending))
            self.pending[i], self.pending[-1] = self.pending[-1], self.pending[i]
            dest, msg = self.pending.pop()
            self.steps += 1
            node = self.nodes.get(dest)
            if node is None:
                continue
            self.push(dest, node.on_message(msg))
        return self.deliveries
