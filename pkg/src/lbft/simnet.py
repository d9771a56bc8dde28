"""Deterministic discrete-event simulator with partial synchrony.

Delivery rules (``t`` is the send time):

* after GST every message takes ``U(0, delta]``;
* before GST the schedule decides: ``uniform`` draws ``U(0, pre_gst_max]``
  but never delivers later than ``gst + delta``; ``partition`` splits the
  honest nodes into two halves and holds cross-half traffic until GST;
  ``hold`` holds everything (a network that never reaches GST delivers
  nothing);
* messages to corrupted nodes reach the adversary immediately;
* adversary messages reach their chosen targets within ``delta`` and every
  other honest node at ``max(t, gst) + delta``.

Events at equal timestamps run in scheduling order (a global sequence
counter), so a ``(config, seed)`` pair fixes the whole run.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adversary import PARTITIONING, Adversary, Emission
from .blocktree import BlockTree
from .core import Block, KeyRing, QuorumCertificate, SafetyViolation, Tx, Vote
from .lottery import ProofRegistry, sample_arrivals
from .protocol import BROADCAST, NodeState, Outbound
from .scenario import ScenarioConfig

_DELIVER, _WIN, _TX, _TIMER, _ADV = range(5)
_KIND = {Block: "block", Vote: "vote", QuorumCertificate: "qc"}


@dataclass(frozen=True)
class BlockInfo:
    height: int
    proposer: int
    parent: Optional[bytes]
    created: float
    honest: bool
    tx_ids: tuple[str, ...] = ()


@dataclass
class SimulationTrace:
    """Everything a run leaves behind for the analysis code."""

    config: ScenarioConfig
    seed: int
    honest: list[int]
    corrupted: list[int]
    blocks: dict = field(default_factory=dict)
    inserted: dict = field(default_factory=dict)
    certified: dict = field(default_factory=dict)
    commits: dict = field(default_factory=dict)
    messages: Counter = field(default_factory=Counter)
    per_block: dict = field(default_factory=dict)
    per_payload: Counter = field(default_factory=Counter)
    honest_top: list = field(default_factory=lambda: [(0.0, 0)])
    private_top: list = field(default_factory=lambda: [(0.0, -1)])
    txs: dict = field(default_factory=dict)
    wins: list = field(default_factory=list)
    violation: Optional[dict] = None
    records: list = field(default_factory=list)
    end_time: float = 0.0
    events: int = 0

    @property
    def gst(self) -> float:
        return self.config.network.gst

    @property
    def delta(self) -> float:
        return self.config.network.delta

    def commit_log(self, node: int) -> list[tuple[float, int, bytes]]:
        return self.commits.get(node, [])

    def record_lines(self):
        for r in self.records:
            yield json.dumps(r, sort_keys=True, separators=(",", ":"))


class _Msg:
    __slots__ = ("kind", "payload", "sender", "key")

    def __init__(self, payload, sender):
        self.kind = _KIND[type(payload)]
        self.payload = payload
        self.sender = sender
        if self.kind == "block":
            self.key = ("b", payload.id)
        elif self.kind == "vote":
            self.key = ("v", payload.block, payload.voter, int(payload.vote_type))
        else:
            self.key = ("q", payload.block, len(payload.votes))

    @property
    def block(self) -> bytes:
        return self.payload.id if self.kind == "block" else self.payload.block


def _seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


class Simulator:
    def __init__(self, config: ScenarioConfig, seed: Optional[int] = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.params = config.protocol_params()
        net = config.network
        self.delta = net.delta
        self.gst = net.gst
        self.pattern = net.pattern
        self.schedule = net.pre_gst
        if config.adversary.strategy in PARTITIONING and self.schedule == "uniform":
            self.schedule = "partition"
        self.pre_gst_max = net.pre_gst_max or 10 * net.delta
        n = self.params.num_nodes
        self.fanout = min(net.fanout or (math.ceil(math.log2(n)) + 1), n - 1)
        self.horizon = config.horizon
        self.record = config.record_events

        s_lottery, s_net, s_nodes, s_adv, s_tx, s_keys = _seeds(self.seed, 6)
        self.np_rng = np.random.default_rng(s_lottery)
        self.rng = random.Random(s_net)
        self.tx_rng = random.Random(s_tx)
        self.keys = KeyRing(self.params.num_voters, seed=s_keys)
        self.registry = ProofRegistry()

        self.corrupted = config.corrupted
        self.honest = [i for i in range(n) if i not in self.corrupted]
        half = (len(self.honest) + 1) // 2
        self.side = {v: (0 if i < half else 1) for i, v in enumerate(self.honest)}

        node_seeds = _seeds(s_nodes, n)
        self.nodes: dict[int, NodeState] = {}
        for i in self.honest:
            tree = BlockTree(self.params, self.keys, self.registry.verify)
            self.nodes[i] = NodeState(
                id=i,
                params=self.params,
                tree=tree,
                signer=self.keys.signer(i) if self.params.is_voter(i) else None,
                rng=random.Random(node_seeds[i]),
                keys=self.keys,
                registry=self.registry,
            )
        self.adversary = None
        if self.corrupted:
            self.adversary = Adversary(
                config.adversary.strategy,
                self.params,
                self.keys,
                self.registry,
                self.corrupted,
                self.honest,
                random.Random(s_adv),
                burst=config.adversary.burst,
            )

        self.trace = SimulationTrace(config, self.seed, list(self.honest), sorted(self.corrupted))
        for i in self.honest:
            self.trace.inserted[i] = {}
            self.trace.certified[i] = {}
            self.trace.commits[i] = []
        self._heap: list = []
        self._seq = 0
        self.now = 0.0
        self._seen: dict[int, set] = {i: set() for i in self.honest}
        self._adv_seen: set = set()
        self._qc_sent: dict[bytes, int] = {}
        self._honest_top = 0

    # -- scheduling ------------------------------------------------------

    def _push(self, t: float, kind: int, a, b=None) -> None:
        if t > self.horizon or math.isinf(t):
            return
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, a, b))

    def _uniform_delta(self) -> float:
        return self.delta * (1.0 - self.rng.random())

    def delivery_time(self, sender: int, recipient: int, now: float) -> float:
        """When an honest-to-honest message sent at ``now`` arrives."""
        if now >= self.gst:
            return now + self._uniform_delta()
        if self.schedule == "hold":
            return self.gst + self._uniform_delta()
        if self.schedule == "partition":
            if self.side.get(sender, -1) == self.side.get(recipient, -2):
                return now + self._uniform_delta()
            return self.gst + self._uniform_delta()
        t = now + self.pre_gst_max * (1.0 - self.rng.random())
        if t > self.gst + self.delta:
            t = self.gst + self._uniform_delta()
        return t

    def _count(self, msg: _Msg) -> None:
        self.trace.messages[msg.kind] += 1
        per = self.trace.per_block.setdefault(msg.block, Counter())
        per[msg.kind] += 1
        self.trace.per_payload[msg.key] += 1

    def _send_one(self, msg: _Msg, recipient: int) -> None:
        self._count(msg)
        if self.record:
            self.trace.records.append(
                {"t": self.now, "ev": "send", "node": msg.sender, "to": recipient, "kind": msg.kind,
                 "block": msg.block.hex()}
            )
        if recipient in self.corrupted:
            self._push(self.now, _ADV, msg)
        elif recipient == msg.sender:
            self._push(self.now, _DELIVER, recipient, msg)
        else:
            self._push(self.delivery_time(msg.sender, recipient, self.now), _DELIVER, recipient, msg)

    def _others(self, node: int) -> list[int]:
        return [i for i in range(self.params.num_nodes) if i != node]

    def _send(self, node: int, out: Outbound) -> None:
        msg = _Msg(out.payload, node)
        if out.to != BROADCAST:
            self._send_one(msg, out.to)
            return
        if self.pattern == "gossip":
            self._seen[node].add(msg.key)
            for peer in self.rng.sample(self._others(node), self.fanout):
                self._send_one(msg, peer)
            return
        if self.pattern == "leader" and msg.kind == "vote":
            leader = self.nodes[node].tree.get(msg.payload.block).proposer
            self._send_one(msg, leader)
            fallback = self.now + self.config.network.leader_fallback * self.delta
            self._push(fallback, _TIMER, node, msg)
            return
        for peer in self._others(node):
            self._send_one(msg, peer)

    def _emit(self, em: Emission) -> None:
        msg = _Msg(em.payload, em.sender)
        prompt = set(self.honest if em.targets is None else em.targets)
        hold = self.schedule == "hold" and self.now < self.gst
        for peer in self.honest:
            self._count(msg)
            if peer in prompt and not hold:
                t = self.now + self._uniform_delta()
            else:
                t = max(self.now, self.gst) + self.delta
            if self.record:
                self.trace.records.append(
                    {"t": self.now, "ev": "send", "node": em.sender, "to": peer, "kind": msg.kind,
                     "block": msg.block.hex()}
                )
            self._push(t, _DELIVER, peer, msg)

    # -- event handlers --------------------------------------------------

    def _register(self, block: Block, honest: bool, created: float) -> None:
        if block.id not in self.trace.blocks:
            self.trace.blocks[block.id] = BlockInfo(
                block.height, block.proposer, block.parent, created, honest, block.tx_ids
            )

    def _harvest(self, node: NodeState) -> None:
        i = node.id
        for kind, bid in node.log:
            if kind == "insert":
                self.trace.inserted[i].setdefault(bid, self.now)
            elif kind == "certify":
                self.trace.certified[i].setdefault(bid, self.now)
                if self.pattern == "leader":
                    self._maybe_send_qc(node, bid)
            else:
                self.trace.commits[i].append((self.now, node.tree.get(bid).height, bid))
            if self.record:
                self.trace.records.append({"t": self.now, "ev": kind, "node": i, "block": bid.hex()})
        node.log.clear()
        top = node.tree.top_height
        if top > self._honest_top:
            self._honest_top = top
            self.trace.honest_top.append((self.now, top))

    def _maybe_send_qc(self, node: NodeState, bid: bytes) -> None:
        tree = node.tree
        if bid not in tree or tree.get(bid).proposer != node.id:
            return
        com = tree.com_count(bid)
        prev = self._qc_sent.get(bid)
        if prev is not None and (prev >= self.params.quorum or com < self.params.quorum):
            return
        votes = tree.votes_for(bid)
        qc = QuorumCertificate(bid, tree.get(bid).height, tuple(votes))
        self._qc_sent[bid] = com
        msg = _Msg(qc, node.id)
        for peer in self._others(node.id):
            self._send_one(msg, peer)

    def _deliver(self, i: int, msg: _Msg) -> None:
        node = self.nodes[i]
        if msg.key in self._seen[i]:
            return
        self._seen[i].add(msg.key)
        if self.record:
            self.trace.records.append(
                {"t": self.now, "ev": "deliver", "node": i, "from": msg.sender, "kind": msg.kind,
                 "block": msg.block.hex()}
            )
        if self.pattern == "gossip" and msg.sender != i:
            peers = [p for p in self._others(i) if p != msg.sender]
            for peer in self.rng.sample(peers, min(self.fanout, len(peers))):
                self._send_one(_Msg(msg.payload, i), peer)
        if msg.kind == "block":
            outs = node.on_block_received(msg.payload)
            for out in outs:
                self._send(i, out)
        elif msg.kind == "vote":
            node.on_vote_received(msg.payload)
            if self.pattern == "leader" and msg.payload.vote_type == 0:
                self._maybe_upgrade_qc(node, msg.payload.block)
        else:
            node.on_qc_received(msg.payload)
        self._harvest(node)

    def _maybe_upgrade_qc(self, node: NodeState, bid: bytes) -> None:
        if bid in self._qc_sent and node.tree.com_count(bid) == self.params.quorum:
            self._maybe_send_qc(node, bid)

    def _win(self, proposer: int) -> None:
        proof = self.registry.issue(proposer, self.now)
        self.trace.wins.append((self.now, proposer, proposer in self.corrupted))
        if self.record:
            self.trace.records.append({"t": self.now, "ev": "win", "node": proposer})
        if proposer in self.corrupted:
            self._adversary_out(self.adversary.on_win(proof, self.now))
            return
        node = self.nodes[proposer]
        block, outs = node.on_proof_won(proof)
        self._register(block, True, self.now)
        self._seen[proposer].add(("b", block.id))
        for out in outs:
            self._send(proposer, out)
        self._harvest(node)

    def _adversary_out(self, emissions: list[Emission]) -> None:
        for em in emissions:
            if isinstance(em.payload, Block):
                self._register(em.payload, False, self.now)
            self._emit(em)
        self.trace.private_top = self.adversary.private_log

    def _adv_receive(self, msg: _Msg) -> None:
        if msg.key in self._adv_seen:
            return
        self._adv_seen.add(msg.key)
        self._adversary_out(self.adversary.on_message(msg.payload, self.now))

    def _timer(self, i: int, msg: _Msg) -> None:
        node = self.nodes[i]
        if not node.tree.is_certified(msg.payload.block):
            for peer in self._others(i):
                self._send_one(msg, peer)

    def _tx(self, i: int, tx: Tx) -> None:
        self.trace.txs.setdefault(tx.tx_id, (self.now, i))
        self.nodes[i].add_tx(tx)
        if self.record:
            self.trace.records.append({"t": self.now, "ev": "tx", "node": i, "tx": tx.tx_id})

    # -- main loop -------------------------------------------------------

    def schedule_win(self, t: float, proposer: int) -> None:
        """Add a lottery win on top of the sampled ones (used by tests)."""
        self._push(t, _WIN, proposer)

    def _schedule_inputs(self) -> None:
        times, proposers, _ = sample_arrivals(self.config.lottery_params(), self.horizon, self.np_rng)
        for t, p in zip(times.tolist(), proposers.tolist()):
            self._push(t, _WIN, p)
        load = self.config.tx_load
        if load.rate > 0:
            stop = self.horizon if load.stop is None else min(load.stop, self.horizon)
            t = load.start
            proposers = [i for i in self.honest if self.params.is_proposer(i)]
            k = 0
            while True:
                t += self.tx_rng.expovariate(load.rate)
                if t > stop:
                    break
                tx = Tx(f"tx-{k}", k.to_bytes(8, "big"))
                k += 1
                targets = proposers if load.targets == "all" else [self.tx_rng.choice(proposers)]
                for p in targets:
                    self._push(t, _TX, p, tx)

    def run(self) -> SimulationTrace:
        self._schedule_inputs()
        heap = self._heap
        try:
            while heap:
                t, _, kind, a, b = heapq.heappop(heap)
                self.now = t
                self.trace.events += 1
                if kind == _DELIVER:
                    self._deliver(a, b)
                elif kind == _ADV:
                    self._adv_receive(a)
                elif kind == _WIN:
                    self._win(a)
                elif kind == _TX:
                    self._tx(a, b)
                else:
                    self._timer(a, b)
        except SafetyViolation as e:
            self.trace.violation = {
                "time": self.now,
                "height": e.height,
                "committed": e.committed.hex(),
                "attempted": e.attempted.hex(),
            }
            if self.record:
                self.trace.records.append({"t": self.now, "ev": "violation", **self.trace.violation})
        self.trace.end_time = self.now if self.trace.violation else self.horizon
        if self.adversary is not None:
            self.trace.private_top = list(self.adversary.private_log)
        return self.trace


def run(config: ScenarioConfig, seed: Optional[int] = None) -> SimulationTrace:
    return Simulator(config, seed).run()


def message_counts(trace: SimulationTrace) -> dict[bytes, Counter]:
    """Messages attributable to each block certified at every honest node.

    Counts cover block, vote and QC sends that carry the block's id,
    including gossip relays and fallback re-sends.
    """
    out = {}
    for b in sorted(trace.blocks):
        if all(b in trace.certified[i] for i in trace.honest):
            c = Counter(trace.per_block.get(b, {}))
            c["total"] = c["block"] + c["vote"] + c["qc"]
            out[b] = c
    return out


def expected_counts(pattern: str, n: int, f: int) -> int:
    """Closed-form per-block message count for the non-gossip patterns."""
    if pattern == "broadcast":
        return (n - 1) + (3 * f + 1) * (n - 1)
    if pattern == "leader":
        return (n - 1) + (3 * f + 1) + (n - 1)
    raise ValueError("gossip has no closed form; fit it empirically")


def deliver_schedule(sim: "Simulator", sender: int, send_time: float) -> dict[int, float]:
    """Delivery time at every other honest node for an honest message."""
    return {r: sim.delivery_time(sender, r, send_time) for r in sim.honest if r != sender}
