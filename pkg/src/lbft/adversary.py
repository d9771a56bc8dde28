"""Byzantine strategies for the corrupted proposers and voters.

A single :class:`Adversary` controls every corrupted node.  It hears any
message addressed to a corrupted node at send time, keeps one omniscient
:class:`~lbft.blocktree.BlockTree`, and emits messages only under the
corrupted identities (it holds signers for corrupted voters and nothing else).

Each named strategy is a bundle of three behaviours:

=================  ==============  =====================  ===============
strategy           voters          proposer               pre-GST network
=================  ==============  =====================  ===============
none               rule            honest                 as configured
double_voter       double          honest                 as configured
equivocate         rule            equivocate (banked)    as configured
withhold           selfish         withhold, match        as configured
selective_delay    rule            honest, split sends    partition
combined           double          withhold, split sends  partition
double_qc          double          honest, split sends    partition
=================  ==============  =====================  ===============
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Union

from .blocktree import BlockTree
from .core import Block, BlockProof, KeyRing, ProtocolParams, QuorumCertificate, Vote, VoteType
from .lottery import ProofRegistry
from .protocol import VoteLog, build_block, decide_vote

Payload = Union[Block, Vote, QuorumCertificate]

VOTER_POLICY = {
    "none": "rule",
    "double_voter": "double",
    "equivocate": "rule",
    "withhold": "selfish",
    "selective_delay": "rule",
    "combined": "double",
    "double_qc": "double",
}
PROPOSER_POLICY = {
    "none": "honest",
    "double_voter": "honest",
    "equivocate": "equivocate",
    "withhold": "withhold",
    "selective_delay": "honest",
    "combined": "withhold",
    "double_qc": "honest",
}
PARTITIONING = frozenset({"selective_delay", "combined", "double_qc"})


@dataclass(frozen=True)
class Emission:
    """A message from a corrupted identity.

    ``targets`` get prompt delivery; every other honest node still receives
    it by ``max(t, gst) + delta``.  ``None`` means all honest nodes promptly.
    """

    payload: Payload
    sender: int
    targets: Optional[tuple[int, ...]] = None


class Adversary:
    def __init__(
        self,
        strategy: str,
        params: ProtocolParams,
        keys: KeyRing,
        registry: ProofRegistry,
        corrupted: frozenset[int],
        honest: list[int],
        rng: random.Random,
        burst: int = 2,
    ):
        self.strategy = strategy
        self.voter_policy = VOTER_POLICY[strategy]
        self.proposer_policy = PROPOSER_POLICY[strategy]
        self.split_sends = strategy in PARTITIONING
        self.params = params
        self.registry = registry
        self.corrupted = corrupted
        self.rng = rng
        self.burst = burst
        self.view = BlockTree(params, keys, registry.verify)
        self.signers = {v: keys.signer(v) for v in sorted(corrupted) if params.is_voter(v)}
        self.voted = {v: VoteLog() for v in self.signers}
        half = (len(honest) + 1) // 2
        self.groups = (tuple(honest[:half]), tuple(honest[half:]))
        self.private: list[Block] = []
        self.bank: list[BlockProof] = []
        self.created: list[tuple[float, Block]] = []
        self.private_log: list[tuple[float, int]] = [(0.0, -1)]
        self.discarded = 0
        self._sends = 0

    # -- helpers ---------------------------------------------------------

    def private_height(self) -> int:
        return max((b.height for b in self.private), default=-1)

    def _note_private(self, now: float) -> None:
        h = self.private_height()
        if h != self.private_log[-1][1]:
            self.private_log.append((now, h))

    def _targets(self) -> Optional[tuple[int, ...]]:
        if not self.split_sends:
            return None
        group = self.groups[self._sends % 2] or None
        self._sends += 1
        return group

    def _votes_for(self, block: Block) -> list[Emission]:
        out = []
        own = block.proposer in self.corrupted
        for voter, signer in self.signers.items():
            log = self.voted[voter]
            if block.id in log:
                continue
            if self.voter_policy == "double" or (self.voter_policy == "selfish" and own):
                vote_type, conflict = VoteType.COM, None
            elif self.voter_policy == "rule":
                d = decide_vote(self.view, log, block)
                if not d:
                    continue
                vote_type, conflict = d.vote_type, d.conflict
            else:
                continue
            vote = signer.vote(block.id, block.height, vote_type, conflict)
            log.record(block, vote_type)
            self.view.add_vote(vote)
            out.append(Emission(vote, voter))
        return out

    def _absorb(self, block: Block) -> list[Emission]:
        res = self.view.insert(block)
        out = []
        for b in res.added:
            out += self._votes_for(b)
        return out

    def _build(self, proof: BlockProof, parent=None) -> Optional[Block]:
        if parent is None:
            tips = self.view.highest_certified()
            parent = tips[0] if len(tips) == 1 else self.rng.choice(tips)
        block = build_block(self.view, parent, proof, (), self.params)
        if not self.registry.bind(proof, block):
            return None
        return block

    def _publish(self, block: Block, now: float) -> list[Emission]:
        self.created.append((now, block))
        out = [Emission(block, block.proposer, self._targets())]
        return out + self._absorb(block)

    # -- reactions -------------------------------------------------------

    def on_message(self, payload: Payload, now: float) -> list[Emission]:
        out: list[Emission] = []
        if isinstance(payload, Block):
            res = self.view.insert(payload)
            for b in res.added:
                out += self._votes_for(b)
                if b.proposer not in self.corrupted:
                    out += self._match(b.height, now)
        elif isinstance(payload, Vote):
            self.view.add_vote(payload)
        else:
            for v in payload.votes:
                self.view.add_vote(v)
        self._prune(now)
        return out

    def on_win(self, proof: BlockProof, now: float) -> list[Emission]:
        if self.proposer_policy == "honest":
            block = self._build(proof)
            return [] if block is None else self._publish(block, now)
        if self.proposer_policy == "equivocate":
            self.bank.append(proof)
            if len(self.bank) < self.burst:
                return []
            tips = self.view.highest_certified()
            bank, self.bank = self.bank, []
            blocks = [self._build(p, tips[i % len(tips)]) for i, p in enumerate(bank)]
            self.split_sends = True
            out = []
            for b in blocks:
                if b is not None:
                    out += self._publish(b, now)
            self.split_sends = self.strategy in PARTITIONING
            return out
        # withhold: keep the block until an honest block shows up at its height
        block = self._build(proof)
        if block is None:
            return []
        self.created.append((now, block))
        self.private.append(block)
        self._note_private(now)
        return []

    def _match(self, height: int, now: float) -> list[Emission]:
        release = [b for b in self.private if b.height == height]
        if not release:
            return []
        self.private = [b for b in self.private if b.height != height]
        out = []
        for b in release:
            out.append(Emission(b, b.proposer, self._targets()))
            out += self._absorb(b)
        self._note_private(now)
        return out

    def _prune(self, now: float) -> None:
        # a private block whose height is already certified can no longer gather honest votes
        top = self.view.top_height
        stale = [b for b in self.private if b.height <= top]
        if stale:
            self.discarded += len(stale)
            self.private = [b for b in self.private if b.height > top]
            self._note_private(now)
