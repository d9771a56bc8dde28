"""The LBFT node reactor: proposing, voting and committing rules."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .blocktree import BlockTree, InsertResult
from .core import (
    Block,
    BlockId,
    BlockProof,
    KeyRing,
    LBFTError,
    ProtocolParams,
    QuorumCertificate,
    Signer,
    Tx,
    Vote,
    VoteType,
    qc_from_votes,
)


class NoQCAvailable(LBFTError):
    pass


class NotAVoter(LBFTError):
    pass


class NoVote(enum.Enum):
    NOT_HIGHEST = "not_highest"
    ALREADY_VOTED = "already_voted"


@dataclass(frozen=True)
class Decision:
    """Result of :func:`decide_vote`: a vote type to send, or a refusal."""

    vote_type: Optional[VoteType]
    conflict: Optional[BlockId] = None
    refusal: Optional[NoVote] = None

    def __bool__(self):
        return self.vote_type is not None


BROADCAST = "broadcast"


@dataclass(frozen=True)
class Outbound:
    """A message leaving a node.

    ``to`` is :data:`BROADCAST` or a node id; the network layer maps it to
    the configured transmission pattern.
    """

    payload: Union[Block, Vote, QuorumCertificate]
    to: Union[str, int] = BROADCAST


class VoteLog(dict):
    """``BlockId -> VoteType`` for every block a voter has voted for.

    Also indexed by height so the witness-vote scan only touches blocks at
    or above the parent's height.
    """

    def __init__(self):
        super().__init__()
        self._by_height: dict[int, list[BlockId]] = {}
        self._max_height = -1

    def record(self, block: Block, vote_type: VoteType) -> None:
        if block.id in self:
            raise ValueError("a voter only votes once per block")
        self[block.id] = vote_type
        self._by_height.setdefault(block.height, []).append(block.id)
        self._max_height = max(self._max_height, block.height)

    def at_or_above(self, height: int):
        for h in range(height, self._max_height + 1):
            yield from self._by_height.get(h, ())


def decide_vote(tree: BlockTree, voted: dict[BlockId, VoteType], block: Block) -> Decision:
    """Voting rule for a block that is already in ``tree``.

    Vote only when the parent is one of the highest certified blocks,
    ignoring any certification of ``block`` itself.  The
    vote is a witness vote when this voter has voted for some block at height
    at least the parent's that conflicts with the parent; the witness proof is
    the lowest such block, ties broken by id.
    """
    tips = tree.highest_certified()
    # votes that arrived before the block may already certify it; the rule
    # looks at the certified set as it stood before this block
    if tips == [block.id]:
        tips = [block.parent]
    if block.parent not in tips:
        return Decision(None, refusal=NoVote.NOT_HIGHEST)
    if block.id in voted:
        return Decision(None, refusal=NoVote.ALREADY_VOTED)
    parent = tree.get(block.parent)
    witnesses = []
    candidates = voted.at_or_above(parent.height) if isinstance(voted, VoteLog) else voted
    for c in candidates:
        cb = tree.blocks.get(c)
        if cb is not None and cb.height >= parent.height and tree.conflicts(c, parent.id):
            witnesses.append((cb.height, c))
    if witnesses:
        return Decision(VoteType.WIT, conflict=min(witnesses)[1])
    return Decision(VoteType.COM)


def build_block(
    tree: BlockTree,
    parent: BlockId,
    proof: BlockProof,
    pending: Iterable[Tx],
    params: ProtocolParams,
) -> Block:
    """Assemble a block on ``parent`` from the local tally and pending txs."""
    try:
        qc = qc_from_votes(tree.votes_for(parent), params)
    except LBFTError as e:
        raise NoQCAvailable(str(e)) from None
    on_chain = tree.ancestor_tx_ids(parent)
    txs, seen = [], set()
    for tx in pending:
        if tx.tx_id not in seen and tx.tx_id not in on_chain:
            seen.add(tx.tx_id)
            txs.append(tx)
    return Block(qc, tuple(txs), proof, tree.get(parent).height + 1, proof.winner)


@dataclass
class NodeState:
    """One honest node.  Events are applied strictly one at a time."""

    id: int
    params: ProtocolParams
    tree: BlockTree
    signer: Optional[Signer] = None
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    voted: VoteLog = field(default_factory=VoteLog)
    pending: dict[str, Tx] = field(default_factory=dict)
    keys: Optional[KeyRing] = None
    registry: object = None
    log: list = field(default_factory=list)

    @property
    def is_proposer(self) -> bool:
        return self.params.is_proposer(self.id)

    @property
    def is_voter(self) -> bool:
        return self.signer is not None

    # -- rules -----------------------------------------------------------

    def decide_vote(self, block: Block) -> Decision:
        if not self.is_voter:
            raise NotAVoter(self.id)
        return decide_vote(self.tree, self.voted, block)

    def on_proof_won(self, proof: BlockProof, pending_txs: Iterable[Tx] = ()) -> tuple[Block, list[Outbound]]:
        tips = self.tree.highest_certified()
        parent = tips[0] if len(tips) == 1 else self.rng.choice(tips)
        txs = list(self.pending.values()) + list(pending_txs)
        block = build_block(self.tree, parent, proof, txs, self.params)
        if self.registry is not None:
            self.registry.bind(proof, block)
        out = [Outbound(block)]
        out += self.on_block_received(block)
        return block, out

    def on_block_received(self, block: Block) -> list[Outbound]:
        res = self.tree.insert(block)
        if res.status not in (InsertResult.INSERTED,):
            return []
        out: list[Outbound] = []
        for b in res.added:
            self.log.append(("insert", b.id))
            if self.is_voter:
                d = decide_vote(self.tree, self.voted, b)
                if d:
                    vote = self.signer.vote(b.id, b.height, d.vote_type, d.conflict)
                    self.voted.record(b, d.vote_type)
                    out.append(Outbound(vote))
                    if self.tree.add_vote(vote) is not None and b.id in self.tree.certified:
                        res.certified.append(b.id)
        for c in res.certified:
            self.log.append(("certify", c))
        touched = {b.id for b in res.added} | {b.parent for b in res.added} | set(res.certified)
        for c in sorted(touched, key=lambda x: (self.tree.get(x).height, x)):
            self.try_commit(c)
        return out

    def on_vote_received(self, vote: Vote) -> list[Block]:
        if self.keys is not None and not self.keys.verify(vote):
            return []
        newly = self.tree.add_vote(vote)
        if newly is not None and newly in self.tree.certified:
            self.log.append(("certify", newly))
        if vote.vote_type == VoteType.COM and vote.block in self.tree:
            return self.try_commit(vote.block)
        return []

    def on_qc_received(self, qc: QuorumCertificate) -> list[Block]:
        committed = []
        for v in qc.votes:
            committed += self.on_vote_received(v)
        return committed

    def try_commit(self, certified: BlockId) -> list[Block]:
        ids = self.tree.commit_ancestors(certified)
        for b in ids:
            self.log.append(("commit", b))
            for tx in self.tree.get(b).txs:
                self.pending.pop(tx.tx_id, None)
        return [self.tree.get(b) for b in ids]

    def add_tx(self, tx: Tx) -> None:
        self.pending.setdefault(tx.tx_id, tx)
