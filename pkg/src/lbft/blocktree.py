"""Per-node block store: certification tallies, orphans and the main chain."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    GENESIS,
    Block,
    BlockId,
    KeyRing,
    ProtocolParams,
    SafetyViolation,
    Validity,
    Vote,
    VoteType,
    short,
    validate_block,
)


class InsertResult(enum.Enum):
    INSERTED = "inserted"
    BUFFERED = "buffered"
    DUPLICATE = "duplicate"
    REJECTED = "rejected"


class Relation(enum.Enum):
    ANCESTOR = "ancestor"
    DESCENDANT = "descendant"
    EQUAL = "equal"
    CONFLICTING = "conflicting"


@dataclass
class Insertion:
    """Outcome of :meth:`BlockTree.insert`.

    ``added`` lists every block that entered the tree (the block itself plus
    any orphans it released), in insertion order.  ``certified`` lists blocks
    that became certified as a side effect.
    """

    status: InsertResult
    reason: Optional[Validity] = None
    added: list[Block] = field(default_factory=list)
    certified: list[BlockId] = field(default_factory=list)
    rejected: list[tuple[Block, Validity]] = field(default_factory=list)


class _AncestorTxIds:
    # membership test for "tx id already on the path genesis..tip"
    def __init__(self, tree: "BlockTree", tip: BlockId):
        self.tree = tree
        self.tip = tip

    def __contains__(self, tx_id):
        holders = self.tree._tx_index.get(tx_id)
        if not holders:
            return False
        return any(self.tree.is_ancestor_or_equal(h, self.tip) for h in holders)


class BlockTree:
    def __init__(
        self,
        params: ProtocolParams,
        keys: KeyRing,
        verify_proof: Callable = lambda proof, block: True,
    ):
        self.params = params
        self.keys = keys
        self.verify_proof = verify_proof
        self.blocks: dict[BlockId, Block] = {GENESIS.id: GENESIS}
        self.children: dict[BlockId, list[BlockId]] = {GENESIS.id: []}
        self.certified: set[BlockId] = {GENESIS.id}
        self.committed: list[BlockId] = [GENESIS.id]
        self.vote_tally: dict[BlockId, dict[int, Vote]] = {}
        self.com_tally: dict[BlockId, int] = {}
        self.orphans: dict[BlockId, dict[BlockId, Block]] = {}
        self._tx_index: dict[str, list[BlockId]] = {}
        self._committed_set = {GENESIS.id}
        self._top_height = 0
        self._top: list[BlockId] = [GENESIS.id]
        for v in keys.genesis_qc(params).votes:
            self.add_vote(v)

    # -- queries ---------------------------------------------------------

    def __contains__(self, block_id):
        return block_id in self.blocks

    def __len__(self):
        return len(self.blocks)

    def get(self, block_id: BlockId) -> Block:
        return self.blocks[block_id]

    def is_certified(self, block_id: BlockId) -> bool:
        return block_id in self.certified

    def is_committed(self, block_id: BlockId) -> bool:
        return block_id in self._committed_set

    @property
    def top_height(self) -> int:
        return self._top_height

    def highest_certified(self) -> list[BlockId]:
        """Certified blocks of maximal height, sorted by id."""
        return sorted(self._top)

    def tally(self, block_id: BlockId) -> int:
        return len(self.vote_tally.get(block_id, ()))

    def com_count(self, block_id: BlockId) -> int:
        return self.com_tally.get(block_id, 0)

    def votes_for(self, block_id: BlockId) -> list[Vote]:
        t = self.vote_tally.get(block_id, {})
        return [t[k] for k in sorted(t)]

    def ancestor_at(self, block_id: BlockId, height: int) -> BlockId:
        b = self.blocks[block_id]
        if height > b.height or height < 0:
            raise ValueError(f"no ancestor at height {height} for block of height {b.height}")
        while b.height > height:
            b = self.blocks[b.parent]
        return b.id

    def is_ancestor_or_equal(self, a: BlockId, b: BlockId) -> bool:
        ha = self.blocks[a].height
        if ha > self.blocks[b].height:
            return False
        return self.ancestor_at(b, ha) == a

    def relation(self, a: BlockId, b: BlockId) -> Relation:
        if a not in self.blocks or b not in self.blocks:
            raise KeyError("unknown block")
        if a == b:
            return Relation.EQUAL
        if self.is_ancestor_or_equal(a, b):
            return Relation.ANCESTOR
        if self.is_ancestor_or_equal(b, a):
            return Relation.DESCENDANT
        return Relation.CONFLICTING

    def conflicts(self, a: BlockId, b: BlockId) -> bool:
        return self.relation(a, b) is Relation.CONFLICTING

    def ancestor_tx_ids(self, tip: BlockId):
        return _AncestorTxIds(self, tip)

    def main_chain(self) -> list[Block]:
        return [self.blocks[b] for b in self.committed]

    # -- mutation --------------------------------------------------------

    def _mark_certified(self, block_id: BlockId) -> bool:
        if block_id in self.certified:
            return False
        self.certified.add(block_id)
        h = self.blocks[block_id].height
        if h > self._top_height:
            self._top_height = h
            self._top = [block_id]
        elif h == self._top_height:
            self._top.append(block_id)
        return True

    def add_vote(self, vote: Vote) -> Optional[BlockId]:
        """Tally ``vote``; return the block id when its tally first reaches quorum.

        Votes for blocks not yet in the tree are kept; the block becomes
        certified when it arrives.
        """
        t = self.vote_tally.setdefault(vote.block, {})
        if vote.voter in t:
            return None
        t[vote.voter] = vote
        if vote.vote_type == VoteType.COM:
            self.com_tally[vote.block] = self.com_tally.get(vote.block, 0) + 1
        if len(t) == self.params.quorum:
            if vote.block in self.blocks:
                self._mark_certified(vote.block)
            return vote.block
        return None

    def insert(self, block: Block) -> Insertion:
        if block.id in self.blocks:
            return Insertion(InsertResult.DUPLICATE)
        parent = block.parent
        if parent is None:
            return Insertion(InsertResult.REJECTED, Validity.BAD_QC)
        if parent not in self.blocks:
            self.orphans.setdefault(parent, {})[block.id] = block
            return Insertion(InsertResult.BUFFERED)
        out = Insertion(InsertResult.INSERTED)
        verdict = self._insert_one(block, out)
        if not verdict:
            out.status = InsertResult.REJECTED
            out.reason = verdict
            return out
        # release orphans waiting on anything we just added
        i = 0
        while i < len(out.added):
            waiting = self.orphans.pop(out.added[i].id, None)
            i += 1
            if waiting:
                for child in waiting.values():
                    self._insert_one(child, out)
        return out

    def _insert_one(self, block: Block, out: Insertion) -> Validity:
        parent = self.blocks[block.parent]
        verdict = validate_block(
            block, self.params, parent, self.keys, self.verify_proof, self.ancestor_tx_ids(parent.id)
        )
        if not verdict:
            out.rejected.append((block, verdict))
            return verdict
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[parent.id].append(block.id)
        for tx in block.txs:
            self._tx_index.setdefault(tx.tx_id, []).append(block.id)
        out.added.append(block)
        # the embedded QC certifies the parent
        was_certified = parent.id in self.certified
        for v in block.parent_qc.votes:
            self.add_vote(v)
        self._mark_certified(parent.id)
        if not was_certified:
            out.certified.append(parent.id)
        if self.tally(block.id) >= self.params.quorum and self._mark_certified(block.id):
            out.certified.append(block.id)
        return verdict

    def commit_ancestors(self, certified: BlockId) -> list[BlockId]:
        """Commit every uncommitted strict ancestor of a com-certified block.

        Nothing happens unless the block's tally holds at least ``2f+1``
        commit votes.  Raises :class:`SafetyViolation` if the ancestors
        conflict with the existing main chain.
        """
        if certified not in self.blocks or self.com_count(certified) < self.params.quorum:
            return []
        parent = self.blocks[certified].parent
        if parent is None:
            return []
        tip_h = len(self.committed) - 1
        ph = self.blocks[parent].height
        if ph <= tip_h:
            if self.committed[ph] != parent:
                raise SafetyViolation(ph, self.committed[ph], parent)
            return []
        path = []
        b = parent
        while self.blocks[b].height > tip_h:
            path.append(b)
            b = self.blocks[b].parent
        if b != self.committed[tip_h]:
            raise SafetyViolation(tip_h, self.committed[tip_h], b)
        path.reverse()
        self.committed.extend(path)
        self._committed_set.update(path)
        return path

    # -- snapshots -------------------------------------------------------

    def snapshot(self) -> dict:
        """Plain-data view of the tree, stable across runs (sorted keys/ids)."""
        ids = sorted(self.blocks, key=lambda b: (self.blocks[b].height, b))
        return {
            "blocks": [
                {
                    "id": b.hex(),
                    "height": self.blocks[b].height,
                    "parent": None if self.blocks[b].parent is None else self.blocks[b].parent.hex(),
                    "proposer": self.blocks[b].proposer,
                    "certified": b in self.certified,
                    "votes": self.tally(b),
                    "com_votes": self.com_count(b),
                }
                for b in ids
            ],
            "committed": [b.hex() for b in self.committed],
            "orphans": sorted(b.hex() for w in self.orphans.values() for b in w),
        }

    def __repr__(self):
        return (
            f"BlockTree(blocks={len(self.blocks)}, top={self._top_height}, "
            f"committed={len(self.committed) - 1}, tips={[short(b) for b in self.highest_certified()]})"
        )
