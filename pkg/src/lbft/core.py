"""Domain types shared by every part of the simulator.

Blocks are content addressed: ``Block.id`` is the SHA-256 digest of
:func:`canonical_encode`.  The byte layout (all integers big endian)::

    block    := MAGIC height:u64 proposer:u32 parent:32B qc txs proof
    qc       := 0x00                                  (genesis, no QC)
              | 0x01 n:u32 vote*n                     (votes sorted by voter)
    vote     := voter:u32 kind:u8 conflict:32B sig:32B
    txs      := n:u32 (id_len:u16 id payload_len:u32 payload)*n
    proof    := 0x00 | 0x01 winner:u32 win_time:f64 nonce:u64

``MAGIC`` is ``b"LBFTBLK1"``.  ``kind`` is 0 for a commit vote and 1 for a
witness vote; ``conflict`` is all zeros for commit votes.  Genesis uses
proposer ``0xFFFFFFFF`` and an all-zero parent.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

BlockId = bytes

MAGIC = b"LBFTBLK1"
ID_LEN = 32
NO_ID = bytes(ID_LEN)
NO_PROPOSER = 0xFFFFFFFF


class LBFTError(Exception):
    """Base class for errors raised by this package."""


class SafetyViolation(LBFTError):
    """Two different blocks committed at the same height."""

    def __init__(self, height: int, committed: BlockId, attempted: BlockId, node=None):
        self.height = height
        self.committed = committed
        self.attempted = attempted
        self.node = node
        super().__init__(
            f"height {height}: committed {short(committed)} conflicts with {short(attempted)}"
        )


class InsufficientVotes(LBFTError):
    pass


class MixedBlocks(LBFTError):
    pass


def short(block_id: Optional[BlockId]) -> str:
    return "-" if block_id is None else block_id.hex()[:12]


@dataclass(frozen=True)
class ProtocolParams:
    """Population sizes: ``2m+1`` proposers and ``3f+1`` voters.

    Node ``i`` hosts proposer ``i`` when ``i < 2m+1`` and voter ``i`` when
    ``i < 3f+1``; ``num_nodes`` defaults to the larger population.
    """

    m: int
    f: int
    num_nodes: Optional[int] = None

    def __post_init__(self):
        if self.m < 0 or self.f < 0:
            raise ValueError("m and f must be non-negative")
        if self.num_nodes is None:
            object.__setattr__(self, "num_nodes", max(self.num_proposers, self.num_voters))
        lo = max(self.num_proposers, self.num_voters)
        hi = self.num_proposers + self.num_voters
        if not lo <= self.num_nodes <= hi:
            raise ValueError(f"num_nodes must lie in [{lo}, {hi}], got {self.num_nodes}")

    @property
    def num_proposers(self) -> int:
        return 2 * self.m + 1

    @property
    def num_voters(self) -> int:
        return 3 * self.f + 1

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def is_proposer(self, node: int) -> bool:
        return 0 <= node < self.num_proposers

    def is_voter(self, node: int) -> bool:
        return 0 <= node < self.num_voters

    @property
    def proposers(self) -> range:
        return range(self.num_proposers)

    @property
    def voters(self) -> range:
        return range(self.num_voters)


class VoteType(enum.IntEnum):
    COM = 0
    WIT = 1


@dataclass(frozen=True)
class Tx:
    tx_id: str
    payload: bytes = b""


@dataclass(frozen=True)
class BlockProof:
    """Lottery credential; see :mod:`lbft.lottery` for issuing and binding."""

    winner: int
    win_time: float
    nonce: int


@dataclass(frozen=True)
class Vote:
    block: BlockId
    block_height: int
    voter: int
    vote_type: VoteType
    signature: bytes
    conflict: Optional[BlockId] = None

    def __post_init__(self):
        if self.vote_type == VoteType.WIT and not self.conflict:
            raise ValueError("a witness vote needs a conflicting block id")
        if self.vote_type == VoteType.COM and self.conflict is not None:
            raise ValueError("a commit vote carries no conflict proof")

    def encode(self) -> bytes:
        return struct.pack(
            ">IB32s32s",
            self.voter,
            int(self.vote_type),
            self.conflict or NO_ID,
            self.signature,
        )


class KeyRing:
    """Simulated PKI for voters.

    Tags are keyed BLAKE2 MACs over (block, height, type, conflict).  Only
    holders of a :class:`Signer` for an identity can produce valid tags, which
    is how the simulator keeps the adversary from forging honest votes.
    """

    def __init__(self, num_voters: int, seed: int = 0):
        self._keys = [
            hashlib.blake2b(f"lbft-voter-key/{seed}/{i}".encode(), digest_size=32).digest()
            for i in range(num_voters)
        ]

    def __len__(self):
        return len(self._keys)

    @staticmethod
    def _message(block: BlockId, height: int, vote_type: VoteType, conflict: Optional[BlockId]) -> bytes:
        return block + struct.pack(">QB", height, int(vote_type)) + (conflict or NO_ID)

    def _tag(self, voter: int, msg: bytes) -> bytes:
        return hashlib.blake2b(msg, key=self._keys[voter], digest_size=32).digest()

    def signer(self, voter: int) -> "Signer":
        if not 0 <= voter < len(self._keys):
            raise KeyError(voter)
        return Signer(self, voter)

    def genesis_qc(self, params: "ProtocolParams") -> "QuorumCertificate":
        """The hard-coded certificate of the genesis block (every voter signs it)."""
        if getattr(self, "_genesis_qc", None) is None or len(self._genesis_qc.votes) != params.num_voters:
            votes = tuple(self.signer(v).vote(GENESIS.id, 0) for v in params.voters)
            self._genesis_qc = QuorumCertificate(GENESIS.id, 0, votes)
        return self._genesis_qc

    def verify(self, vote: Vote) -> bool:
        if not 0 <= vote.voter < len(self._keys):
            return False
        msg = self._message(vote.block, vote.block_height, vote.vote_type, vote.conflict)
        return hmac.compare_digest(self._tag(vote.voter, msg), vote.signature)


class Signer:
    def __init__(self, ring: KeyRing, voter: int):
        self._ring = ring
        self.voter = voter

    def vote(
        self,
        block: BlockId,
        height: int,
        vote_type: VoteType = VoteType.COM,
        conflict: Optional[BlockId] = None,
    ) -> Vote:
        msg = KeyRing._message(block, height, vote_type, conflict)
        return Vote(block, height, self.voter, vote_type, self._ring._tag(self.voter, msg), conflict)


@dataclass(frozen=True)
class QuorumCertificate:
    block: BlockId
    block_height: int
    votes: tuple[Vote, ...]

    @property
    def com_count(self) -> int:
        return qc_com_count(self)

    @property
    def voters(self) -> tuple[int, ...]:
        return tuple(v.voter for v in self.votes)

    def encode(self) -> bytes:
        return b"\x01" + struct.pack(">I", len(self.votes)) + b"".join(v.encode() for v in self.votes)


@dataclass(frozen=True)
class Block:
    parent_qc: Optional[QuorumCertificate]
    txs: tuple[Tx, ...]
    proof: Optional[BlockProof]
    height: int
    proposer: int
    id: BlockId = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "id", hashlib.sha256(canonical_encode(self)).digest())

    def __eq__(self, other):
        return isinstance(other, Block) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f"Block(h={self.height}, p={self.proposer}, id={short(self.id)})"

    @property
    def parent(self) -> Optional[BlockId]:
        return None if self.parent_qc is None else self.parent_qc.block

    @property
    def tx_ids(self) -> tuple[str, ...]:
        return tuple(tx.tx_id for tx in self.txs)


def canonical_encode(block: Block) -> bytes:
    parts = [
        MAGIC,
        struct.pack(">QI", block.height, NO_PROPOSER if block.proposer < 0 else block.proposer),
        block.parent or NO_ID,
        b"\x00" if block.parent_qc is None else block.parent_qc.encode(),
        struct.pack(">I", len(block.txs)),
    ]
    for tx in block.txs:
        raw = tx.tx_id.encode()
        parts.append(struct.pack(">H", len(raw)) + raw + struct.pack(">I", len(tx.payload)) + tx.payload)
    if block.proof is None:
        parts.append(b"\x00")
    else:
        p = block.proof
        parts.append(b"\x01" + struct.pack(">IdQ", p.winner, p.win_time, p.nonce))
    return b"".join(parts)


GENESIS = Block(parent_qc=None, txs=(), proof=None, height=0, proposer=-1)


def qc_from_votes(votes: Iterable[Vote], params: ProtocolParams) -> QuorumCertificate:
    """Deduplicate ``votes`` by voter and wrap them in a certificate.

    Vote types are kept as they are; certification does not look at them.
    Raises :class:`MixedBlocks` or :class:`InsufficientVotes`.
    """
    by_voter: dict[int, Vote] = {}
    block = None
    for v in votes:
        if block is None:
            block = (v.block, v.block_height)
        elif (v.block, v.block_height) != block:
            raise MixedBlocks("votes reference different blocks")
        by_voter.setdefault(v.voter, v)
    if len(by_voter) < params.quorum:
        raise InsufficientVotes(f"{len(by_voter)} distinct voters, need {params.quorum}")
    ordered = tuple(by_voter[k] for k in sorted(by_voter))
    return QuorumCertificate(block[0], block[1], ordered)


def qc_com_count(qc: QuorumCertificate) -> int:
    return sum(1 for v in qc.votes if v.vote_type == VoteType.COM)


def check_qc(qc: QuorumCertificate, params: ProtocolParams, keys: KeyRing) -> bool:
    seen = set()
    for v in qc.votes:
        if v.block != qc.block or v.block_height != qc.block_height:
            return False
        if v.voter in seen or not params.is_voter(v.voter):
            return False
        if v.vote_type == VoteType.WIT and (v.conflict is None or len(v.conflict) != ID_LEN):
            return False
        if not keys.verify(v):
            return False
        seen.add(v.voter)
    return len(seen) >= params.quorum


class Validity(enum.Enum):
    VALID = "valid"
    BAD_QC = "bad_qc"
    BAD_HEIGHT = "bad_height"
    BAD_PROOF = "bad_proof"
    DUPLICATE_TX = "duplicate_tx"

    def __bool__(self):
        return self is Validity.VALID


def validate_block(
    block: Block,
    params: ProtocolParams,
    known_parent: Block,
    keys: KeyRing,
    verify_proof,
    ancestor_tx_ids: Mapping[str, object] | frozenset | set = frozenset(),
) -> Validity:
    """Full validity check of ``block`` against its parent.

    ``verify_proof(proof, block) -> bool`` is supplied by the lottery and
    ``ancestor_tx_ids`` holds every tx id on the path from genesis to
    ``known_parent``.
    """
    qc = block.parent_qc
    if qc is None or qc.block != known_parent.id or qc.block_height != known_parent.height:
        return Validity.BAD_QC
    if not check_qc(qc, params, keys):
        return Validity.BAD_QC
    if block.height != known_parent.height + 1:
        return Validity.BAD_HEIGHT
    if block.proof is None or block.proof.winner != block.proposer or not verify_proof(block.proof, block):
        return Validity.BAD_PROOF
    ids = block.tx_ids
    if len(set(ids)) != len(ids) or any(t in ancestor_tx_ids for t in ids):
        return Validity.DUPLICATE_TX
    return Validity.VALID
