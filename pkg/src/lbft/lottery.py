"""Seeded Poisson lottery standing in for PoW/VRF block proofs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Block, BlockId, BlockProof


@dataclass(frozen=True)
class LotteryParams:
    lam: float
    beta: float
    num_proposers: int
    adversarial: Optional[int] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        m = (self.num_proposers - 1) // 2
        if not 0 <= self.beta <= m / self.num_proposers + 1e-12:
            raise ValueError(f"beta must lie in [0, {m}/{self.num_proposers}]")
        if self.beta > 0 and self.num_adversarial == 0:
            raise ValueError("beta > 0 needs at least one adversarial proposer")
        if self.num_adversarial >= self.num_proposers:
            raise ValueError("at least one proposer must be honest")

    @property
    def lambda_h(self) -> float:
        return (1.0 - self.beta) * self.lam

    @property
    def lambda_a(self) -> float:
        return self.beta * self.lam

    @property
    def per_proposer_rate(self) -> float:
        return self.lam / self.num_proposers

    @property
    def num_adversarial(self) -> int:
        """Proposers ``0 .. k-1`` belong to the adversary.

        Defaults to ``ceil(beta * (2m+1))``; a scenario that corrupts more
        proposer-hosting nodes passes its own count.
        """
        if self.adversarial is not None:
            return self.adversarial
        return math.ceil(self.beta * self.num_proposers - 1e-12)


def sample_arrivals(params: LotteryParams, horizon: float, rng: np.random.Generator):
    """Vectorised draw of win times on ``(0, horizon]``.

    Returns ``(times, proposers, adversarial)`` arrays.  Each arrival is the
    adversary's with probability ``beta`` and is attributed uniformly among the
    adversarial proposers; honest arrivals are spread over the rest.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = rng.poisson(params.lam * horizon)
    times = np.sort(rng.uniform(0.0, horizon, size=n))
    adversarial = rng.random(n) < params.beta
    k = params.num_adversarial
    honest_pool = params.num_proposers - k
    proposers = np.where(
        adversarial,
        rng.integers(0, max(k, 1), size=n),
        k + rng.integers(0, honest_pool, size=n),
    )
    return times, proposers, adversarial


def sample_win_times(params: LotteryParams, horizon: float, seed: int) -> list[tuple[float, int]]:
    times, proposers, _ = sample_arrivals(params, horizon, np.random.default_rng(seed))
    return list(zip(times.tolist(), proposers.tolist()))


class ProofRegistry:
    """Issues proofs and binds each one to the first block that uses it.

    Binding is global, so a second block built from the same proof fails
    :meth:`verify` at every node.
    """

    def __init__(self):
        self._issued: dict[int, BlockProof] = {}
        self._bound: dict[int, BlockId] = {}

    def issue(self, winner: int, win_time: float) -> BlockProof:
        proof = BlockProof(winner, float(win_time), len(self._issued))
        self._issued[proof.nonce] = proof
        return proof

    def bind(self, proof: BlockProof, block: Block) -> bool:
        if self._issued.get(proof.nonce) != proof:
            return False
        owner = self._bound.setdefault(proof.nonce, block.id)
        return owner == block.id

    def verify(self, proof: BlockProof, block: Block) -> bool:
        if self._issued.get(proof.nonce) != proof or proof.winner != block.proposer:
            return False
        return self._bound.get(proof.nonce) == block.id

    def __len__(self):
        return len(self._issued)


def verify_proof(registry: ProofRegistry, proof: BlockProof, block: Block) -> bool:
    return registry.verify(proof, block)
