"""Leaderless BFT consensus: protocol core, simulator, adversaries and analysis."""

from .analysis import (
    LivenessInputs,
    ProductionTrace,
    chain_stats,
    chernoff_dependent,
    chernoff_poisson,
    eta,
    hidden_lead,
    liveness_condition,
    safety_check,
    unique_blocks,
)
from .blocktree import BlockTree
from .core import GENESIS, Block, ProtocolParams, QuorumCertificate, SafetyViolation, Vote, VoteType
from .protocol import NodeState, decide_vote
from .scenario import ScenarioConfig, load_config
from .simnet import SimulationTrace, Simulator, message_counts, run

__version__ = "0.1.0"

__all__ = [
    "GENESIS",
    "Block",
    "BlockTree",
    "LivenessInputs",
    "NodeState",
    "ProductionTrace",
    "ProtocolParams",
    "QuorumCertificate",
    "SafetyViolation",
    "ScenarioConfig",
    "SimulationTrace",
    "Simulator",
    "Vote",
    "VoteType",
    "chain_stats",
    "chernoff_dependent",
    "chernoff_poisson",
    "decide_vote",
    "eta",
    "hidden_lead",
    "liveness_condition",
    "load_config",
    "message_counts",
    "run",
    "safety_check",
    "unique_blocks",
]
