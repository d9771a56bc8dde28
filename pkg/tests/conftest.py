import pytest

from lbft.blocktree import BlockTree
from lbft.core import GENESIS, Block, KeyRing, ProtocolParams, Tx, VoteType, qc_from_votes
from lbft.lottery import ProofRegistry
from lbft.scenario import ScenarioConfig


class World:
    """Shared keys and proof registry for hand-built blocks."""

    def __init__(self, m=1, f=1):
        self.params = ProtocolParams(m=m, f=f)
        self.keys = KeyRing(self.params.num_voters, seed=1)
        self.registry = ProofRegistry()

    def tree(self):
        return BlockTree(self.params, self.keys, self.registry.verify)

    def votes(self, block, voters=None, kinds=None, conflict=None):
        voters = list(range(self.params.quorum)) if voters is None else voters
        out = []
        for i, v in enumerate(voters):
            kind = VoteType.COM if kinds is None else kinds[i]
            out.append(
                self.keys.signer(v).vote(block.id, block.height, kind, conflict if kind == VoteType.WIT else None)
            )
        return out

    def block(self, parent=GENESIS, proposer=0, txs=(), parent_votes=None, bind=True):
        if parent is GENESIS:
            qc = self.keys.genesis_qc(self.params)
        else:
            qc = qc_from_votes(parent_votes or self.votes(parent), self.params)
        proof = self.registry.issue(proposer, float(len(self.registry)))
        txs = tuple(Tx(t) if isinstance(t, str) else t for t in txs)
        b = Block(qc, txs, proof, parent.height + 1, proposer)
        if bind:
            self.registry.bind(proof, b)
        return b

    def chain(self, length, proposer=0):
        out, parent = [], GENESIS
        for _ in range(length):
            parent = self.block(parent, proposer)
            out.append(parent)
        return out


@pytest.fixture
def world():
    return World()


@pytest.fixture
def world7():
    return World(m=3, f=2)


def scenario(**overrides):
    data = dict(
        horizon=30.0,
        record_events=False,
        protocol=dict(f=1, m=1, num_nodes=4),
        network=dict(delta=0.1, gst=0.0),
        lottery={"lambda": 1.0, "beta": 0.0},
    )
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return ScenarioConfig.model_validate(data)


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
