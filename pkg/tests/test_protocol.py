import random

from hypothesis import given, settings
from hypothesis import strategies as st

from lbft.core import GENESIS, Tx, VoteType
from lbft.protocol import NodeState, NoVote, build_block, decide_vote

COM, WIT = VoteType.COM, VoteType.WIT


def node(world, voter=0, seed=0):
    signer = world.keys.signer(voter) if voter is not None else None
    return NodeState(
        id=voter if voter is not None else 9,
        params=world.params,
        tree=world.tree(),
        signer=signer,
        rng=random.Random(seed),
        keys=world.keys,
        registry=world.registry,
    )


def certify(world, n, block, voters=(1, 2, 3)):
    for v in world.votes(block, list(voters)):
        n.on_vote_received(v)


def test_witness_vote_after_conflicting_vote(world):
    n = node(world)
    bk, bk2 = world.block(proposer=0), world.block(proposer=1)
    n.on_block_received(bk2)
    n.on_block_received(bk)
    certify(world, n, bk)
    nxt = world.block(bk)
    d = decide_vote(n.tree, n.voted, nxt)
    assert d.vote_type is WIT and d.conflict == bk2.id


def test_commit_vote_without_conflict(world):
    n = node(world)
    bk = world.block()
    n.on_block_received(bk)
    certify(world, n, bk)
    d = n.decide_vote(world.block(bk))
    assert d.vote_type is COM and d.conflict is None


def test_stale_parent_refused(world):
    n = node(world)
    bk = world.block()
    n.on_block_received(bk)
    certify(world, n, bk)
    stale = world.block(GENESIS, proposer=1)
    n.tree.insert(stale)
    assert n.decide_vote(stale).refusal is NoVote.NOT_HIGHEST


def test_block_already_certified_by_early_votes(world):
    # votes overtaking their block must not stop this voter from voting
    n = node(world, voter=3)
    b = world.block()
    certify(world, n, b, voters=(0, 1, 2))
    out = n.on_block_received(b)
    assert len(out) == 1 and out[0].payload.vote_type is COM


def test_one_vote_per_fresh_block(world):
    n = node(world)
    b = world.block()
    out = n.on_block_received(b)
    assert len(out) == 1 and out[0].payload.block == b.id
    assert n.on_block_received(b) == []


def test_votes_for_both_siblings(world):
    n = node(world)
    a, a2 = world.block(proposer=0), world.block(proposer=1)
    assert len(n.on_block_received(a)) == 1
    assert len(n.on_block_received(a2)) == 1


def test_third_com_vote_commits_parent(world):
    n = node(world, voter=None)
    b1, b2 = world.chain(2)
    n.on_block_received(b1)
    n.on_block_received(b2)
    v = world.votes(b2, [0, 1, 2])
    assert n.on_vote_received(v[0]) == [] and n.on_vote_received(v[1]) == []
    assert n.on_vote_received(v[2]) == [b1]
    assert n.tree.main_chain() == [GENESIS, b1]


def test_mixed_tally_certifies_without_commit(world):
    n = node(world, voter=None)
    b1, b2 = world.chain(2)
    n.on_block_received(b1)
    n.on_block_received(b2)
    committed = []
    for v in world.votes(b2, [0, 1, 2], [COM, COM, WIT], conflict=GENESIS.id):
        committed += n.on_vote_received(v)
    assert committed == [] and n.tree.is_certified(b2.id)


def test_vote_for_unknown_block_is_kept(world):
    n = node(world, voter=None)
    b1, b2 = world.chain(2)
    n.on_block_received(b1)
    for v in world.votes(b2):
        assert n.on_vote_received(v) == []
    n.on_block_received(b2)
    assert n.tree.is_certified(b2.id)
    assert n.tree.main_chain() == [GENESIS, b1]


def test_propose_on_genesis(world):
    n = node(world)
    block, out = n.on_proof_won(world.registry.issue(0, 0.5))
    assert block.height == 1 and block.parent == GENESIS.id
    assert out[0].payload == block
    assert out[1].payload.block == block.id


def _two_tips(world, tips, seed):
    n = node(world, seed=seed)
    for b in tips:
        n.on_block_received(b)
        certify(world, n, b)
    return n


def test_tip_choice_reproducible(world):
    tips = (world.block(proposer=0), world.block(proposer=1))
    picks = set()
    for _ in range(2):
        n = _two_tips(world, tips, seed=5)
        block, _ = n.on_proof_won(world.registry.issue(0, 1.0))
        picks.add(block.parent)
    assert len(picks) == 1
    parents = {
        _two_tips(world, tips, seed=s).on_proof_won(world.registry.issue(0, 1.0))[0].parent for s in range(12)
    }
    assert parents == {t.id for t in tips}


def test_pending_tx_on_chain_excluded(world):
    n = node(world)
    b1 = world.block(txs=["t1"])
    n.on_block_received(b1)
    certify(world, n, b1)
    block = build_block(n.tree, b1.id, world.registry.issue(0, 1.0), [Tx("t1"), Tx("t2"), Tx("t2")], world.params)
    assert block.tx_ids == ("t2",)


def test_committed_txs_leave_the_pool(world):
    n = node(world, voter=None)
    n.add_tx(Tx("t1"))
    b1 = world.block(txs=["t1"])
    b2 = world.block(b1)
    n.on_block_received(b1)
    n.on_block_received(b2)
    certify(world, n, b2, voters=(0, 1, 2))
    assert "t1" not in n.pending


# -- properties over random delivery orders -------------------------------


def _forest(world):
    a, a2 = world.block(proposer=0), world.block(proposer=1)
    b, b2 = world.block(a), world.block(a2)
    c = world.block(b)
    blocks = [a, a2, b, b2, c]
    # the a2 branch only ever gathers witness votes, so nothing on it commits
    votes = [v for x in (a, a2, b, c) for v in world.votes(x, [1, 2, 3])]
    votes += world.votes(b2, [1, 2, 3], [WIT] * 3, conflict=a.id)
    return blocks, votes


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False))
def test_vote_once_and_com_soundness(rnd):
    from conftest import World

    world = World()
    blocks, votes = _forest(world)
    events = [("b", x) for x in blocks] + [("v", v) for v in votes]
    rnd.shuffle(events)
    n = node(world)
    emitted = []
    for kind, x in events:
        before = dict(n.voted)
        top = n.tree.top_height
        outs = n.on_block_received(x) if kind == "b" else (n.on_vote_received(x) and [])
        for o in outs:
            vote = o.payload
            emitted.append(vote.block)
            b = n.tree.get(vote.block)
            parent = n.tree.get(b.parent)
            assert parent.height >= min(top, b.height - 1)
            if vote.vote_type is COM:
                for prior in before:
                    pb = n.tree.blocks.get(prior)
                    if pb is not None and pb.height >= parent.height:
                        assert not n.tree.conflicts(prior, parent.id)
    assert len(emitted) == len(set(emitted))


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False), st.integers(0, 2**16))
def test_same_events_same_outputs(rnd, seed):
    from conftest import World

    world = World()
    blocks, votes = _forest(world)
    events = [("b", x) for x in blocks] + [("v", v) for v in votes]
    rnd.shuffle(events)
    runs = []
    for _ in range(2):
        n = node(world, seed=seed)
        out = []
        for kind, x in events:
            if kind == "b":
                out += [o.payload for o in n.on_block_received(x)]
            else:
                out += [b.id for b in n.on_vote_received(x)]
        runs.append(out)
    assert runs[0] == runs[1]
