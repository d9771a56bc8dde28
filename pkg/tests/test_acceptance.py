"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into an "acceptance criteria" section at the
end of the pytest run.
"""

import itertools
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from lbft import analysis
from lbft.core import ProtocolParams
from lbft.harness import bundled
from lbft.lottery import LotteryParams, sample_arrivals
from lbft.simnet import expected_counts, message_counts, run

from conftest import report, scenario

STRATEGIES = ["double_voter", "equivocate", "withhold", "selective_delay", "combined"]
RUNS_PER_STRATEGY = 1000
LAMBDA_DELTAS = [0.1, 0.5, 1.0, 2.0]
GSTS = [0.0, 5.0, math.inf]
SCHEDULES = ["uniform", "partition", "hold"]
GRID_BETA = [0.0, 0.1, 0.2]
GRID_LD = [0.02, 0.05, 0.1]


# -- criteria 1 and 4: safety suite with propagation checks ---------------


def safety_config(strategy: str, i: int):
    n, f, m = (4, 1, 1) if i % 2 == 0 else (7, 2, 3)
    ld = LAMBDA_DELTAS[(i // 2) % 4]
    gst = GSTS[(i // 8) % 3]
    schedule = SCHEDULES[(i // 24) % 3]
    if strategy in ("equivocate", "withhold", "combined"):
        beta = [0.1, 0.2, 0.28][i % 3]
    else:
        beta = [0.0, 0.1, 0.2][i % 3]
    pattern = {7: "leader", 9: "gossip"}.get(i % 10, "broadcast")
    horizon = 30.0 + (0.0 if math.isinf(gst) else gst)
    return scenario(
        name=f"{strategy}-{i}",
        horizon=horizon,
        protocol=dict(f=f, m=m, num_nodes=n),
        network=dict(delta=ld, gst=gst, pre_gst=schedule, pre_gst_max=4 * ld, pattern=pattern),
        lottery={"lambda": 1.0, "beta": beta},
        adversary={"strategy": strategy},
    )


def _safety_job(job):
    strategy, i = job
    cfg = safety_config(strategy, i)
    tr = run(cfg, seed=10_000 + i)
    safe = analysis.trace_safety(tr).ok
    l3 = l4 = None
    if cfg.network.pattern == "broadcast":
        l3 = len(analysis.check_certified_propagation(tr))
        l4 = len(analysis.check_height_propagation(tr))
    return strategy, safe, l3, l4, len(analysis.first_commit_times(tr))


@pytest.fixture(scope="module")
def safety_suite():
    jobs = [(s, i) for s in STRATEGIES for i in range(RUNS_PER_STRATEGY)]
    start = time.time()
    workers = os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safety_job, jobs, chunksize=25))
    else:
        results = [_safety_job(j) for j in jobs]
    return results, time.time() - start


def test_criterion_01_safety_suite(safety_suite):
    results, elapsed = safety_suite
    violations = {s: sum(1 for r in results if r[0] == s and not r[1]) for s in STRATEGIES}
    runs = {s: sum(1 for r in results if r[0] == s) for s in STRATEGIES}
    commits = sum(r[4] for r in results)
    ok = all(v == 0 for v in violations.values()) and all(n == RUNS_PER_STRATEGY for n in runs.values())
    ok = ok and elapsed < 600
    report(1, "safety suite", ok,
           f"runs={sum(runs.values())} violations={violations} commits={commits} time={elapsed:.0f}s")
    assert ok


def test_criterion_04_propagation(safety_suite):
    results, _ = safety_suite
    checked = [r for r in results if r[2] is not None]
    l3 = sum(r[2] for r in checked)
    l4 = sum(r[3] for r in checked)
    ok = l3 == 0 and l4 == 0 and len(checked) > 3000
    report(4, "propagation within delta / 2 delta", ok,
           f"broadcast runs={len(checked)} certified-propagation misses={l3} height misses={l4}")
    assert ok


# -- criterion 2: negative control ------------------------------------------


def test_criterion_02_negative_control():
    hits = 0
    for seed in range(100):
        cfg = scenario(
            name="negative-control",
            horizon=30.0,
            protocol=dict(f=2, m=3, num_nodes=7),
            network=dict(delta=0.1, gst=math.inf, pre_gst="partition"),
            adversary=dict(strategy="double_qc", corrupted=3, negative_control=True),
        )
        hits += not analysis.trace_safety(run(cfg, seed)).ok
    ok = hits >= 1
    report(2, "negative control detects double QCs", ok, f"violations in {hits}/100 runs")
    assert ok


# -- criterion 3: quorum intersection ---------------------------------------


def test_criterion_03_quorum_intersection():
    start = time.time()
    details = []
    ok = True
    for f in (1, 2, 3):
        p = ProtocolParams(m=f, f=f)
        quorums = [frozenset(q) for q in itertools.combinations(p.voters, p.quorum)]
        worst = min(len(a & b) for a in quorums for b in quorums)
        # every corrupted set of size f leaves an honest voter in every overlap
        overlaps = {a & b for a, b in itertools.combinations(quorums, 2)}
        honest_left = min(len(o - set(bad)) for o in overlaps for bad in itertools.combinations(p.voters, f))
        ok &= worst >= f + 1 and honest_left >= 1
        details.append(f"f={f}: pairs={len(quorums) ** 2} min overlap={worst} min honest={honest_left}")
    elapsed = time.time() - start
    ok &= elapsed < 30
    report(3, "quorum intersection", ok, "; ".join(details) + f" ({elapsed:.1f}s)")
    assert ok


# -- criterion 5: unique-block fraction -------------------------------------


def test_criterion_05_unique_fraction():
    start = time.time()
    rows, ok = [], True
    rng = np.random.default_rng(2024)
    for beta, ld in itertools.product(GRID_BETA, GRID_LD):
        lam = 1.0
        params = LotteryParams(lam, beta, 3, adversarial=1 if beta else 0)
        horizon = 1.05e5 / (1 - beta)
        times, _, adv = sample_arrivals(params, horizon, rng)
        honest = times[~adv]
        frac = analysis.unique_fraction(honest.tolist(), ld / lam)
        target = math.exp(-4 * (1 - beta) * ld)
        good = len(honest) >= 1e5 and abs(frac - target) <= 0.02
        ok &= good
        rows.append(f"b={beta} ld={ld}: {frac:.4f} vs {target:.4f} (n={len(honest)})")
    elapsed = time.time() - start
    ok &= elapsed < 300
    report(5, "unique fraction = eta^2 +-0.02", ok, "; ".join(rows))
    assert ok


# -- criterion 6: liveness ---------------------------------------------------


def _all_txs_committed(tr, deadline):
    for node in tr.honest:
        seen = {}
        for t, _, b in tr.commits[node]:
            for tx in tr.blocks[b].tx_ids:
                seen.setdefault(tx, t)
        if any(seen.get(tx, math.inf) > deadline for tx in tr.txs):
            return False
    return True


def test_criterion_06_liveness():
    beta, lam, delta, gst = 0.1, 1.0, 0.05, 20.0
    cond = analysis.liveness_condition(analysis.LivenessInputs(beta, lam, delta, 0.1))
    deadline = gst + 200 / lam
    strategies = ["withhold", "combined", "equivocate"]
    good, total_txs = 0, 0
    for seed in range(200):
        cfg = scenario(
            name="liveness",
            horizon=deadline,
            network=dict(delta=delta, gst=gst, pre_gst_max=2.0),
            lottery={"lambda": lam, "beta": beta},
            adversary={"strategy": strategies[seed % 3]},
            tx_load=dict(rate=0.5, start=gst, stop=gst + 100 / lam, targets="all"),
        )
        tr = run(cfg, seed)
        total_txs += len(tr.txs)
        good += _all_txs_committed(tr, deadline)
    async_commits = 0
    for seed in range(20):
        cfg = scenario(
            name="async",
            horizon=deadline,
            network=dict(delta=delta, gst=math.inf, pre_gst="hold"),
            lottery={"lambda": lam, "beta": beta},
            adversary={"strategy": "withhold"},
            tx_load=dict(rate=0.5, targets="all"),
        )
        async_commits += sum(len(log) for log in run(cfg, seed).commits.values())
    ok = cond.holds and good >= 198 and async_commits == 0
    report(6, "liveness after GST", ok,
           f"condition margin={cond.margin:.4f}; {good}/200 runs committed all {total_txs} txs by gst+200/lambda; "
           f"async commits={async_commits}")
    assert ok


# -- criterion 7: chain growth -----------------------------------------------


def test_criterion_07_chain_growth():
    rows, ok = [], True
    seeds, gst, span = 5, 10.0, 800.0
    for beta, ld in itertools.product(GRID_BETA, GRID_LD):
        lam = 1.0
        rates = []
        for seed in range(seeds):
            cfg = scenario(
                name="growth",
                horizon=gst + span,
                network=dict(delta=ld / lam, gst=gst, pre_gst_max=1.0),
                lottery={"lambda": lam, "beta": beta},
                adversary={"strategy": "withhold" if beta else "none"},
            )
            rates.append(analysis.chain_stats(run(cfg, seed)).committed_rate)
        mean = float(np.mean(rates))
        se = float(np.std(rates, ddof=1)) / math.sqrt(seeds)
        bound = analysis.unique_rate_lower_bound(analysis.LivenessInputs(beta, lam, ld / lam, 0.2))
        good = mean + 3 * se >= bound
        ok &= good
        rows.append(f"b={beta} ld={ld}: {mean:.3f}+-{se:.3f} >= {bound:.3f}")
    report(7, "committed rate >= (1-0.2) eta^2 (1-beta) lambda", ok, "; ".join(rows))
    assert ok


# -- criterion 8: hidden lead ------------------------------------------------


def test_criterion_08_hidden_lead():
    rows, ok = [], True
    runs, horizon, step = 30, 400.0, 0.5
    for beta, delta in [(0.025, 1.0), (0.05, 1.0)]:
        lam = 1.0
        mean = 2 * beta * lam * delta
        per_run = {k: [] for k in (1, 2, 3)}
        for seed in range(runs):
            cfg = scenario(
                name="hidden-lead",
                horizon=horizon,
                network=dict(delta=delta, gst=0.0),
                lottery={"lambda": lam, "beta": beta},
                adversary={"strategy": "withhold"},
            )
            tr = run(cfg, seed)
            leads = np.array(analysis.hidden_lead_samples(tr, np.arange(2 * delta, horizon, step)))
            for k in per_run:
                per_run[k].append(float((leads >= k).mean()))
        cells = []
        for k, fracs in per_run.items():
            emp = float(np.mean(fracs))
            sigma = float(np.std(fracs, ddof=1)) / math.sqrt(runs)
            tail = analysis.poisson_tail(mean, k)
            good = emp <= tail + 3 * sigma
            ok &= good
            cells.append(f"P(>={k})={emp:.4f}<={tail:.4f}+3*{sigma:.4f}")
        rows.append(f"2*lambda_a*delta={mean}: " + ", ".join(cells))
    report(8, "hidden lead dominated by Poisson tail", ok, "; ".join(rows))
    assert ok


# -- criterion 9: message complexity ----------------------------------------


SIZES = {4: (1, 1), 7: (2, 3), 13: (4, 6), 31: (10, 15), 61: (20, 30)}


def _sparse_run(pattern, n, horizon):
    f, m = SIZES[n]
    cfg = scenario(
        name=f"msgs-{pattern}-{n}",
        horizon=horizon,
        protocol=dict(f=f, m=m, num_nodes=n),
        network=dict(delta=0.001, gst=0.0, pattern=pattern),
        lottery={"lambda": 1.0},
    )
    return run(cfg, 1)


def test_criterion_09_message_complexity():
    rows, ok = [], True
    for pattern in ("broadcast", "leader"):
        for n in (4, 7, 13):
            counts = message_counts(_sparse_run(pattern, n, 40.0))
            expected = expected_counts(pattern, n, SIZES[n][0])
            totals = sorted({c["total"] for c in counts.values()})
            good = len(counts) >= 10 and totals == [expected]
            ok &= good
            rows.append(f"{pattern} n={n}: {totals} vs {expected} over {len(counts)} blocks")
    ns, per_payload = [7, 13, 31, 61], []
    for n in ns:
        tr = _sparse_run("gossip", n, 8.0)
        per_payload.append(sum(tr.per_payload.values()) / len(tr.per_payload))
    x = np.array([n * math.log2(n) for n in ns])
    y = np.array(per_payload)
    c = float(x @ y / (x @ x))
    r2 = 1 - float(((y - c * x) ** 2).sum()) / float(((y - y.mean()) ** 2).sum())
    ok &= r2 >= 0.95
    rows.append(f"gossip sends per payload {[round(v, 1) for v in per_payload]} ~ {c:.3f} n log2 n, R^2={r2:.4f}")
    report(9, "message complexity", ok, "; ".join(rows))
    assert ok


# -- criterion 10: Chernoff evaluators ---------------------------------------


def _unique_indicator_sums(lam_h, delta, n, trials, rng):
    gaps = rng.exponential(1 / lam_h, size=(trials, n + 1))
    wide = gaps >= 2 * delta
    y = wide[:, :-1] & wide[:, 1:]
    return y[:, 0::2].sum(axis=1), y[:, 1::2].sum(axis=1), y.sum(axis=1)


def test_criterion_10_chernoff():
    rng = np.random.default_rng(77)
    worst, ok = [], True
    for mu, d in itertools.product((10, 100, 1000), (0.1, 0.3, 0.5)):
        x = rng.poisson(mu, 1_000_000)
        up = float((x >= (1 + d) * mu).mean())
        lo = float((x <= (1 - d) * mu).mean())
        bu, bl = analysis.chernoff_poisson(mu, d, "upper"), analysis.chernoff_poisson(mu, d, "lower")
        ok &= up <= bu and lo <= bl
        worst.append(max(up / bu, lo / bl))
    dep_ratio = []
    n, trials = 200, 20_000
    for beta, ld in itertools.product(GRID_BETA, GRID_LD):
        lam_h = 1.0 - beta
        p = math.exp(-4 * lam_h * ld)
        odd, even, total = _unique_indicator_sums(lam_h, ld, n, trials, rng)
        mus = [p * math.ceil(n / 2), p * (n // 2)]
        for d in (0.1, 0.3, 0.5):
            emp = float((total <= (1 - d) * min(mus) * 2).mean())
            bound = analysis.chernoff_dependent(mus, d)
            ok &= emp <= bound
            dep_ratio.append(emp / bound)
    report(10, "Chernoff bounds hold empirically", ok,
           f"max empirical/bound Poisson={max(worst):.3f}, dependent sum={max(dep_ratio):.3f}")
    assert ok


# -- criterion 11: determinism ----------------------------------------------


def test_criterion_11_determinism(tmp_path):
    outputs = []
    for i, hashseed in enumerate(("1", "2")):
        out = tmp_path / f"run{i}"
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        proc = subprocess.run(
            [sys.executable, "-m", "lbft", "run", "--config", str(bundled("withhold.yaml")),
             "--seed", "42", "--out", str(out)],
            env=env, capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = outputs[0] == outputs[1] and len(outputs[0]) == 2
    size = sum(len(b) for b in outputs[0].values())
    report(11, "byte-identical trace and metrics", same, f"files={sorted(outputs[0])} bytes={size}")
    assert same
