"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line
(run ``pytest -s tests/test_acceptance.py`` or ``python tests/test_acceptance.py``
to see them)."""

from __future__ import annotations

import dataclasses
import itertools
import math
import random
import statistics
import sys
import time
import typing
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from oracles import angle, hamming_bitloop, scores_bruteforce, sort_and_take  # noqa: E402
from wpfed.adversary import AttackConfig  # noqa: E402
from wpfed.announce import Announcement, Reveal, commit, verify_reveal  # noqa: E402
from wpfed.cli import ATTACK_ROUNDS  # noqa: E402
from wpfed.data import ClientData  # noqa: E402
from wpfed.experiments import (lsh_cheat_experiment, mean_degradation, poison_experiment,  # noqa: E402
                               sign_test_p)
from wpfed.harness import ScenarioConfig, compare_modes, load_config, run_scenario  # noqa: E402
from wpfed.lsh import LshCode, encode, encode_vector, hamming, make_basis  # noqa: E402
from wpfed.model import Dataset, ModelParams, combined_loss_and_grad, softmax  # noqa: E402
from wpfed.protocol import (WIRE_MESSAGE_TYPES, ClientState, PeerResponse, ReferenceQuery,  # noqa: E402
                            Transport)
from wpfed.ranking import RankingList, ranking_scores  # noqa: E402
from wpfed.selection import WeightRow, select_neighbors  # noqa: E402

SEEDS = range(5)


def report(number: int, name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}", flush=True)
    assert ok, detail


# 1 -----------------------------------------------------------------------------

def test_c1_oracle_equivalence():
    t0 = time.perf_counter()
    rnd = random.Random(1)
    score_ok = 0
    for _ in range(200):
        m = rnd.randint(2, 10)
        rankings = []
        for owner in range(m):
            others = [p for p in range(m) if p != owner]
            rankings.append(RankingList(owner, 1, tuple(rnd.sample(others, rnd.randint(0, len(others))))))
        k = rnd.randint(1, m)
        score_ok += ranking_scores(rankings, k, range(m)).scores == scores_bruteforce(rankings, k, range(m))

    rng = np.random.default_rng(2)
    ham_ok = 0
    for _ in range(1000):
        a = LshCode.from_bits(rng.integers(0, 2, 64))
        b = LshCode.from_bits(rng.integers(0, 2, 64))
        ham_ok += hamming(a, b) == hamming_bitloop(a.bits, b.bits)

    sel_ok = 0
    for _ in range(500):
        ids = rng.choice(1000, size=int(rng.integers(2, 15)), replace=False)
        vals = rng.choice([0.2, 0.4], size=ids.size) if rng.random() < 0.3 else rng.random(ids.size)
        row = WeightRow(-1, {int(i): float(v) for i, v in zip(ids, vals)})
        n = int(rng.integers(1, ids.size + 1))
        sel_ok += select_neighbors(row, n) == sort_and_take(row.weights, n)
    elapsed = time.perf_counter() - t0
    ok = score_ok == 200 and ham_ok == 1000 and sel_ok == 500 and elapsed < 10
    report(1, "oracle equivalence", ok,
           f"scores {score_ok}/200, hamming {ham_ok}/1000, selection {sel_ok}/500, {elapsed:.2f}s")


# 2 -----------------------------------------------------------------------------

def test_c2_gradient_check():
    rng = np.random.default_rng(3)
    h = 1e-5
    worst = 0.0
    for _ in range(50):
        c, f = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        params = ModelParams(rng.normal(size=(c, f)), rng.normal(size=c))
        n_loc = int(rng.integers(3, 12))
        local = Dataset(rng.normal(size=(n_loc, f)), rng.integers(0, c, n_loc))
        n_ref = int(rng.integers(2, 8))
        ref_x = rng.normal(size=(n_ref, f))
        target = softmax(rng.normal(size=(n_ref, c)))
        alpha = float(rng.uniform())
        _, (gw, gb) = combined_loss_and_grad(params, local, ref_x, target, alpha)
        analytic = np.concatenate([gw.ravel(), gb])
        flat = params.flatten()
        numeric = np.empty_like(flat)
        for k in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[k] += h
            dn[k] -= h
            lu, _ = combined_loss_and_grad(ModelParams.from_flat(up, c, f), local, ref_x, target, alpha)
            ld, _ = combined_loss_and_grad(ModelParams.from_flat(dn, c, f), local, ref_x, target, alpha)
            numeric[k] = (lu - ld) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        worst = max(worst, float(rel.max()))
    report(2, "gradient check", worst < 1e-4, f"max relative error {worst:.2e} over 50 instances")


# 3 -----------------------------------------------------------------------------

def test_c3_commit_and_reveal():
    rnd = random.Random(4)
    salt_rng = np.random.default_rng(4)
    honest = tampered_fail = 0
    for i in range(1000):
        owner = 1000
        peers = tuple(rnd.sample(range(50), rnd.randint(1, 8)))
        salt = salt_rng.bytes(16)
        r = RankingList(owner, i + 1, peers)
        ann = Announcement(owner, i + 1, LshCode(0, 64), commit(r, salt))
        honest += verify_reveal(ann, Reveal(owner, i + 1, r, salt))
        t = list(peers)
        j = rnd.randrange(len(t))
        t[j] = rnd.choice([p for p in range(60) if p not in t])
        tampered_fail += not verify_reveal(ann, Reveal(owner, i + 1, RankingList(owner, i + 1, tuple(t)), salt))

    r = RankingList(0, 7, (3, 1, 4, 2))
    perms = list(itertools.permutations(r.ranked_peers))
    unsalted = commit(r, b"")
    recovered = [p for p in perms if commit(RankingList(0, 7, p), b"") == unsalted]
    salted = commit(r, salt_rng.bytes(16))
    recovered_salted = [p for p in perms if commit(RankingList(0, 7, p), b"") == salted]
    ok = honest == 1000 and tampered_fail == 1000 and recovered == [r.ranked_peers] and not recovered_salted
    report(3, "commit-and-reveal", ok,
           f"honest {honest}/1000 verify, tampered {tampered_fail}/1000 rejected, "
           f"unsalted brute force recovers {len(recovered)} of 24, salted recovers {len(recovered_salted)}")


# 4 -----------------------------------------------------------------------------

def test_c4_lsh_locality():
    rng = np.random.default_rng(5)
    dim = 40
    agree, expect = [], []
    for trial in range(200):
        basis = make_basis(dim, 64, network_seed=10_000 + trial)
        u = rng.normal(size=dim)
        phi = rng.uniform(0, math.pi)
        w = rng.normal(size=dim)
        w -= (w @ u) / (u @ u) * u
        v = math.cos(phi) * u / np.linalg.norm(u) + math.sin(phi) * w / np.linalg.norm(w)
        agree.append(1 - hamming(encode_vector(u, basis), encode_vector(v, basis)) / 64)
        expect.append(1 - angle(u, v) / math.pi)
    agree, expect = np.array(agree), np.array(expect)
    pooled = abs(agree.mean() - expect.mean())
    # calibration within angle bins as well as pooled
    bins = np.digitize(expect, [0.25, 0.5, 0.75])
    binned = max(abs(agree[bins == b].mean() - expect[bins == b].mean()) for b in range(4))

    basis = make_basis(105, 64, network_seed=1)
    scale_ok = negate_ok = True
    for _ in range(100):
        params = ModelParams(rng.normal(size=(5, 20)), rng.normal(size=5))
        c = float(np.exp(rng.uniform(-30, 30)))
        scale_ok &= encode(ModelParams(c * params.weights, c * params.bias), basis) == encode(params, basis)
        if np.all(basis.hyperplanes @ params.flatten() != 0):
            neg = ModelParams(-params.weights, -params.bias)
            negate_ok &= hamming(encode(params, basis), encode(neg, basis)) == 64
    ok = pooled < 0.05 and binned < 0.05 and scale_ok and negate_ok
    report(4, "LSH locality", ok,
           f"pooled deviation {pooled:.4f}, worst bin {binned:.4f}, scale invariance {scale_ok}, "
           f"negation flips all bits {negate_ok}")


# 5 -----------------------------------------------------------------------------

def test_c5_ablation_ordering():
    t0 = time.perf_counter()
    rows = {r.mode: r for r in compare_modes(ScenarioConfig(), ["full", "no_lsh", "no_rank", "random"], SEEDS)}
    elapsed = time.perf_counter() - t0
    m = {k: v.mean for k, v in rows.items()}
    diffs = [a - b for a, b in zip(rows["full"].per_seed, rows["random"].per_seed)]
    p = sign_test_p(diffs)
    ordering = (m["full"] >= m["no_lsh"] and m["full"] >= m["no_rank"]
                and m["no_lsh"] >= m["random"] and m["no_rank"] >= m["random"])
    ok = ordering and statistics.fmean(diffs) > 0 and p < 0.05 and elapsed < 300
    detail = ", ".join(f"{k} {v:.4f}" for k, v in m.items())
    report(5, "ablation ordering", ok,
           f"{detail}; full-random wins {sum(d > 0 for d in diffs)}/{len(diffs)}, sign test p={p:.3f}, "
           f"{elapsed:.0f}s")


# 6 -----------------------------------------------------------------------------

def test_c6_lsh_cheating_resilience():
    attack = AttackConfig(kind="lsh_cheat", start_round=50, malicious_fraction=0.5, target_id=0)
    rows = lsh_cheat_experiment(ScenarioConfig(rounds=ATTACK_ROUNDS), attack, SEEDS)
    loss_on = statistics.fmean(r.loss_on for r in rows)
    loss_off = statistics.fmean(r.loss_off for r in rows)
    gaps = sum(r.gap > 0 for r in rows)
    ok = loss_on < 0.02 and loss_off > loss_on and gaps >= 4
    report(6, "LSH-cheating resilience", ok,
           f"target loss with verification {100 * loss_on:+.2f} pts, without {100 * loss_off:+.2f} pts, "
           f"ON-OFF gap > 0 in {gaps}/5 seeds")


# 7 -----------------------------------------------------------------------------

def test_c7_poison_resilience():
    rows = poison_experiment(ScenarioConfig(rounds=ATTACK_ROUNDS), AttackConfig(kind="poison", start_round=50),
                             (0.2, 0.4), ("full", "random"), SEEDS)
    parts, ok = [], True
    for frac in (0.2, 0.4):
        full = mean_degradation(rows, "full", frac)
        rand = mean_degradation(rows, "random", frac)
        ok &= abs(full) <= 0.02 and rand > full
        parts.append(f"{int(frac * 100)}%: full {100 * full:+.2f} pts, random {100 * rand:+.2f} pts")
    report(7, "poison resilience", ok, "; ".join(parts))


# 8 -----------------------------------------------------------------------------

def test_c8_determinism(tmp_path):
    cfg = ScenarioConfig(rounds=15, master_seed=123456789,
                         attack=AttackConfig(kind="lsh_cheat", start_round=5, malicious_fraction=0.5),
                         output_dir=str(tmp_path / "a"))
    run_scenario(cfg)
    replay = replace(load_config(tmp_path / "a" / "manifest.txt"), output_dir=str(tmp_path / "b"))
    run_scenario(replay)
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
               for n in ("metrics.csv", "board.log"))
    report(8, "determinism", same, "metrics.csv and board.log byte-identical on replay from manifest")


# 9 -----------------------------------------------------------------------------

def _reachable(tp) -> set:
    out = set()
    origin = typing.get_origin(tp)
    if origin is None:
        out.add(tp)
        if dataclasses.is_dataclass(tp):
            hints = typing.get_type_hints(tp)
            for f in dataclasses.fields(tp):
                out |= _reachable(hints[f.name])
    else:
        out.add(origin)
        for arg in typing.get_args(tp):
            out |= _reachable(arg)
    return out


def test_c9_privacy_audit():
    private = (ModelParams, Dataset, ClientData, ClientState)
    leaks = [(m.__name__, p.__name__) for m in WIRE_MESSAGE_TYPES for p in private if p in _reachable(m)]
    fields = {m.__name__: sorted(f.name for f in dataclasses.fields(m)) for m in WIRE_MESSAGE_TYPES}

    transport = Transport(record=True)
    result = run_scenario(ScenarioConfig(rounds=4, master_seed=8), write=False, transport=transport)
    clients = result.network.clients
    traffic_ok = {type(m) for m in transport.messages} <= set(WIRE_MESSAGE_TYPES)
    for msg in transport.messages:
        if isinstance(msg, ReferenceQuery):
            traffic_ok &= np.array_equal(msg.reference_features, clients[msg.requester_id].data.reference.features)
        elif isinstance(msg, PeerResponse):
            traffic_ok &= bool(np.allclose(msg.outputs.sum(axis=1), 1.0))
    ok = not leaks and traffic_ok and len(WIRE_MESSAGE_TYPES) == 4
    report(9, "privacy audit", ok, f"wire types {fields}; private types reachable: {leaks or 'none'}; "
                                   f"recorded traffic clean {traffic_ok}")


if __name__ == "__main__":
    import tempfile

    failures = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_c")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
