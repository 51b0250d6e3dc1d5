"""Paired attack experiments: each attacked run is compared with a no-attack run
on the same seed, so the trajectories agree exactly until the attack starts."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .adversary import AttackConfig
from .harness import RunResult, ScenarioConfig, run_scenario


def post_attack_accuracy(result: RunResult, start_round: int, clients: Iterable[int]) -> float:
    """Mean test accuracy of ``clients`` over rounds ``start_round..T``."""
    wanted = set(clients)
    accs = [m.test_accuracy for m in result.metrics if m.round >= start_round and m.client_id in wanted]
    if not accs:
        raise ValueError(f"no metrics at or after round {start_round}")
    return float(np.mean(accs))


def _seeded(config: ScenarioConfig, seed: int, **changes) -> ScenarioConfig:
    return replace(config, master_seed=seed, output_dir=None, **changes)


# --- LSH cheating ------------------------------------------------------------

@dataclass(frozen=True)
class LshCheatRow:
    seed: int
    attackers: tuple[int, ...]
    baseline_on: float
    attacked_on: float
    baseline_off: float
    attacked_off: float
    admitted_on: float   # share of post-attack rounds with an attacker in the target's valid set
    admitted_off: float

    @property
    def loss_on(self) -> float:
        return self.baseline_on - self.attacked_on

    @property
    def loss_off(self) -> float:
        return self.baseline_off - self.attacked_off

    @property
    def gap(self) -> float:
        return self.attacked_on - self.attacked_off


def _admitted_share(result: RunResult, target: int, start: int) -> float:
    bad = set(result.attackers)
    rows = [m for m in result.metrics if m.client_id == target and m.round >= start]
    hit = [bool((set(m.neighbor_ids) - set(m.excluded_ids)) & bad) for m in rows]
    return float(np.mean(hit)) if hit else 0.0


def lsh_cheat_experiment(config: ScenarioConfig, attack: AttackConfig,
                         seeds: Sequence[int]) -> list[LshCheatRow]:
    """Target accuracy with and without the attack, verification on and off."""
    if attack.kind != "lsh_cheat":
        raise ValueError("attack kind must be lsh_cheat")
    target, start = attack.target_id, attack.start_round
    rows = []
    for seed in seeds:
        vals = {}
        for flag in (True, False):
            base = run_scenario(_seeded(config, seed, attack=None, lsh_verification=flag), write=False)
            att = run_scenario(_seeded(config, seed, attack=replace(attack, lsh_verification_enabled=flag)),
                               write=False)
            vals[flag] = (post_attack_accuracy(base, start, [target]),
                          post_attack_accuracy(att, start, [target]),
                          _admitted_share(att, target, start), att.attackers)
        rows.append(LshCheatRow(seed, vals[True][3], vals[True][0], vals[True][1],
                                vals[False][0], vals[False][1], vals[True][2], vals[False][2]))
    return rows


LSH_CHEAT_HEADER = ("seed", "attackers", "baseline_on", "attacked_on", "baseline_off", "attacked_off",
                    "loss_on", "loss_off", "gap", "admitted_on", "admitted_off")


def lsh_cheat_table(rows: Sequence[LshCheatRow]) -> list[list[str]]:
    return [[str(r.seed), ";".join(map(str, r.attackers)), repr(r.baseline_on), repr(r.attacked_on),
             repr(r.baseline_off), repr(r.attacked_off), repr(r.loss_on), repr(r.loss_off), repr(r.gap),
             repr(r.admitted_on), repr(r.admitted_off)] for r in rows]


# --- poisoning ---------------------------------------------------------------

@dataclass(frozen=True)
class PoisonRow:
    mode: str
    fraction: float
    seed: int
    attackers: tuple[int, ...]
    baseline: float
    attacked: float

    @property
    def degradation(self) -> float:
        return self.baseline - self.attacked


def poison_experiment(config: ScenarioConfig, attack: AttackConfig, fractions: Sequence[float],
                      modes: Sequence[str], seeds: Sequence[int]) -> list[PoisonRow]:
    """Honest-client accuracy under poisoning vs the matching no-attack run.

    Both runs are scored on the same honest clients (the attacked run's).
    """
    if attack.kind != "poison":
        raise ValueError("attack kind must be poison")
    rows = []
    for mode in modes:
        cfg = config.with_mode(mode)
        for seed in seeds:
            base = run_scenario(_seeded(cfg, seed, attack=None), write=False)
            for frac in fractions:
                att = run_scenario(_seeded(cfg, seed, attack=replace(attack, malicious_fraction=frac)),
                                   write=False)
                honest = att.honest_ids
                rows.append(PoisonRow(mode, frac, seed, att.attackers,
                                      post_attack_accuracy(base, attack.start_round, honest),
                                      post_attack_accuracy(att, attack.start_round, honest)))
    return rows


def mean_degradation(rows: Sequence[PoisonRow], mode: str, fraction: float) -> float:
    vals = [r.degradation for r in rows if r.mode == mode and r.fraction == fraction]
    return statistics.fmean(vals)


POISON_HEADER = ("mode", "fraction", "seed", "attackers", "baseline", "attacked", "degradation")


def poison_table(rows: Sequence[PoisonRow]) -> list[list[str]]:
    return [[r.mode, repr(r.fraction), str(r.seed), ";".join(map(str, r.attackers)), repr(r.baseline),
             repr(r.attacked), repr(r.degradation)] for r in rows]


def sign_test_p(diffs: Sequence[float]) -> float:
    """One-sided exact sign test for positive median; zero differences are dropped."""
    from scipy.stats import binomtest

    pos = sum(d > 0 for d in diffs)
    n = sum(d != 0 for d in diffs)
    if n == 0:
        return 1.0
    return float(binomtest(pos, n, 0.5, alternative="greater").pvalue)
