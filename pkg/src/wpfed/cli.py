"""Command-line entry point.

    wpfed run           one scenario, writes metrics.csv, board.log, summary.csv, manifest.txt
    wpfed ablate        selection-mode comparison across seeds
    wpfed attack-lsh    LSH-cheating experiment (verification on vs off)
    wpfed attack-poison poisoning experiment (full vs random selection)
    wpfed verify-dump   re-check every commitment/reveal pair in a board dump
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .adversary import AttackConfig
from .announce import verify_dump
from .errors import WPFedError
from .experiments import (LSH_CHEAT_HEADER, POISON_HEADER, lsh_cheat_experiment, lsh_cheat_table,
                          mean_degradation, poison_experiment, poison_table)
from .harness import (SILO, ScenarioConfig, compare_modes, load_config, mode_table_rows, run_scenario,
                      write_table)
from .selection import MODES

# Attack experiments need a long enough window after the default start round (50).
ATTACK_ROUNDS = 120


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser, mode: bool = True) -> None:
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--seed", type=int, help="master seed (overrides the file)")
    p.add_argument("--rounds", type=int, help="number of rounds (overrides the file)")
    if mode:
        p.add_argument("--mode", choices=MODES + (SILO,), help="selection mode (overrides the file)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpfed", description="Decentralised personalised federation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="run one scenario"))

    p = sub.add_parser("ablate", help="compare selection modes across seeds")
    _common(p, mode=False)
    p.add_argument("--modes", type=_strs, default=list(MODES) + [SILO])
    p.add_argument("--seeds", type=_ints, default=list(range(5)))

    p = sub.add_parser("attack-lsh", help="LSH-cheating experiment")
    _common(p)
    p.add_argument("--seeds", type=_ints, default=list(range(5)))
    p.add_argument("--fraction", type=float, help="share of the target's neighbour slots held by attackers")
    p.add_argument("--target", type=int, help="target client id")
    p.add_argument("--start", type=int, help="attack start round")

    p = sub.add_parser("attack-poison", help="poisoning experiment")
    _common(p, mode=False)
    p.add_argument("--seeds", type=_ints, default=list(range(5)))
    p.add_argument("--fractions", type=_floats, default=[0.2, 0.4, 0.6])
    p.add_argument("--modes", type=_strs, default=["full", "random"])
    p.add_argument("--start", type=int, help="attack start round")

    p = sub.add_parser("verify-dump", help="re-check a board dump")
    p.add_argument("path")
    p.add_argument("--hash", default=None, help="hash algorithm (default: read from a sibling manifest.txt)")
    return parser


def scenario_from_args(args: argparse.Namespace, default_rounds: Optional[int] = None) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.rounds is not None:
        cfg = replace(cfg, rounds=args.rounds)
    elif default_rounds is not None and not args.config:
        cfg = replace(cfg, rounds=default_rounds)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(args.mode)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    cfg.validate()
    return cfg


def _out_dir(cfg: ScenarioConfig) -> Path:
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = scenario_from_args(args)
    result = run_scenario(cfg)
    s = result.summary()
    print(f"mean final accuracy {s['mean_final_accuracy']:.4f} +- {s['std_final_accuracy']:.4f} "
          f"over {s['honest_clients']} honest clients")
    if cfg.output_dir:
        print(f"outputs written to {cfg.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = scenario_from_args(args)
    rows = compare_modes(cfg, args.modes, args.seeds)
    for r in rows:
        print(f"{r.mode:8s} {r.mean:.4f} +- {r.std:.4f}")
    write_table(_out_dir(cfg) / "ablation.csv", ["mode", "mean", "std", "seeds"], mode_table_rows(rows))
    return 0


def _attack(cfg: ScenarioConfig, kind: str, **overrides) -> AttackConfig:
    base = cfg.attack if cfg.attack is not None and cfg.attack.kind == kind else AttackConfig(kind=kind)
    changes = {k: v for k, v in overrides.items() if v is not None}
    attack = replace(base, **changes)
    attack.validate(cfg.data.num_clients)
    return attack


def cmd_attack_lsh(args) -> int:
    cfg = scenario_from_args(args, ATTACK_ROUNDS)
    fraction = args.fraction
    if fraction is None and (cfg.attack is None or cfg.attack.kind != "lsh_cheat"):
        fraction = 0.5  # attackers hold half of the target's neighbour slots
    attack = _attack(cfg, "lsh_cheat", malicious_fraction=fraction, target_id=args.target,
                     start_round=args.start)
    rows = lsh_cheat_experiment(replace(cfg, attack=None), attack, args.seeds)
    for r in rows:
        print(f"seed {r.seed}: loss on {r.loss_on:+.4f}  loss off {r.loss_off:+.4f}  gap {r.gap:+.4f}")
    write_table(_out_dir(cfg) / "lsh_cheat.csv", LSH_CHEAT_HEADER, lsh_cheat_table(rows))
    return 0


def cmd_attack_poison(args) -> int:
    cfg = scenario_from_args(args, ATTACK_ROUNDS)
    attack = _attack(cfg, "poison", start_round=args.start)
    rows = poison_experiment(replace(cfg, attack=None), attack, args.fractions, args.modes, args.seeds)
    for mode in args.modes:
        for f in args.fractions:
            print(f"{mode:8s} fraction {f:.2f}: mean degradation {mean_degradation(rows, mode, f):+.4f}")
    write_table(_out_dir(cfg) / "poison.csv", POISON_HEADER, poison_table(rows))
    return 0


def _manifest_hash(dump: Path) -> str:
    manifest = dump.with_name("manifest.txt")
    if manifest.exists():
        for line in manifest.read_text().splitlines():
            if line.startswith("# hash_algorithm = "):
                return line.split("=", 1)[1].strip()
    return "sha256"


def cmd_verify_dump(args) -> int:
    path = Path(args.path)
    algorithm = args.hash or _manifest_hash(path)
    check = verify_dump(path.read_text().splitlines(), algorithm)
    print(f"verified {check.verified}, failed {len(check.failed)}, unrevealed {len(check.unrevealed)}, "
          f"orphan reveals {len(check.orphan_reveals)}")
    for client, round in check.failed:
        print(f"FAILED client {client} round {round}")
    return 0 if check.ok else 1


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "attack-lsh": cmd_attack_lsh,
            "attack-poison": cmd_attack_poison, "verify-dump": cmd_verify_dump}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (WPFedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
