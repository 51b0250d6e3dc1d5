"""Scenario configuration, network construction and full simulation runs."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .adversary import AttackConfig, choose_attackers, equip
from .announce import Board
from .data import DataConfig, build_clients
from .errors import ConfigError
from .lsh import make_basis
from .model import ModelParams, accuracy
from .protocol import ClientState, Network, ProtocolConfig, RoundMetrics, Transport
from .selection import SelectionConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SILO = "silo"


@dataclass(frozen=True)
class ScenarioConfig:
    data: DataConfig = field(default_factory=DataConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    attack: Optional[AttackConfig] = None
    alpha: float = 0.6
    top_k: Optional[int] = None
    lsh_bits: int = 64
    rounds: int = 60
    lr: float = 0.1
    local_steps: int = 5
    master_seed: int = 0
    output_dir: Optional[str] = None
    salted_commitments: bool = True
    lsh_verification: bool = True  # overridden by attack.lsh_verification_enabled
    hash_algorithm: str = "sha256"

    def validate(self) -> None:
        self.data.validate()
        self.selection.validate(self.data.num_clients)
        if self.attack is not None:
            self.attack.validate(self.data.num_clients)
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.lsh_bits < 1:
            raise ConfigError("lsh_bits must be >= 1")
        if self.lr < 0 or self.local_steps < 1:
            raise ConfigError("lr must be >= 0 and local_steps >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")

    @property
    def verification_enabled(self) -> bool:
        if self.attack is not None:
            return self.attack.lsh_verification_enabled
        return self.lsh_verification

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(selection=self.selection, alpha=self.alpha, lr=self.lr,
                              local_steps=self.local_steps, top_k=self.top_k, lsh_bits=self.lsh_bits,
                              salted_commitments=self.salted_commitments,
                              lsh_verification=self.verification_enabled,
                              hash_algorithm=self.hash_algorithm)

    def with_mode(self, mode: str) -> "ScenarioConfig":
        """Selection mode, or ``silo`` for purely local training (alpha = 1)."""
        if mode == SILO:
            return replace(self, alpha=1.0)
        return replace(self, selection=replace(self.selection, mode=mode))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ScenarioConfig":
        raw = dict(raw)
        sections = {"data": DataConfig, "selection": SelectionConfig, "attack": AttackConfig}
        kwargs: dict[str, Any] = {}
        for name, typ in sections.items():
            if name in raw:
                kwargs[name] = _build(typ, raw.pop(name), name)
        top = {f.name for f in dataclasses.fields(cls)} - set(sections)
        unknown = set(raw) - top
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs.update(raw)
        return cls(**kwargs)


def _build(typ, values, section):
    if not isinstance(values, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in dataclasses.fields(typ)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return typ(**values)


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ScenarioConfig.from_dict(raw)


def config_to_toml(config: ScenarioConfig) -> str:
    """Flat TOML echo of a config; :func:`load_config` reads it back."""
    d = config.to_dict()
    sections = {k: d.pop(k) for k in ("data", "selection", "attack") if k in d}

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return repr(v)

    lines = [f"{k} = {fmt(v)}" for k, v in d.items()]
    for name, vals in sections.items():
        lines.append(f"\n[{name}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in vals.items())
    return "\n".join(lines) + "\n"


# --- runs --------------------------------------------------------------------

@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: list[RoundMetrics]
    network: Network
    attackers: tuple[int, ...]

    @property
    def honest_ids(self) -> list[int]:
        return [i for i in sorted(self.network.clients) if i not in self.attackers]

    def accuracy_at(self, round: int, clients: Optional[Iterable[int]] = None) -> dict[int, float]:
        wanted = set(self.honest_ids if clients is None else clients)
        return {m.client_id: m.test_accuracy for m in self.metrics
                if m.round == round and m.client_id in wanted}

    def final_accuracies(self) -> dict[int, float]:
        return self.accuracy_at(self.network.round)

    def summary(self) -> dict[str, float]:
        accs = list(self.final_accuracies().values())
        return {"mean_final_accuracy": float(np.mean(accs)),
                "std_final_accuracy": float(np.std(accs)),
                "honest_clients": len(accs)}

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RoundMetrics.CSV_HEADER)
        for m in self.metrics:
            w.writerow(m.csv_fields())
        return buf.getvalue()

    def manifest(self) -> str:
        return (f"# wpfed {__version__}\n"
                f"# hash_algorithm = {self.config.hash_algorithm}\n"
                f"# attackers = {','.join(map(str, self.attackers))}\n"
                f"# data seed = master_seed = {self.config.master_seed}\n"
                + config_to_toml(self.config))


def build_network(config: ScenarioConfig, transport: Optional[Transport] = None):
    """Clients, LSH basis and board for ``config``; returns ``(network, attacker_ids)``."""
    config.validate()
    seed = config.master_seed
    data_cfg = replace(config.data, seed=seed)
    client_data = build_clients(data_cfg)
    n_cls, n_feat = data_cfg.num_classes, data_cfg.num_features
    clients = []
    for cid, cd in enumerate(client_data):
        rng = np.random.default_rng([seed, 2, cid])
        params = ModelParams.initial(n_cls, n_feat, rng)
        clients.append(ClientState(cid, params, cd, rng, alpha=config.alpha))
    attackers: tuple[int, ...] = ()
    if config.attack is not None:
        attackers = choose_attackers(config.attack, data_cfg.num_clients, config.selection.n_neighbors,
                                     np.random.default_rng([seed, 3]))
        clients = equip(clients, config.attack, attackers)
    basis = make_basis(n_cls * n_feat + n_cls, config.lsh_bits, network_seed=seed)
    net = Network(clients, config.protocol(), basis, Board(config.hash_algorithm), transport)
    return net, attackers


def run_scenario(config: ScenarioConfig, write: bool = True,
                 transport: Optional[Transport] = None) -> RunResult:
    """Run ``config.rounds`` rounds; write outputs when ``config.output_dir`` is set."""
    net, attackers = build_network(config, transport)
    metrics = net.run(config.rounds)
    result = RunResult(config, metrics, net, attackers)
    if write and config.output_dir:
        write_outputs(result, config.output_dir)
    return result


def write_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "board.log").write_text(result.network.board.dump())
    s = result.summary()
    write_table(out / "summary.csv", ["mean_final_accuracy", "std_final_accuracy", "honest_clients"],
                [[repr(s["mean_final_accuracy"]), repr(s["std_final_accuracy"]), str(s["honest_clients"])]])
    (out / "manifest.txt").write_text(result.manifest())


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def evaluate_final(result: RunResult) -> dict[int, float]:
    """Re-score every client's final parameters on its local test set."""
    return {cid: accuracy(c.params, c.data.local_test) for cid, c in result.network.clients.items()}


@dataclass(frozen=True)
class ModeRow:
    mode: str
    mean: float
    std: float
    per_seed: tuple[float, ...]


def compare_modes(config: ScenarioConfig, modes: Sequence[str], seeds: Sequence[int]) -> list[ModeRow]:
    """Mean and spread, across seeds, of the honest clients' mean final accuracy per mode."""
    rows = []
    for mode in modes:
        per_seed = []
        for seed in seeds:
            cfg = replace(config.with_mode(mode), master_seed=seed, output_dir=None)
            per_seed.append(run_scenario(cfg, write=False).summary()["mean_final_accuracy"])
        sd = statistics.stdev(per_seed) if len(per_seed) > 1 else 0.0
        rows.append(ModeRow(mode, statistics.fmean(per_seed), sd, tuple(per_seed)))
    return rows


def mode_table_rows(rows: Sequence[ModeRow]) -> list[list[str]]:
    return [[r.mode, repr(r.mean), repr(r.std), str(len(r.per_seed))] for r in rows]
