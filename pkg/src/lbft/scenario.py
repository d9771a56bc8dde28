"""Scenario configuration schema (version 1).

A scenario file is YAML or JSON with these sections; unknown keys are
rejected::

    schema_version: 1
    name: smoke
    seed: 7
    horizon: 200.0          # simulated time units
    protocol:   {f: 1, m: 1, num_nodes: 4}
    network:    {delta: 0.05, gst: 0.0, pre_gst: uniform, pre_gst_max: 0.5,
                 pattern: broadcast, fanout: null}
    lottery:    {lambda: 1.0, beta: 0.0}
    adversary:  {strategy: none, corrupted: null, negative_control: false, burst: 2}
    tx_load:    {rate: 0.0, start: 0.0, stop: null, targets: one}

``gst`` accepts ``.inf`` / ``"inf"`` for a network that never stabilises.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import ProtocolParams
from .lottery import LotteryParams

STRATEGIES = (
    "none",
    "double_voter",
    "equivocate",
    "withhold",
    "selective_delay",
    "combined",
    "double_qc",
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class ProtocolSection(_Section):
    f: int = Field(ge=0)
    m: int = Field(ge=0)
    num_nodes: Optional[int] = None

    def params(self) -> ProtocolParams:
        return ProtocolParams(m=self.m, f=self.f, num_nodes=self.num_nodes)


class NetworkSection(_Section):
    delta: float = Field(gt=0)
    gst: float = Field(default=0.0, ge=0)
    pre_gst: Literal["uniform", "partition", "hold"] = "uniform"
    pre_gst_max: Optional[float] = Field(default=None, gt=0)
    pattern: Literal["broadcast", "gossip", "leader"] = "broadcast"
    fanout: Optional[int] = Field(default=None, ge=1)
    leader_fallback: float = Field(default=3.0, gt=0)


class LotterySection(_Section):
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    beta: float = Field(default=0.0, ge=0, lt=0.5)


class AdversarySection(_Section):
    strategy: Literal[STRATEGIES] = "none"
    corrupted: Optional[int] = Field(default=None, ge=0)
    negative_control: bool = False
    burst: int = Field(default=2, ge=1)


class TxLoadSection(_Section):
    rate: float = Field(default=0.0, ge=0)
    start: float = Field(default=0.0, ge=0)
    stop: Optional[float] = None
    targets: Literal["one", "all"] = "one"


class ScenarioConfig(_Section):
    schema_version: Literal[1] = 1
    name: str = "scenario"
    seed: int = 0
    horizon: float = Field(gt=0)
    record_events: bool = True
    protocol: ProtocolSection
    network: NetworkSection
    lottery: LotterySection = LotterySection()
    adversary: AdversarySection = AdversarySection()
    tx_load: TxLoadSection = TxLoadSection()

    @model_validator(mode="after")
    def _check_populations(self):
        p = self.protocol.params()
        k = self.corrupted_count
        if k > p.num_nodes:
            raise ValueError(f"adversary.corrupted={k} exceeds num_nodes={p.num_nodes}")
        byz_p = sum(1 for i in range(k) if p.is_proposer(i))
        byz_v = sum(1 for i in range(k) if p.is_voter(i))
        need = math.ceil(self.lottery.beta * p.num_proposers - 1e-12)
        if byz_p < need:
            raise ValueError(
                f"adversary.corrupted={k} covers {byz_p} proposers but lottery.beta="
                f"{self.lottery.beta} needs {need}"
            )
        self.lottery_params()
        if not self.adversary.negative_control and (byz_p > p.m or byz_v > p.f):
            raise ValueError(
                f"adversary.corrupted={k} gives {byz_p} Byzantine proposers (max m={p.m}) and "
                f"{byz_v} Byzantine voters (max f={p.f}); set negative_control to allow this"
            )
        if self.adversary.strategy != "none" and k == 0:
            raise ValueError(f"adversary.strategy={self.adversary.strategy} needs corrupted > 0")
        return self

    def protocol_params(self) -> ProtocolParams:
        return self.protocol.params()

    def lottery_params(self) -> LotteryParams:
        p = self.protocol.params()
        byz_p = sum(1 for i in range(self.corrupted_count) if p.is_proposer(i))
        return LotteryParams(self.lottery.lam, self.lottery.beta, p.num_proposers, adversarial=byz_p)

    @property
    def corrupted_count(self) -> int:
        if self.adversary.corrupted is not None:
            return self.adversary.corrupted
        p = self.protocol.params()
        k = math.ceil(self.lottery.beta * p.num_proposers - 1e-12)
        if self.adversary.strategy == "none":
            return k
        if self.adversary.strategy == "double_qc":
            return max(k, p.f + 1)
        return max(k, min(p.f, p.m) if p.m else p.f, 1)

    @property
    def corrupted(self) -> frozenset[int]:
        return frozenset(range(self.corrupted_count))

    def with_updates(self, updates: dict) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"network.delta": 0.1}``."""
        data = self.model_dump(by_alias=True)
        for path, value in updates.items():
            node = data
            keys = path.split(".")
            for key in keys[:-1]:
                node = node[key]
            node[keys[-1]] = value
        return ScenarioConfig.model_validate(data)

    def to_json(self) -> str:
        data = self.model_dump(by_alias=True)
        if math.isinf(data["network"]["gst"]):
            data["network"]["gst"] = "inf"
        return json.dumps(data, sort_keys=True)


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return ScenarioConfig.model_validate(data)
