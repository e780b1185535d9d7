"""Algorithm parameters for both stages, the agent schedule, and their JSON form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DomainError


@dataclass
class Schedule:
    """Agent activation policy.

    In ``asynchronous`` mode each TP sits out a round with probability ``p``
    (drawn from a generator seeded with ``seed``) but never more than
    ``staleness`` rounds in a row.
    """

    mode: str = "synchronous"
    p: float = 0.0
    seed: int = 0
    staleness: int = 3

    def check(self) -> None:
        if self.mode not in ("synchronous", "asynchronous"):
            raise DomainError(f"unknown schedule mode {self.mode!r}", "schedule.mode")
        if not 0.0 <= self.p < 1.0:
            raise DomainError(f"skip probability must lie in [0, 1), got {self.p}", "schedule.p")
        if self.staleness < 0:
            raise DomainError("staleness bound must be >= 0", "schedule.staleness")


@dataclass
class Stage1Config:
    eps: float = 1e-3
    consensus_tol_flow: float = 1e-4
    consensus_tol_angle: float = 1e-6
    rel_gap: float = 1e-6
    alpha0: float = 1.0
    nu0: float = 10.0
    beta: float | None = None
    max_iter: int = 1000
    flow_mode: str = "signed"
    step_rule: str = "polyak"
    polyak_rho: float = 1.0
    polyak_patience: int = 10
    xi_weight: float = 0.01
    stable_rounds: int = 50

    def check(self) -> None:
        for name in ("eps", "consensus_tol_flow", "consensus_tol_angle", "alpha0", "nu0"):
            if not getattr(self, name) > 0:
                raise DomainError(f"must be > 0, got {getattr(self, name)}", f"stage1.{name}")
        if self.rel_gap < 0:
            raise DomainError("must be >= 0", "stage1.rel_gap")
        if self.beta is not None and not self.beta > 0:
            raise DomainError("must be > 0", "stage1.beta")
        if self.max_iter < 1:
            raise DomainError("must be >= 1", "stage1.max_iter")
        if self.flow_mode not in ("signed", "magnitude"):
            raise DomainError(f"unknown flow mode {self.flow_mode!r}", "stage1.flow_mode")
        if self.step_rule not in ("diminishing", "polyak"):
            raise DomainError(f"unknown step rule {self.step_rule!r}", "stage1.step_rule")
        if not 0.0 < self.polyak_rho < 2.0:
            raise DomainError("must lie in (0, 2)", "stage1.polyak_rho")
        if self.polyak_patience < 1:
            raise DomainError("must be >= 1", "stage1.polyak_patience")
        if self.xi_weight < 0:
            raise DomainError("must be >= 0", "stage1.xi_weight")
        if self.stable_rounds < 0:
            raise DomainError("must be >= 0 (0 disables)", "stage1.stable_rounds")


@dataclass
class Stage2Config:
    eta: float = 1.0
    gamma: float = 2.0
    delta: float = 1.0
    eps_app: float = 1e-4
    max_iter: int = 5000

    def check(self) -> None:
        for name in ("gamma", "delta", "eps_app"):
            if not getattr(self, name) > 0:
                raise DomainError(f"must be > 0, got {getattr(self, name)}", f"stage2.{name}")
        if self.eta < 0:
            raise DomainError("must be >= 0", "stage2.eta")
        if self.max_iter < 1:
            raise DomainError("must be >= 1", "stage2.max_iter")


@dataclass
class RunConfig:
    case: str | None = None
    command: str | None = None
    output_dir: str = "."
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    schedule: Schedule = field(default_factory=Schedule)

    def check(self) -> None:
        self.stage1.check()
        self.stage2.check()
        self.schedule.check()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {"case", "command", "output_dir", "stage1", "stage2", "schedule"}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown config keys {sorted(unknown)}", "config")
        cfg = cls(case=data.get("case"), command=data.get("command"), output_dir=data.get("output_dir", "."))
        for name, typ in (("stage1", Stage1Config), ("stage2", Stage2Config), ("schedule", Schedule)):
            sub = data.get(name, {})
            fields = {f.name for f in dataclasses.fields(typ)}
            bad = set(sub) - fields
            if bad:
                raise DomainError(f"unknown keys {sorted(bad)}", f"config.{name}")
            setattr(cfg, name, typ(**sub))
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read config file: {exc}", str(path)) from exc
        return cls.from_dict(data)
