"""Run configuration: one JSON document validated on load."""
import hashlib
import json
import logging
from typing import Optional

import numpy as np
from pydantic import (
    BaseModel, ConfigDict, Field, PositiveFloat, ValidationError,
    field_validator, model_validator
)

from parashoot import __version__
from parashoot.entire import ScatteringProblem, default_schedule
from parashoot.homotopy import Partition
from parashoot.potentials import ProblemConfig
from parashoot.types.errors import ConfigError, DomainError, InvalidPartitionError
from parashoot.variational import MinimizeSettings

MIN_SCHEDULE_RADII = 3


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ScatteringConfig(_Section):
    dir_minus: float
    dir_plus: float
    partition: tuple[int, ...]

    @model_validator(mode="after")
    def check_directions(self):
        gap = (self.dir_plus - self.dir_minus) % (2.0 * np.pi)
        if min(gap, 2.0 * np.pi - gap) <= 1e-12:
            raise ValueError("dir_minus and dir_plus point the same way")
        return self


class ContinuationConfig(_Section):
    schedule: Optional[tuple[PositiveFloat, ...]] = None
    tail_extent: PositiveFloat = 1e5

    @field_validator("schedule")
    @classmethod
    def enough_radii(cls, schedule):
        # Convergence compares at least two successive window deviations
        if schedule is not None and len(schedule) < MIN_SCHEDULE_RADII:
            raise ValueError(f"a schedule needs at least {MIN_SCHEDULE_RADII} radii, got {len(schedule)}")
        if schedule is not None and any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("schedule radii must increase")
        return schedule


class CollapseConfig(_Section):
    eps: tuple[PositiveFloat, ...] = (0.2, 0.1, 0.05)
    probe_count: int = Field(default=10, ge=2)

    @field_validator("eps")
    @classmethod
    def below_one(cls, eps):
        if any(e >= 1.0 for e in eps):
            raise ValueError("collapse factors must lie in (0, 1)")
        return eps


class ScanConfig(_Section):
    direction_count: int = Field(default=4, ge=2)
    radius: Optional[PositiveFloat] = None


class IntegrationConfig(_Section):
    tolerance: PositiveFloat = 1e-10


class RunConfig(_Section):
    problem: ProblemConfig
    scattering: Optional[ScatteringConfig] = None
    solver: MinimizeSettings = MinimizeSettings()
    continuation: ContinuationConfig = ContinuationConfig()
    collapse: CollapseConfig = CollapseConfig()
    scan: ScanConfig = ScanConfig()
    integration: IntegrationConfig = IntegrationConfig()
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    output_dir: str = "out"

    @model_validator(mode="after")
    def check_consistency(self):
        if self.scattering is not None:
            self._check_partition()
        try:
            self.solver.resolved_barrier_radius(self.problem)
        except DomainError as e:
            raise ValueError(str(e))
        return self

    def _check_partition(self):
        # Partition errors keep their own code rather than invalid-config
        Partition(frozenset(self.scattering.partition)).validate(self.problem.n_centres)
        if len(set(self.scattering.partition)) != len(self.scattering.partition):
            raise InvalidPartitionError(
                f"Partition {list(self.scattering.partition)} repeats an index",
                members=list(self.scattering.partition))

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, mode="r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}", path=path)
        return cls.parse(data)

    @classmethod
    def parse(cls, data: dict) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid config: {e}", errors=[err["msg"] for err in e.errors()])

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, output location excluded."""
        data = {key: value for key, value in self.canonical().items() if key != "output_dir"}
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def stamp(self) -> dict:
        """Provenance fields embedded in every artifact."""
        return {"config_hash": self.config_hash(), "version": __version__}

    def with_overrides(self, out: Optional[str] = None, seed: Optional[int] = None,
                       tol: Optional[float] = None) -> "RunConfig":
        data = self.canonical()
        if out is not None:
            data["output_dir"] = out
        if seed is not None:
            data["seed"] = seed
        if tol is not None:
            data["integration"]["tolerance"] = tol
        logging.debug(f"Config overrides: out={out}, seed={seed}, tol={tol}")
        return RunConfig.parse(data)

    def schedule(self) -> tuple[float, ...]:
        return self.continuation.schedule or default_schedule(self.problem)

    def scan_radius(self) -> float:
        return self.scan.radius or 4.0 * self.problem.ring_radius

    def scattering_problem(self) -> ScatteringProblem:
        if self.scattering is None:
            raise ConfigError("This command needs a scattering section")
        return ScatteringProblem.from_angles(
            self.scattering.dir_minus, self.scattering.dir_plus,
            Partition(frozenset(self.scattering.partition)), self.problem)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)
