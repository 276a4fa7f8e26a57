"""
The single self-describing config file behind every subcommand.

Loading follows the (validated, error) convention: ``load_config`` never
raises for bad input, ``require_config`` does.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .kernels import KernelSpec
from .mixture_model import MixtureSpec
from .reporting import canonical_hash

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.json"
OUTPUT_DIR = os.environ.get("BOLTZMIX_OUTPUT_DIR", "output")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpeciesModel(_Strict):
    name: Optional[str] = None
    mass: float = Field(..., gt=0.0)
    kind: Literal["monatomic", "polyatomic"]
    alpha: Optional[float] = Field(None, gt=-1.0)


class AngularModel(_Strict):
    type: Literal["isotropic", "truncated_power", "power_forward"] = "isotropic"
    params: Dict[str, Any] = Field(default_factory=dict)


class PartitionModel(_Strict):
    type: Literal["unit", "constant", "model23"] = "unit"
    lb: float = Field(1.0, ge=0.0)
    ub: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.lb > self.ub:
            raise ValueError(f"partition lower envelope {self.lb} exceeds upper envelope {self.ub}")
        return self


class KernelModel(_Strict):
    pair: Optional[Tuple[int, int]] = None
    form: Literal["product", "model23"] = "product"
    gamma: Optional[float] = Field(None, ge=0.0, le=2.0)
    angular: AngularModel = Field(default_factory=AngularModel)
    partition: PartitionModel = Field(default_factory=PartitionModel)


class SimulationModel(_Strict):
    n_particles: List[int] = Field(default_factory=lambda: [2000, 2000, 2000])
    dt: float = Field(0.01, gt=0.0)
    t_end: float = Field(1.0, ge=0.0)
    output_times: List[float] = Field(default_factory=list)
    seed: int = Field(0, ge=0)
    orders: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0])
    initial: Literal["maxwellian", "student_t"] = "maxwellian"
    temperature: float = Field(1.0, gt=0.0)
    student_nu: float = Field(13.0, gt=2.0)
    C0: Optional[List[float]] = None
    majorant_refresh: int = Field(1, ge=1)
    disabled_pairs: List[Tuple[int, int]] = Field(default_factory=list)

    @field_validator("n_particles")
    @classmethod
    def _positive_counts(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("every species needs at least one particle")
        return v

    @field_validator("orders")
    @classmethod
    def _nonnegative_orders(cls, v):
        if any(k < 0.0 for k in v):
            raise ValueError("moment orders must be nonnegative")
        return v


class VerificationModel(_Strict):
    n_samples: int = Field(20000, ge=1)
    mc_samples: int = Field(200000, ge=100)
    n_state_pairs: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)


class AveragingModel(_Strict):
    n_states: int = Field(64, ge=1)
    kmax: int = Field(1024, ge=2, le=1024)
    tol: float = Field(1e-9, gt=0.0)
    n_param: int = Field(12, ge=2)


class MomentsModel(_Strict):
    k: Optional[float] = Field(None, gt=2.0)
    t_min: float = Field(1e-2, gt=0.0)
    t_max: float = Field(100.0, gt=0.0)
    n_times: int = Field(64, ge=2)
    conservative: bool = False


class OmegaModel(_Strict):
    C_star: Optional[float] = Field(None, gt=0.0)


class UnitsModel(_Strict):
    mass: str = "1"
    energy: str = "1"


class BoltzmixConfig(_Strict):
    species: List[SpeciesModel] = Field(..., min_length=1)
    dimension: int = Field(3, ge=2)
    gamma: List[List[float]]
    kernels: List[KernelModel] = Field(default_factory=lambda: [KernelModel()])
    simulation: SimulationModel = Field(default_factory=SimulationModel)
    verification: VerificationModel = Field(default_factory=VerificationModel)
    averaging: AveragingModel = Field(default_factory=AveragingModel)
    moments: MomentsModel = Field(default_factory=MomentsModel)
    omega: OmegaModel = Field(default_factory=OmegaModel)
    units: UnitsModel = Field(default_factory=UnitsModel)

    @model_validator(mode="after")
    def _species_lists(self):
        n = len(self.species)
        if len(self.simulation.n_particles) != n:
            raise ValueError(f"simulation.n_particles needs {n} entries, got {len(self.simulation.n_particles)}")
        if self.simulation.C0 is not None and len(self.simulation.C0) != n:
            raise ValueError(f"simulation.C0 needs {n} entries, got {len(self.simulation.C0)}")
        return self

    def build_mixture(self) -> MixtureSpec:
        return MixtureSpec.from_species([s.model_dump() for s in self.species], self.gamma, self.dimension)

    def build_kernels(self, mixture: MixtureSpec) -> KernelSpec:
        return KernelSpec.from_config([k.model_dump() for k in self.kernels], mixture)

    def species_masses(self, mixture: MixtureSpec) -> List[float]:
        """C_0 per internal species ordinal (defaults to 1 for every species)."""
        raw = self.simulation.C0 or [1.0] * len(self.species)
        return [float(raw[mixture.input_ordinal(i) - 1]) for i in range(1, mixture.n_species + 1)]

    def particle_counts(self, mixture: MixtureSpec) -> List[int]:
        raw = self.simulation.n_particles
        return [int(raw[mixture.input_ordinal(i) - 1]) for i in range(1, mixture.n_species + 1)]


class LoadedConfig:
    """A validated config with its mixture, kernels and the hash of the raw document."""

    def __init__(self, model: BoltzmixConfig, document: dict, source: Optional[Path] = None):
        self.model = model
        self.document = document
        self.source = source
        self.mixture = model.build_mixture()
        self.kernels = model.build_kernels(self.mixture)

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.document)

    def __getattr__(self, name):
        return getattr(self.model, name)


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "config"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(document: Union[str, dict, None], source: Optional[Path] = None):
    """
    Validate a config document.

    Returns:
        tuple: (LoadedConfig, None) or (None, error message)
    """
    if document is None:
        return None, "Please provide a config document"
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            return None, f"Invalid JSON format in config: {e}"
    if not isinstance(document, dict):
        return None, "Config must be a JSON object"
    try:
        model = BoltzmixConfig.model_validate(document)
    except ValidationError as e:
        return None, _format_validation(e)
    try:
        return LoadedConfig(model, document, source), None
    except ConfigError as e:
        return None, str(e)


def load_config(path: Union[str, Path, None] = None):
    """Read and validate a config file (default: the shipped config)."""
    path = Path(path) if path is not None else DEFAULT_CONFIG
    if not path.exists():
        return None, f"Config file not found: {path}"
    try:
        text = path.read_text()
    except OSError as e:
        return None, f"Cannot read config file {path}: {e}"
    return parse_config(text, source=path)


def require_config(path: Union[str, Path, None] = None) -> LoadedConfig:
    """
    Raises:
        ConfigError: the file is missing or violates an invariant.
    """
    cfg, error = load_config(path)
    if error:
        raise ConfigError(error)
    return cfg
