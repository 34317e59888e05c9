from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import (
    BaseSettings,
    JsonConfigSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    SettingsError,
    TomlConfigSettingsSource,
)
from typing import Optional, List, Dict, Any, Literal, Tuple, Type
from contextvars import ContextVar
from pathlib import Path
import json

from app.errors import ConfigError
from app.models import (
    Backend,
    CollisionScheme,
    InitialKind,
    PsiPair,
    SnapshotFormat,
    Stepper,
)
from app.services.dissipation import DissipationStructure

# Config file read by RunConfig while load_config runs
_config_file: ContextVar[Optional[Path]] = ContextVar("config_file", default=None)


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSettings(Section):
    d: Literal[2, 3] = 2
    torus_side: float = Field(4.0, gt=0)
    nx: int = Field(8, ge=1)
    vmax: float = Field(4.0, gt=0)
    nv: int = Field(16, ge=2)


class KernelSettings(Section):
    mu: float = Field(0.0, le=1.0)
    b0: float = Field(1.0, gt=0)
    gamma: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)
    images: int = Field(1, ge=0)


class GeometrySettings(Section):
    n_omega: int = Field(16, ge=4)
    dvm_table: Optional[str] = None


class SolverConfig(Section):
    dt: float = Field(0.01, gt=0)
    t_end: float = Field(1.0, gt=0)
    backend: Backend = Backend.DVM
    stepper: Stepper = Stepper.STRANG
    collision_scheme: CollisionScheme = CollisionScheme.HEUN
    truncation_level: Optional[float] = Field(None, gt=0)
    record_flux: bool = False
    positivity_guard: bool = True
    # Collision rate multiplier; the recorded flux is scaled alike
    flux_scale: float = Field(1.0, ge=0)
    tile_size: int = Field(4096, ge=1)
    diagnose_flux_rate: bool = False
    diagnose_degeneracy: bool = False

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


class InitialSettings(Section):
    kind: InitialKind = InitialKind.TWO_BUMP
    bump_velocity: float = 1.0
    temperature: float = Field(0.25, gt=0)
    mean_velocity: List[float] = [0.0, 0.0]
    spatial_amplitude: float = Field(0.0, ge=0, lt=1)


class AuditSettings(Section):
    perturbations: List[float] = [0.5, 0.9, 1.1, 2.0]
    structures: List[PsiPair] = [PsiPair.QUADRATIC, PsiPair.COSH]
    l_max: float = 1e-3
    gap_factor: float = 10.0
    zero_flux: bool = True


class CriteriaSettings(Section):
    mass_drift: float = 1e-12
    conservation_drift: float = 1e-10
    entropy_slack: float = 1e-10
    relaxation_l1: float = 1e-3
    check_relaxation: bool = True
    identity_tolerance: float = 1e-12
    degeneracy_tolerance: float = 1e-12
    psd_tolerance: float = 1e-12
    antisym_tolerance: float = 1e-10
    dissipation_relative: float = 1e-10
    n_random: int = Field(10, ge=1)
    # Structure checks run on this grid; None keeps the run grid
    structure_nx: Optional[int] = Field(4, ge=1)
    structure_nv: Optional[int] = Field(8, ge=2)
    refinement_ratio: float = 3.5
    existence_l1: float = 1e-4
    domination_betas: List[float] = [0.1, 0.5, 0.9]
    domination_constant: float = 10.0
    adjointness_backends: List[Backend] = [Backend.DVM, Backend.QUADRATURE]


class OutputSettings(Section):
    out_dir: str = "out"
    diagnostics_file: str = "diagnostics.jsonl"
    checkpoint_every: int = Field(0, ge=0)
    snapshot_format: SnapshotFormat = SnapshotFormat.CSV


class RunConfig(BaseSettings):
    scenario: str = "relax"
    seed: int = 0
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"

    grid: GridSettings = GridSettings()
    kernels: KernelSettings = KernelSettings()
    geometry: GeometrySettings = GeometrySettings()
    solver: SolverConfig = SolverConfig()
    dissipation: DissipationStructure = DissipationStructure()
    initial: InitialSettings = InitialSettings()
    audit: AuditSettings = AuditSettings()
    criteria: CriteriaSettings = CriteriaSettings()
    output: OutputSettings = OutputSettings()

    model_config = SettingsConfigDict(
        env_prefix="FUZZY_",
        env_nested_delimiter="__",
        env_file=".env",
        case_sensitive=False,
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        """Overrides, then FUZZY_ environment variables and .env, then the config file"""
        sources = [init_settings, env_settings, dotenv_settings]
        file = _config_file.get()
        if file is not None:
            if file.suffix == ".json":
                sources.append(JsonConfigSettingsSource(settings_cls, json_file=file))
            else:
                sources.append(TomlConfigSettingsSource(settings_cls, toml_file=file))
        return (*sources, file_secret_settings)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply `section.key=value` overrides to a nested config dictionary"""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override '{key}' descends into a scalar")
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def load_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Build the effective run configuration

    Args:
        path: TOML or JSON config file, optional
        overrides: list of `section.key=value` strings, applied last

    Returns:
        Validated RunConfig; unknown keys are rejected
    """
    file = None
    if path is not None:
        file = Path(path)
        if not file.exists():
            raise ConfigError(f"Config file not found: {path}")
    data = apply_overrides({}, overrides or [])
    token = _config_file.set(file)
    try:
        return RunConfig(**data)
    except (ValueError, SettingsError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    finally:
        _config_file.reset(token)


def dump_config(config: RunConfig, path: Path) -> Path:
    """Write the effective configuration as JSON; loading it reproduces the run"""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True))
    return path
