from pydantic import BaseModel, ConfigDict, Field
from typing import Optional, List, Dict
from enum import Enum, IntEnum


class Backend(str, Enum):
    QUADRATURE = "quadrature"
    DVM = "dvm"


class Stepper(str, Enum):
    EULER = "euler"
    DUHAMEL = "duhamel"
    STRANG = "strang"


class CollisionScheme(str, Enum):
    EULER = "euler"
    HEUN = "heun"
    DUHAMEL = "duhamel"


class ThetaKind(str, Enum):
    LOGARITHMIC_MEAN = "logarithmic_mean"
    GEOMETRIC_MEAN = "geometric_mean"


class PsiPair(str, Enum):
    QUADRATIC = "quadratic"
    COSH = "cosh"


class Provenance(str, Enum):
    SOLVER = "solver"
    EXTERNAL = "external"


class SnapshotFormat(str, Enum):
    CSV = "csv"
    BINARY = "binary"


class InitialKind(str, Enum):
    TWO_BUMP = "two_bump"
    MAXWELLIAN = "maxwellian"


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    CONFIG = 2
    CONSERVATION = 10
    H_THEOREM = 11
    RELAXATION = 12
    POSITIVITY_GAP = 20
    NEGATIVE_FUNCTIONAL = 21
    STRUCTURE_IDENTITY = 30
    DEGENERACY = 31
    ADJOINTNESS = 32
    SOLVER = 40
    MALFORMED_STREAM = 50


class MomentReport(BaseModel):
    mass: float = Field(..., gt=0)
    momentum: List[float]
    kinetic_energy: float = Field(..., ge=0)
    e_pq: float
    entropy: float


class DominationReport(BaseModel):
    beta: float
    constant: float
    max_ratio: float
    ratios: Dict[str, float]
    refined_max_ratio: float
    quadrature_nodes: int
    coarse: bool = False
    passed: bool


class DegeneracyReport(BaseModel):
    norm_l_ds: float
    norm_m_de: float


class BilinearReport(BaseModel):
    antisym_defect: float
    sym_defect: float
    psd_value: float


class AuditReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    structure: str
    tcre_residual_max: Optional[float] = None
    chain_rule_defect: float
    l_value: float
    entropy_identity_defect: Optional[float] = None
    delta_entropy: float
    dissipation_integral: float
    rate_integral: float
    tolerance: float
    infinite_at: Optional[int] = None


class ContractionReport(BaseModel):
    times: List[float]
    distances: List[float]
    rate: float
    bound: float


class ExistenceReport(BaseModel):
    iterations: int
    converged: bool
    increments: List[float]
    max_mass: float
    min_value: float


class DiagnosticsRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    step: int
    time: float
    mass: float
    momentum: List[float]
    energy: float
    entropy: float
    relative_entropy: Optional[float] = None
    dissipation: float
    d_psi_star: float
    flux_rate: Optional[float] = None
    e22: float
    e0q: float
    norm_l_ds: Optional[float] = None
    norm_m_de: Optional[float] = None


class CriterionResult(BaseModel):
    name: str
    passed: bool
    value: float
    threshold: float
    exit_code: ExitCode


class ScenarioReport(BaseModel):
    scenario: str
    exit_code: ExitCode = ExitCode.OK
    criteria: List[CriterionResult] = []
    audits: Dict[str, AuditReport] = {}
    message: Optional[str] = None
