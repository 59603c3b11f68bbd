# engine_config.py - defaults, environment overrides and the run schema

import hashlib
import json
import os
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

load_dotenv()

# -------------------------
# Numerical defaults
# -------------------------
SIGMA0_DEFAULT = float(os.getenv("CORRUGATION_SIGMA0", "0.1"))
C0_DEFAULT = float(os.getenv("CORRUGATION_C0", "4.0"))
LAMBDA0_DEFAULT = float(os.getenv("CORRUGATION_LAMBDA0", "32.0"))
K_BUDGET_DEFAULT = float(os.getenv("CORRUGATION_K_BUDGET", "2.0"))
A0_DEFAULT = float(os.getenv("CORRUGATION_A0", "1.0"))
SEED_DEFAULT = int(os.getenv("CORRUGATION_SEED", "0"))
Q_MAX_DEFAULT = int(os.getenv("CORRUGATION_Q_MAX", "4"))
NYQUIST_NODES = int(os.getenv("CORRUGATION_NYQUIST_NODES", "16"))
PRECONDITION_SLACK = float(os.getenv("CORRUGATION_PRECONDITION_SLACK", "0.05"))

# -------------------------
# Server / logging
# -------------------------
SERVER_HOST = os.getenv("CORRUGATION_SERVER_HOST", "127.0.0.1")
SERVER_PORT = int(os.getenv("CORRUGATION_SERVER_PORT", "8003"))
ENGINE_SERVER_URL = f"http://{SERVER_HOST}:{SERVER_PORT}/invoke_tool"
LOG_LEVEL = os.getenv("CORRUGATION_LOG_LEVEL", "INFO")

SCHEMA_VERSION = "1"
COMMANDS = ("stage", "iterate", "extend", "embed-torus", "verify", "ladder")

# desk-scale charts per command
DEFAULT_GRIDS = {
    "stage": {"extent": [0.03, 0.03], "resolution": [256, 256]},
    "ladder": {"extent": [0.03, 0.03], "resolution": [256, 256]},
    "iterate": {"extent": [1.0, 0.015625], "resolution": [2048, 32]},
    "embed-torus": {"extent": [1.0, 1.0], "resolution": [256, 256], "periodic": [True, True]},
    "verify": {"extent": [1.0, 1.0], "resolution": [256, 256]},
}


# -------------------------
# Run schema
# -------------------------
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    extent: List[float] = Field(default=[1.0, 1.0], min_length=2, max_length=2, description="chart side lengths")
    resolution: List[int] = Field(default=[128, 128], min_length=2, max_length=2, description="nodes per axis")
    periodic: List[bool] = Field(default=[False, False], min_length=2, max_length=2, description="periodicity per axis")


class StageSpec(_Strict):
    delta: float = Field(default=0.09, gt=0.0, lt=1.0, description="amplitude budget delta")
    lam: float = Field(default=50.0, gt=1.0, description="frequency base lambda")
    tau: float = Field(default=1.5, gt=1.0, description="frequency exponent tau")
    C0: float = Field(default=C0_DEFAULT, ge=1.0, description="degenerate-cutoff constant")
    sigma0: float = Field(default=SIGMA0_DEFAULT, gt=0.0, description="decomposition budget")
    gamma: float = Field(default=2.0, ge=1.0, description="metric pinch bound")
    compact: bool = Field(default=False, description="localize rho to a bump in the middle of the chart")


class LadderSpec(_Strict):
    lams: List[float] = Field(default=[50.0, 100.0, 200.0], min_length=2, description="lambda ladder")
    tau: float = Field(default=1.5, gt=1.0, description="frequency exponent tau")
    delta: float = Field(default=0.09, gt=0.0, lt=1.0, description="amplitude budget delta")
    C0: float = Field(default=C0_DEFAULT, ge=1.0, description="degenerate-cutoff constant")


class IterateSpec(_Strict):
    schedule: Literal["fitted", "manual"] = Field(default="fitted", description="fit the schedule to the grid, or take A and C as given")
    decay: float = Field(default=0.3, gt=0.0, lt=1.0, description="delta_3/delta_2 of a fitted schedule")
    A: float = Field(default=1.338, ge=A0_DEFAULT, description="schedule constant A (manual)")
    b: float = Field(default=1.1, gt=1.0, description="frequency growth exponent b")
    theta: float = Field(default=0.45, gt=0.0, lt=0.5, description="Hölder exponent theta")
    delta1: float = Field(default=0.22, gt=0.0, lt=1.0, description="first amplitude delta_1")
    Q_max: int = Field(default=Q_MAX_DEFAULT, ge=0, description="number of inductive steps")
    ordering: Literal["strict", "report"] = Field(default="report", description="schedule ordering policy (manual)")
    stage_factor: float = Field(default=1.0, gt=0.0, description="stage frequency factor C in C lambda_{q+2} (manual)")
    C0: float = Field(default=1.0, ge=1.0, description="degenerate-cutoff constant for every stage")
    sigma0: float = Field(default=SIGMA0_DEFAULT, gt=0.0, description="decomposition budget for every stage")
    start_scale: float = Field(default=0.25, gt=0.0, lt=1.0, description="r^2 of the scaled flat start")
    metric: Literal["flat", "sine"] = Field(default="sine", description="G = Id or (1 + amplitude sin x1) Id")
    amplitude: float = Field(default=0.1, ge=0.0, lt=1.0, description="sine metric amplitude")
    target_dim: Optional[int] = Field(default=None, ge=8, description="target dimension; None gives 2 + 6 Q_max")
    skeleton: Literal["chart", "lines", "vertices"] = Field(default="chart", description="skeleton set S")
    skeleton_spacing: float = Field(default=0.25, gt=0.0, description="coarse mesh spacing for skeleta")


class ExtendSpec(_Strict):
    problem: str = Field(default="circle", description="'circle', 'flat_line' or a problem JSON path")
    radius: float = Field(default=0.25, gt=0.0, description="circle radius for the built-in circle problem")
    epsilon: float = Field(default=0.1, gt=0.0, description="collar depth")
    resolution: List[int] = Field(default=[512, 32], min_length=2, max_length=2, description="Sigma nodes x depth nodes")
    target_dim: int = Field(default=8, ge=8, description="target dimension; 14 or more splits normals by parity")
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0, description="margin alpha")
    K: float = Field(default=K_BUDGET_DEFAULT, gt=0.0, description="corrugation budget K")
    layers: int = Field(default=1, ge=1, description="dyadic layers Q")
    theta0: float = Field(default=0.25, gt=0.0, lt=0.5, description="target exponent theta_0")
    C0: float = Field(default=1.0, ge=1.0, description="degenerate-cutoff constant for layer stages")
    iterate: bool = Field(default=False, description="continue with the inductive iteration")
    b: float = Field(default=1.05, gt=1.0, description="frequency growth exponent of the collar iteration")
    decay: float = Field(default=0.7, gt=0.0, lt=1.0, description="delta_3/delta_2 of the collar schedule")
    defect_target: float = Field(default=1e-3, gt=0.0, description="final defect the collar iteration must reach")


class EmbedSpec(_Strict):
    metric: Literal["flat", "sine"] = Field(default="sine", description="background metric on the torus chart")
    amplitude: float = Field(default=0.1, ge=0.0, lt=1.0, description="sine metric amplitude")
    theta: float = Field(default=0.45, gt=0.0, lt=0.5, description="Hölder exponent theta")
    b: float = Field(default=1.1, gt=1.0, description="frequency growth exponent b")
    decay: float = Field(default=0.6, gt=0.0, lt=1.0, description="delta_3/delta_2 of the fitted schedule")
    eps_target: float = Field(default=0.5, gt=0.0, description="C^0 proximity target")
    defect_target: float = Field(default=1e-3, gt=0.0, description="final defect target; the schedule tail 4 delta_{Q+1} caps it from below")
    sigma0: float = Field(default=0.5, gt=0.0, description="decomposition budget for the strong start")
    Q_max: int = Field(default=Q_MAX_DEFAULT, ge=1, description="number of inductive steps")


class VerifySpec(_Strict):
    target: Literal["rigidity", "flexibility", "holder"] = Field(default="rigidity", description="verification kind")
    resolutions: List[int] = Field(default=[64, 128, 256], min_length=1, description="refinement ladder")
    curvature: float = Field(default=1.0, gt=0.0, description="curvature kappa of the product extension")


class OutputSpec(_Strict):
    mesh: bool = Field(default=False, description="write an OBJ of the first three coordinates")
    fields: bool = Field(default=False, description="write field containers of the final map")
    projection: List[int] = Field(default=[0, 1, 2], min_length=3, max_length=3, description="mesh coordinates")


class RunConfig(_Strict):
    schema_version: str = Field(default=SCHEMA_VERSION, description="config schema version")
    command: Literal["stage", "iterate", "extend", "embed-torus", "verify", "ladder"] = Field(description="pipeline")
    seed: int = Field(default=SEED_DEFAULT, ge=0, description="RNG seed")
    grid: Optional[GridSpec] = Field(default=None, description="chart grid; None picks the command default")
    stage: StageSpec = Field(default_factory=StageSpec, description="single stage parameters")
    ladder: LadderSpec = Field(default_factory=LadderSpec, description="stage ladder parameters")
    iterate: IterateSpec = Field(default_factory=IterateSpec, description="iteration parameters")
    extend: ExtendSpec = Field(default_factory=ExtendSpec, description="extension parameters")
    embed: EmbedSpec = Field(default_factory=EmbedSpec, description="torus embedding parameters")
    verify: VerifySpec = Field(default_factory=VerifySpec, description="verification parameters")
    output: OutputSpec = Field(default_factory=OutputSpec, description="artifact switches")

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, v: str) -> str:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v!r}")
        return v


def chart_grid(config: RunConfig) -> GridSpec:
    """The configured grid, or the desk-scale default of the command."""
    if config.grid is not None:
        return config.grid
    return GridSpec(**DEFAULT_GRIDS.get(config.command, {}))


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_seed(config: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return config
    return config.model_copy(update={"seed": int(seed)})
