# engine_server_logic.py

import logging
import tempfile
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from corrugation.decompose import decompose_spd, standard_directions
from corrugation.errors import ConfigError
from corrugation.extend import check_admissible as _margin
from corrugation.fields import make_grid
from corrugation.problems import ProblemFile, problem_from_model
from corrugation.stage import StageParams, flat_benchmark, perform_stage
from engine_config import RunConfig
from engine_orchestrator import run

log = logging.getLogger(__name__)


def _validate(model, arguments: Dict[str, Any]):
    try:
        return model.model_validate(arguments)
    except ValidationError as exc:
        raise ConfigError(f"invalid arguments: {exc}")


def decompose_matrix(matrix: List[List[float]]) -> Dict[str, Any]:
    """Coefficients of a symmetric 2x2 matrix in the equiangular rank-one frame."""
    P = np.asarray(matrix, dtype=float)
    if P.shape != (2, 2):
        raise ConfigError(f"matrix must be 2x2, got shape {P.shape}")
    if not np.allclose(P, P.T):
        raise ConfigError("matrix must be symmetric")
    dirs = standard_directions()
    coeffs = decompose_spd(P, dirs)
    log.info("✅ [Engine MCP] decomposed %s", P.tolist())
    return {"coefficients": coeffs.tolist(), "directions": dirs.vectors.tolist()}


def run_stage(
    extent: float = 0.03,
    resolution: int = 256,
    delta: float = 0.09,
    lam: float = 50.0,
    tau: float = 1.5,
    C0: Optional[float] = None,
    compact: bool = False,
) -> Dict[str, Any]:
    """One corrugation stage on the flat benchmark; returns its certificate."""
    grid = make_grid(extent, resolution)
    u, rho, H, G = flat_benchmark(grid, delta, lam, compact=compact)
    fields = {"delta": delta, "lam": lam, "tau": tau}
    if C0 is not None:
        fields["C0"] = C0
    params = _validate(StageParams, fields)
    result = perform_stage(u, rho, H, G, params)
    return result.certificate.model_dump(mode="json")


def check_admissible(problem: Dict[str, Any]) -> Dict[str, Any]:
    """Admissibility margin of a collar problem given in problem-file form."""
    spec = _validate(ProblemFile, problem)
    sd, _ = problem_from_model(spec)
    margin = _margin(sd)
    return {"admissible": True, "margin_min": float(margin.min()), "margin_max": float(margin.max())}


def run_pipeline(config: Dict[str, Any], out_dir: Optional[str] = None) -> Dict[str, Any]:
    """Full run from a RunConfig dict; artifacts go to out_dir or a scratch directory."""
    parsed = _validate(RunConfig, config)
    if out_dir is not None:
        return run(parsed, out_dir).model_dump(mode="json")
    with tempfile.TemporaryDirectory(prefix="corrugation-") as scratch:
        return run(parsed, scratch).model_dump(mode="json")
