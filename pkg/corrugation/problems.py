# problems.py - built-in collar problems and the JSON problem loader

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from corrugation.errors import ConfigError
from corrugation.extend import CollarChart, SigmaData, make_collar, sigma_data
from corrugation.fields import MapField

log = logging.getLogger(__name__)


def _embed(columns, nx: int, m: int) -> np.ndarray:
    out = np.zeros((nx, m))
    for k, col in enumerate(columns):
        out[:, k] = col
    return out


def circle_problem(radius: float = 0.25, epsilon: float = 0.1, resolution=(512, 32), target_dim: int = 8) -> Tuple[SigmaData, CollarChart]:
    """Planar circle of the given radius in R^m, arclength-parametrized, in a flat collar.

    mu is the inward normal, so <mu, Lbar> - L = 1/radius.
    """
    collar = make_collar(2 * np.pi * radius, epsilon, resolution)
    nx = collar.grid.shape[0]
    s = collar.grid.axis(0) / radius
    c, sn = np.cos(s), np.sin(s)
    f = _embed([radius * c, radius * sn], nx, target_dim)
    df = _embed([-sn, c], nx, target_dim)
    mu = _embed([-c, -sn], nx, target_dim)
    dmu = _embed([sn / radius, -c / radius], nx, target_dim)
    d2f = _embed([-c / radius, -sn / radius], nx, target_dim)
    sd = sigma_data(f, mu, np.zeros(nx), collar, df=df, dmu=dmu, d2f=d2f)
    return sd, collar


def flat_line_problem(kappa: float = 2.0, period: float = 0.1, epsilon: float = 0.1, resolution=(128, 128), target_dim: int = 8) -> Tuple[SigmaData, CollarChart]:
    """Straight line in a collar with G = (1 + kappa t)^2, so L = -kappa and the margin is kappa."""
    collar = make_collar(period, epsilon, resolution, G=lambda x, t: (1 + kappa * t) ** 2)
    nx = collar.grid.shape[0]
    x = collar.grid.axis(0)
    f = _embed([x], nx, target_dim)
    df = _embed([np.ones(nx)], nx, target_dim)
    mu = _embed([np.zeros(nx), np.ones(nx)], nx, target_dim)
    zero = np.zeros((nx, target_dim))
    sd = sigma_data(f, mu, np.full(nx, -kappa), collar, df=df, dmu=zero, d2f=zero)
    return sd, collar


def product_problem(kappa: float = 1.0, resolution=(128, 16), epsilon: float = 0.1, target_dim: int = 8) -> Tuple[SigmaData, CollarChart, MapField]:
    """Circle of radius 1/kappa with outward mu in the collar G = (1 + kappa t)^2.

    The margin vanishes and u = f + t mu is a smooth isometric extension.
    """
    R = 1.0 / kappa
    collar = make_collar(2 * np.pi * R, epsilon, resolution, G=lambda x, t: (1 + kappa * t) ** 2)
    nx = collar.grid.shape[0]
    s = collar.grid.axis(0) * kappa
    c, sn = np.cos(s), np.sin(s)
    f = _embed([R * c, R * sn], nx, target_dim)
    df = _embed([-sn, c], nx, target_dim)
    mu = _embed([c, sn], nx, target_dim)
    dmu = _embed([-kappa * sn, kappa * c], nx, target_dim)
    d2f = _embed([-kappa * c, -kappa * sn], nx, target_dim)
    sd = sigma_data(f, mu, np.full(nx, -kappa), collar, df=df, dmu=dmu, d2f=d2f)
    t = collar.t()[..., None]
    values = sd.f[:, None, :] + t * sd.mu[:, None, :]
    jac = np.empty(values.shape + (2,))
    jac[..., 0] = sd.df[:, None, :] + t * sd.dmu[:, None, :]
    jac[..., 1] = np.broadcast_to(sd.mu[:, None, :], values.shape)
    return sd, collar, MapField(collar.grid, values, jac)


# -------------------------
# Problem files
# -------------------------
class ProblemFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: str = Field(default="1", description="problem schema version")
    kind: Literal["circle", "flat_line", "sampled"] = Field(description="closed-form tag or sampled arrays")
    radius: float = Field(default=0.25, gt=0.0, description="circle radius")
    kappa: float = Field(default=2.0, gt=0.0, description="flat_line curvature of the collar")
    period: float = Field(default=0.1, gt=0.0, description="flat_line Sigma period; sampled Sigma length")
    epsilon: float = Field(default=0.1, gt=0.0, description="collar depth")
    resolution: List[int] = Field(default=[512, 32], min_length=2, max_length=2, description="Sigma x depth nodes")
    target_dim: int = Field(default=8, ge=8, description="target dimension")
    f: Optional[List[List[float]]] = Field(default=None, description="sampled curve, one row per Sigma node")
    mu: Optional[List[List[float]]] = Field(default=None, description="sampled normal field")
    L: Optional[List[float]] = Field(default=None, description="sampled second fundamental form of Sigma")
    G: Optional[List[List[float]]] = Field(default=None, description="sampled collar metric, Sigma x depth")


def problem_from_model(spec: ProblemFile) -> Tuple[SigmaData, CollarChart]:
    if spec.kind == "circle":
        return circle_problem(spec.radius, spec.epsilon, spec.resolution, spec.target_dim)
    if spec.kind == "flat_line":
        return flat_line_problem(spec.kappa, spec.period, spec.epsilon, spec.resolution, spec.target_dim)
    if spec.f is None or spec.mu is None or spec.L is None:
        raise ConfigError("sampled problems need f, mu and L")
    f, mu = np.asarray(spec.f, dtype=float), np.asarray(spec.mu, dtype=float)
    if f.shape != mu.shape or f.shape[0] != spec.resolution[0]:
        raise ConfigError(f"sampled f {f.shape} and mu {mu.shape} must have one row per Sigma node")
    collar = make_collar(spec.period, spec.epsilon, spec.resolution, G=None if spec.G is None else np.asarray(spec.G))
    return sigma_data(f, mu, np.asarray(spec.L, dtype=float), collar), collar


def load_problem(path) -> Tuple[SigmaData, CollarChart]:
    """Read a problem JSON; schema failures become ConfigError."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        spec = ProblemFile.model_validate(raw)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"cannot load problem file {path}: {exc}")
    log.info("✅ [Problems] loaded %s problem from %s", spec.kind, path)
    return problem_from_model(spec)
