# verify.py - connection gap, Hölder exponent fits and stage certificates

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from corrugation.errors import FitDegenerate, PreconditionError
from corrugation.fields import (
    MapField,
    ScalarField,
    TensorField,
    default_radius_ladder,
    gradient_array,
    jacobian_of,
    modulus_at,
)

log = logging.getLogger(__name__)


# -------------------------
# Connection gap
# -------------------------
class GapReport(BaseModel):
    schema_version: str = "1"
    lbar_term: List[float] = Field(description="<du(nu), Lbar(X, X)> per Sigma node")
    l_term: List[float] = Field(description="L(X, X) per Sigma node")
    gap: List[float] = Field(description="lbar_term - l_term per Sigma node")
    gap_min: float
    gap_max: float
    tangent: str = Field(default="unit tangent of Sigma", description="tangent field X")
    note: str = Field(
        default="surrogate: zero for smooth isometries, positive for convex-integration outputs",
        description="what the gap certifies",
    )


def _one_sided_t_derivative(u: np.ndarray, ht: float) -> np.ndarray:
    return (-3.0 * u[:, 0] + 4.0 * u[:, 1] - u[:, 2]) / (2.0 * ht)


def connection_gap(u: MapField, sd, tangent: Optional[np.ndarray] = None) -> GapReport:
    """<du(nu), Lbar(X, X)> - L(X, X) along the t = 0 row of a collar map.

    The grid's axis 0 is the periodic Sigma coordinate x and axis 1 the collar
    coordinate t. `sd` is the SigmaData whose scalar second fundamental form L
    is compared; `tangent` optionally rescales X (default: unit w.r.t. G = |∂_x u|^2).
    """
    grid = u.grid
    if not grid.periodic[0] or grid.periodic[1]:
        raise PreconditionError("collar grids are periodic along Sigma and open along t")
    hx, ht = grid.spacing
    row = u.values[:, 0, :]
    dx = (np.roll(row, -1, axis=0) - np.roll(row, 1, axis=0)) / (2 * hx)
    dxx = (np.roll(row, -1, axis=0) - 2 * row + np.roll(row, 1, axis=0)) / hx ** 2
    G = np.sum(dx * dx, axis=-1)
    normal = dxx - (np.sum(dxx * dx, axis=-1) / G)[:, None] * dx
    du_nu = _one_sided_t_derivative(u.values, ht)
    scale = np.ones_like(G) if tangent is None else np.asarray(tangent, dtype=float) ** 2
    lbar = scale * np.sum(du_nu * normal, axis=-1) / G
    lterm = scale * np.asarray(sd.L, dtype=float) / G
    gap = lbar - lterm
    return GapReport(
        lbar_term=lbar.tolist(),
        l_term=lterm.tolist(),
        gap=gap.tolist(),
        gap_min=float(gap.min()),
        gap_max=float(gap.max()),
    )


# -------------------------
# Hölder exponent
# -------------------------
class HolderFit(BaseModel):
    schema_version: str = "1"
    exponent: float = Field(description="fitted exponent of the modulus of continuity, clipped to [0, 1]")
    raw_slope: float = Field(description="unclipped least-squares slope")
    residual: float = Field(description="rms residual of the log-log fit")
    radii: List[float]
    moduli: List[float]


def _gradient_values(f: TensorField) -> np.ndarray:
    if isinstance(f, MapField):
        return jacobian_of(f)
    return gradient_array(f.values, f.grid)


def holder_exponent_estimate(f: TensorField, radius_ladder: Optional[Sequence[float]] = None) -> HolderFit:
    """log-log slope of omega(r) = max |∇f(x) - ∇f(y)| over pairs at separation r."""
    grid = f.grid
    ladder = list(radius_ladder) if radius_ladder is not None else default_radius_ladder(grid)
    if len(ladder) < 2:
        raise FitDegenerate("radius ladder needs at least two separations")
    if max(ladder) > max(grid.extent):
        raise PreconditionError(f"radius {max(ladder):.3g} exceeds the chart")
    grad = _gradient_values(f)
    moduli = [modulus_at(grad, grid, r)[0] for r in ladder]
    if min(moduli) <= 0.0:
        raise FitDegenerate("modulus of continuity vanishes on the ladder", moduli=moduli)
    x, y = np.log(ladder), np.log(moduli)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return HolderFit(
        exponent=float(np.clip(slope, 0.0, 1.0)),
        raw_slope=float(slope),
        residual=resid,
        radii=[float(r) for r in ladder],
        moduli=[float(m) for m in moduli],
    )


# -------------------------
# Stage certificates
# -------------------------
class CertificateEntry(BaseModel):
    name: str
    measured: float
    bound: float
    ratio: float


class CertificateLedger(BaseModel):
    schema_version: str = "1"
    entries: List[CertificateEntry]
    all_finite: bool
    checks: Dict[str, str]


def stage_certificate(result) -> CertificateLedger:
    """measured / bound for each stage estimate of a StageResult."""
    cert = result.certificate
    entries = [
        CertificateEntry(name=key, measured=cert.measured[key], bound=cert.bounds[key], ratio=cert.measured[key] / cert.bounds[key])
        for key in cert.bounds
        if key in cert.measured
    ]
    finite = all(np.isfinite(e.ratio) for e in entries)
    if not finite:
        log.warning("⚠️ [Verify] non-finite certificate entry")
    return CertificateLedger(entries=entries, all_finite=finite, checks=cert.checks)


class LadderFit(BaseModel):
    schema_version: str = "1"
    lams: List[float]
    measured: Dict[str, List[float]] = Field(description="measured norm per lambda")
    slopes: Dict[str, float] = Field(description="log-log slope against lambda")
    expected: Dict[str, float] = Field(description="exponent of the bound shape")
    c1_spread: float = Field(description="max / min of |v - u|_1 across the ladder")


def ladder_fit(results: Sequence, lams: Sequence[float], tau: float) -> LadderFit:
    """Fit the λ-dependence of the stage norms across a ladder of runs."""
    if len(results) != len(lams) or len(lams) < 2:
        raise FitDegenerate("ladder needs at least two stage results, one per lambda")
    keys = ["E_c0", "v_minus_u_c0", "v_c2", "v_minus_u_c1"]
    measured = {k: [float(r.certificate.measured[k]) for r in results] for k in keys}
    x = np.log(np.asarray(lams, dtype=float))
    slopes = {}
    for k in keys:
        vals = np.asarray(measured[k])
        if np.any(vals <= 0):
            raise FitDegenerate(f"{k} vanishes on the ladder")
        slopes[k] = float(np.polyfit(x, np.log(vals), 1)[0])
    c1 = np.asarray(measured["v_minus_u_c1"])
    return LadderFit(
        lams=[float(l) for l in lams],
        measured=measured,
        slopes=slopes,
        expected={"E_c0": 2 - 2 * tau, "v_minus_u_c0": -tau, "v_c2": tau, "v_minus_u_c1": 0.0},
        c1_spread=float(c1.max() / c1.min()),
    )


# -------------------------
# Refinement studies
# -------------------------
class RefinementReport(BaseModel):
    schema_version: str = "1"
    quantity: str
    spacings: List[float]
    values: List[float]
    slope: float = Field(description="log-log slope of |value| against the grid spacing")


def refinement_slope(quantity: str, spacings: Sequence[float], values: Sequence[float]) -> RefinementReport:
    """Convergence order of a grid-dependent readout."""
    vals = np.abs(np.asarray(values, dtype=float))
    if len(vals) < 2 or np.any(vals <= 0):
        raise FitDegenerate(f"{quantity} needs two or more nonzero readouts for a slope", values=list(values))
    slope = float(np.polyfit(np.log(np.asarray(spacings, dtype=float)), np.log(vals), 1)[0])
    return RefinementReport(
        quantity=quantity,
        spacings=[float(h) for h in spacings],
        values=[float(v) for v in values],
        slope=slope,
    )
