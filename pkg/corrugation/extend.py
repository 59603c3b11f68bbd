# extend.py - one-sided isometric extension of a curve across a collar

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from corrugation.decompose import decompose_field, standard_directions
from corrugation.errors import DefectBlowup, LayerUnresolved, NegativeTrace, NotAdmissible, PreconditionError, ShortnessLost
from corrugation.fields import Grid, MapField, ScalarField, SymMatrixField, ck_norm, jacobian_of, make_grid
from corrugation.iterate import (
    AdaptedTriple,
    ConvergenceReport,
    SkeletonDescriptor,
    fit_schedule,
    iterate_to_isometry,
    smoothstep,
)
from corrugation.stage import StageParams, perform_stage
from corrugation.verify import GapReport, connection_gap
from engine_config import K_BUDGET_DEFAULT, LAMBDA0_DEFAULT, NYQUIST_NODES, Q_MAX_DEFAULT, SEED_DEFAULT, SIGMA0_DEFAULT

log = logging.getLogger(__name__)

SHORTNESS_TOL = 1e-12


# -------------------------
# Collar and Sigma data
# -------------------------
@dataclass(frozen=True, eq=False)
class CollarChart:
    """Axis 0 is the periodic Sigma coordinate x, axis 1 the collar depth t in [0, eps]."""

    grid: Grid
    G: ScalarField

    def __post_init__(self):
        if not self.grid.periodic[0] or self.grid.periodic[1]:
            raise PreconditionError("collar grids are periodic in x and open in t")
        if np.any(self.G.values <= 0):
            raise PreconditionError("collar metric coefficient G must be positive")

    @property
    def epsilon(self) -> float:
        return self.grid.extent[1]

    def t(self) -> np.ndarray:
        return self.grid.mesh()[1]

    def metric(self) -> SymMatrixField:
        values = np.zeros(self.grid.shape + (2, 2))
        values[..., 0, 0] = self.G.values
        values[..., 1, 1] = 1.0
        return SymMatrixField(self.grid, values)


def make_collar(sigma_length: float, epsilon: float, resolution, G=None) -> CollarChart:
    """G is None (flat), a callable G(x, t), or an array on the grid."""
    grid = make_grid((sigma_length, epsilon), resolution, periodicity=(True, False))
    if G is None:
        values = np.ones(grid.shape)
    elif callable(G):
        values = G(*grid.mesh())
    else:
        values = np.asarray(G, dtype=float)
    return CollarChart(grid, ScalarField(grid, values))


def _periodic_d(values: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(values, -1, axis=0) - np.roll(values, 1, axis=0)) / (2 * h)


def _periodic_dd(values: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(values, -1, axis=0) - 2 * values + np.roll(values, 1, axis=0)) / h ** 2


@dataclass(frozen=True, eq=False)
class SigmaData:
    """Curve f, unit normal field mu along f, and the second fundamental forms L and Lbar."""

    f: np.ndarray
    mu: np.ndarray
    L: np.ndarray
    df: np.ndarray
    dmu: np.ndarray
    Lbar: np.ndarray

    @property
    def target_dim(self) -> int:
        return self.f.shape[-1]


def sigma_data(f, mu, L, collar: CollarChart, df=None, dmu=None, d2f=None, tol: Optional[float] = None) -> SigmaData:
    """Assemble SigmaData; missing x-derivatives come from periodic differences."""
    hx = collar.grid.spacing[0]
    f, mu = np.asarray(f, dtype=float), np.asarray(mu, dtype=float)
    df = _periodic_d(f, hx) if df is None else np.asarray(df, dtype=float)
    dmu = _periodic_d(mu, hx) if dmu is None else np.asarray(dmu, dtype=float)
    d2f = _periodic_dd(f, hx) if d2f is None else np.asarray(d2f, dtype=float)
    G0 = collar.G.values[:, 0]
    tol = 10 * hx ** 2 + 1e-10 if tol is None else tol
    if np.abs(np.sum(df * df, axis=-1) - G0).max() > tol * max(1.0, G0.max()):
        raise PreconditionError("f is not isometric along Sigma: |∂_x f|^2 differs from G(x, 0)")
    if np.abs(np.linalg.norm(mu, axis=-1) - 1).max() > 1e-10:
        raise PreconditionError("mu must be a unit field")
    if np.abs(np.sum(mu * df, axis=-1)).max() > tol:
        raise PreconditionError("mu must be normal to f")
    Lbar = d2f - (np.sum(d2f * df, axis=-1) / np.sum(df * df, axis=-1))[:, None] * df
    return SigmaData(f=f, mu=mu, L=np.asarray(L, dtype=float), df=df, dmu=dmu, Lbar=Lbar)


# -------------------------
# Admissibility and short extension
# -------------------------
def check_admissible(sd: SigmaData) -> np.ndarray:
    """<mu, Lbar(X, X)> - L(X, X) for unit X at each Sigma node; must be positive."""
    G0 = np.sum(sd.df * sd.df, axis=-1)
    margin = (np.sum(sd.mu * sd.Lbar, axis=-1) - sd.L) / G0
    if margin.min() <= 0:
        node = int(np.argmin(margin))
        raise NotAdmissible(f"admissibility margin {margin[node]:.4g} is not positive", node=(node,))
    return margin


def short_extension(sd: SigmaData, collar: CollarChart) -> MapField:
    """u(x, t) = f(x) + (t - t^2) mu(x), with its exact Jacobian."""
    grid = collar.grid
    t = collar.t()[..., None]
    values = sd.f[:, None, :] + (t - t * t) * sd.mu[:, None, :]
    jac = np.empty(values.shape + (2,))
    jac[..., 0] = sd.df[:, None, :] + (t - t * t) * sd.dmu[:, None, :]
    jac[..., 1] = (1 - 2 * t) * sd.mu[:, None, :]
    u = MapField(grid, values, jac)
    defect = collar.metric().values - np.einsum("...ki,...kj->...ij", jac, jac)
    lo = np.linalg.eigvalsh(defect)[..., 0]
    bad = lo[:, 1:] <= SHORTNESS_TOL
    if np.any(bad):
        i, j = np.unravel_index(int(np.argmax(bad)), bad.shape)
        x, tt = grid.node((i, j + 1))
        raise ShortnessLost(f"extension is not short at x={x:.4g}, t={tt:.4g}; lower eps", node=(i, j + 1))
    return u


def defect_density(u: MapField, g: SymMatrixField) -> ScalarField:
    """rho^2 = tr(g - du^T du) / n."""
    J = jacobian_of(u)
    trace = np.einsum("...ii->...", g.values - np.einsum("...ki,...kj->...ij", J, J))
    if trace.min() < -SHORTNESS_TOL:
        node = np.unravel_index(int(np.argmin(trace)), trace.shape)
        raise NegativeTrace(f"defect trace {trace[node]:.4g} is negative; u is not short", node=node)
    return ScalarField(u.grid, np.sqrt(np.maximum(trace, 0.0) / 2.0))


# -------------------------
# Layers
# -------------------------
class ExtensionParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(default=0.1, gt=0.0, lt=1.0, description="margin alpha")
    K: float = Field(default=K_BUDGET_DEFAULT, gt=0.0, description="corrugation budget; lambda_q >= K/d_q")
    layers: int = Field(default=1, ge=1, description="number of dyadic layers Q")
    theta0: float = Field(default=0.25, gt=0.0, lt=0.5, description="target exponent theta_0")
    tau: float = Field(default=1.5, gt=1.0, description="largest frequency exponent per layer")
    C0: float = Field(default=1.0, ge=1.0, description="degenerate-cutoff constant")
    sigma0: float = Field(default=SIGMA0_DEFAULT, gt=0.0, description="decomposition budget")
    lambda0: float = Field(default=LAMBDA0_DEFAULT, gt=1.0, description="smallest layer lambda")
    A: float = Field(default=1.0, ge=1.0, description="adapted constant A of the output triple")


def layer_cutoff(t: np.ndarray, epsilon: float, q: int, layers: int) -> np.ndarray:
    """chi_q in s = log2(eps/t): rises on [q-1, q], falls on [q, q+1]; chi_1 = 1 near t = eps.

    Consecutive layers satisfy chi_q^2 + chi_{q+1}^2 = 1 on their overlap, so the
    squares sum to one on [d_Q, eps].
    """
    with np.errstate(divide="ignore"):
        s = np.where(t > 0, np.log2(epsilon / np.where(t > 0, t, 1.0)), np.inf)
    rise = np.sin(0.5 * np.pi * smoothstep(s - (q - 1))) if q > 1 else np.ones_like(s)
    fall = np.cos(0.5 * np.pi * smoothstep(s - q))
    out = np.where(s <= q, rise, fall)
    out = np.where((s <= q - 1) & (q > 1), 0.0, out)
    return np.where(s >= q + 1, 0.0, out)


class LayerRecord(BaseModel):
    q: int
    parity: str
    d_q: float
    lam: float
    tau: float
    delta: float
    du_c0: float
    du_c1: float
    E_c0: float


class ExtensionReport(BaseModel):
    schema_version: str = "1"
    margin_min: float
    margin_max: float
    normals: str = Field(description="'split' when parities use disjoint normal blocks, else 'shared'")
    min_coefficient: float = Field(description="smallest a_k^2 of the margin split")
    layers: List[LayerRecord] = Field(default_factory=list)
    strip_depth: float = Field(description="collar depth below which the layers do not cover")
    h_sup: float
    h_sup_covered: float = Field(description="sup |h| where the layer squares sum to one")
    h_bound: float = Field(description="sigma0 / 4^{n+1}")
    boundary_pinned: bool
    margin_preserved: bool = Field(description="g - v^T v >= (alpha/2) rho^2 g on the covered collar")
    rho_slope: float = Field(description="log-log slope of rho against t near Sigma")


def _split_margin(u: MapField, g: SymMatrixField, rho: ScalarField, alpha: float) -> Tuple[np.ndarray, float]:
    J = jacobian_of(u)
    defect = g.values - np.einsum("...ki,...kj->...ij", J, J)
    r2 = rho.values ** 2
    pos = r2 > 0
    M = np.where(pos[..., None, None], defect / np.where(pos, r2, 1.0)[..., None, None], 0.0) - alpha * g.values
    # t = 0 row: take the first interior row's limit
    M[:, 0] = M[:, 1]
    coeffs = decompose_field(M, standard_directions(), mask=pos)
    return M, float(coeffs[pos].min())


def _rho_slope(rho: ScalarField, t: np.ndarray, epsilon: float) -> float:
    col = rho.values.mean(axis=0)
    tt = t[0]
    sel = (tt > 0) & (tt <= 0.25 * epsilon)
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(tt[sel]), np.log(col[sel]), 1)[0])


def adapted_extension(
    sd: SigmaData, collar: CollarChart, params: ExtensionParams, rng_seed: int = SEED_DEFAULT,
) -> Tuple[AdaptedTriple, ExtensionReport]:
    """Short extension corrected layer by layer so that g - v^T v = alpha rho^2 (g + h)."""
    grid = collar.grid
    margin = check_admissible(sd)
    u = short_extension(sd, collar)
    g = collar.metric()
    rho = defect_density(u, g)
    M, min_coeff = _split_margin(u, g, rho, params.alpha)
    eps = collar.epsilon
    t = collar.t()
    d = [eps * 2.0 ** (-q) for q in range(params.layers + 2)]
    if d[params.layers] < 8 * grid.h:
        raise LayerUnresolved(
            f"finest layer depth {d[params.layers]:.3e} is below 8h = {8 * grid.h:.3e}", layer=params.layers,
        )
    f_max = 2 * np.pi / (NYQUIST_NODES * grid.h) * (1 - 1e-9)
    order = list(range(1, params.layers + 1, 2)) + list(range(2, params.layers + 1, 2))

    m = sd.target_dim
    nstar = standard_directions().count
    split = m >= 2 + 4 * nstar

    current = u
    E_total = np.zeros(grid.shape + (2, 2))
    covered = np.zeros(grid.shape)
    records: List[LayerRecord] = []
    for q in order:
        chi = layer_cutoff(t, eps, q, params.layers)
        covered += chi ** 2
        rho_stage = chi * rho.values
        delta = float(rho_stage.max()) ** 2 * (1 + 1e-9)
        if not 0 < delta < 1:
            raise PreconditionError(f"layer {q} amplitude delta = {delta:.3g} outside (0, 1)")
        rho_field = ScalarField(grid, rho_stage)
        lam = max(params.lambda0, params.K / d[q], 1.01 * ck_norm(rho_field, 1) / delta ** 0.5)
        tau = min(params.tau, np.log(f_max) / np.log(lam))
        if tau <= 1.0 + 1e-6:
            raise LayerUnresolved(
                f"layer {q} needs lambda = {lam:.4g} but the grid carries frequencies up to {f_max:.4g}", layer=q,
            )
        J = jacobian_of(current)
        eig = np.linalg.eigvalsh(np.einsum("...ki,...kj->...ij", J, J))
        stage_params = StageParams(
            delta=delta, lam=lam, tau=tau, C0=params.C0, sigma0=params.sigma0, lambda0=params.lambda0,
            gamma=float(max(2.0, 1.05 * eig[..., -1].max(), 1.05 / eig[..., 0].min())),
        )
        zero = SymMatrixField(grid, np.zeros(grid.shape + (2, 2)))
        seeds = None
        if split:
            # odd and even layers corrugate along disjoint coordinate blocks
            block = slice(m - 2 * nstar, m) if q % 2 else slice(m - 4 * nstar, m - 2 * nstar)
            seeds = np.eye(m)[block]
        result = perform_stage(
            current, rho_field, zero, SymMatrixField(grid, M), stage_params, seeds=seeds, rng_seed=rng_seed,
        )
        diff = MapField(grid, result.v.values - current.values, jacobian_of(result.v) - jacobian_of(current))
        records.append(LayerRecord(
            q=q, parity="odd" if q % 2 else "even", d_q=d[q], lam=lam, tau=tau, delta=delta,
            du_c0=ck_norm(diff, 0), du_c1=ck_norm(diff, 1), E_c0=result.certificate.measured["E_c0"],
        ))
        log.info("✅ [Extend] layer %d (d=%.3e, lambda=%.4g, tau=%.3f)", q, d[q], lam, tau)
        E_total += result.E.values
        current = result.v

    # output triple: g - v^T v = alpha rho^2 (g + h)
    Jv = jacobian_of(current)
    remaining = g.values - np.einsum("...ki,...kj->...ij", Jv, Jv)
    ar2 = params.alpha * rho.values ** 2
    pos = ar2 > 0
    h = np.where(pos[..., None, None], remaining / np.where(pos, ar2, 1.0)[..., None, None] - g.values, 0.0)
    full = np.abs(covered - 1.0) <= 1e-9
    h_norm = np.sqrt(np.sum(h ** 2, axis=(-1, -2)))
    slack = np.linalg.eigvalsh(remaining - 0.5 * ar2[..., None, None] * g.values)[..., 0]
    report = ExtensionReport(
        margin_min=float(margin.min()),
        normals="split" if split else "shared",
        margin_max=float(margin.max()),
        min_coefficient=min_coeff,
        layers=records,
        strip_depth=d[params.layers],
        h_sup=float(h_norm.max()),
        h_sup_covered=float(h_norm[full].max(initial=0.0)),
        h_bound=params.sigma0 / 4 ** 3,
        boundary_pinned=bool(np.array_equal(current.values[:, 0], u.values[:, 0])),
        margin_preserved=bool(np.all(slack[full] >= -1e-12)),
        rho_slope=_rho_slope(rho, t, eps),
    )
    # the iteration takes fresh normals after the data of u and before the layer blocks
    used = np.flatnonzero(np.any(u.values != 0, axis=(0, 1)))
    triple = AdaptedTriple(
        u=current,
        rho=ScalarField(grid, np.sqrt(params.alpha) * rho.values),
        h=SymMatrixField(grid, h),
        G=g,
        theta=params.theta0,
        A=params.A,
        next_block=int(used.max()) + 1 if used.size else 0,
        block_end=m - (4 if split else 2) * nstar,
    )
    return triple, report


def isometric_extension(
    sd: SigmaData,
    collar: CollarChart,
    params: ExtensionParams,
    b: float = 1.05,
    Q_max: int = Q_MAX_DEFAULT,
    decay: float = 0.7,
    defect_target: float = 1e-3,
    rng_seed: int = SEED_DEFAULT,
) -> Tuple[MapField, ConvergenceReport, ExtensionReport, GapReport]:
    """adapted_extension, then Q_max levels on a schedule fitted to the collar grid.

    delta_1 = max(alpha rho^2)/4 keeps rho <= 2 delta_1^{1/2}. Raises DefectBlowup
    unless every level completes and the final defect is within
    max(defect_target, 4 delta_{Q+1}); the gap is read on the final map.
    """
    triple, ext_report = adapted_extension(sd, collar, params, rng_seed)
    delta1 = 0.25 * float(triple.rho.values.max()) ** 2 * (1 + 1e-9)
    fit = fit_schedule(collar.grid, params.theta0, b, delta1, Q_max, decay)
    triple = replace(triple, A=fit.schedule.A)
    final, report = iterate_to_isometry(
        triple, fit.schedule, SkeletonDescriptor("chart"), Q_max, fit.stage_factor, params.C0, params.sigma0,
        fit.lambda0, rng_seed=rng_seed,
    )
    bound = max(defect_target, report.schedule_tail)
    if report.levels_completed < Q_max or report.final_defect_sup > bound:
        raise DefectBlowup(
            f"collar run ends at defect {report.final_defect_sup:.3e} after {report.levels_completed} of {Q_max} levels"
            f" (target {bound:.3e})",
            final_defect_sup=report.final_defect_sup,
            levels_completed=report.levels_completed,
            stop_reason=report.stop_reason,
            layer_h_sup=ext_report.h_sup,
        )
    gap = connection_gap(final.u, sd)
    log.info("✅ [Extend] isometric extension: defect %.3e, gap in [%.4g, %.4g]", report.final_defect_sup, gap.gap_min, gap.gap_max)
    return final.u, report, ext_report, gap
