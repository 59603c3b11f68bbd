# iterate.py - adapted short embeddings, the inductive step and the torus demo

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage

from corrugation.decompose import standard_directions
from corrugation.errors import (
    DefectBlowup,
    EngineError,
    FitDegenerate,
    OrderingViolated,
    PreconditionError,
    ProximityLost,
    ResolutionError,
)
from corrugation.fields import (
    Grid,
    MapField,
    ScalarField,
    SymMatrixField,
    ck_norm,
    differentiate,
    flat_inclusion,
    gradient_array,
    jacobian_of,
)
from corrugation.stage import StageParams, perform_stage
from corrugation.verify import HolderFit, holder_exponent_estimate
from engine_config import A0_DEFAULT, LAMBDA0_DEFAULT, NYQUIST_NODES, Q_MAX_DEFAULT, SEED_DEFAULT, SIGMA0_DEFAULT

log = logging.getLogger(__name__)

R_STAR = 0.75
R_STAR_TILDE = 1.0


# -------------------------
# Schedule
# -------------------------
class IterSchedule(BaseModel):
    A: float
    b: float
    theta: float
    delta1: float
    Q_max: int
    ordering: str = Field(description="'strict' raises on ordering failures, 'report' records them")
    deltas: List[float] = Field(description="delta_q for q = 1, 2, ...")
    lams: List[float] = Field(description="lambda_q for q = 1, 2, ...")
    ordering_violations: List[int] = Field(default_factory=list, description="q with delta_{q+1} > delta_q/4 or lambda_{q+1} < 2 lambda_q")

    @property
    def tau(self) -> float:
        return 1.0 + (1.0 - self.theta) * (self.b - 1.0) / self.b

    def delta(self, q: int) -> float:
        return self.deltas[q - 1]

    def lam(self, q: int) -> float:
        return self.lams[q - 1]

    def r(self, q: int) -> float:
        """r_q = lambda_{q+1}^{-1}."""
        return 1.0 / self.lam(q + 1)


def build_schedule(
    A: float,
    b: float,
    theta: float,
    delta1: float,
    Q_max: int = Q_MAX_DEFAULT,
    ordering: str = "strict",
    A0: float = A0_DEFAULT,
) -> IterSchedule:
    """lambda_1 = A delta_1^{-1/(2 theta)}, lambda_{q+1} = lambda_q^b, delta_{q+1} = (lambda_{q+1}/A)^{-2 theta}."""
    if b <= 1:
        raise PreconditionError(f"b must exceed 1, got {b}")
    if not 0 < theta < 0.5:
        raise PreconditionError(f"theta must lie in (0, 1/2), got {theta}")
    if not 0 < delta1 < 1:
        raise PreconditionError(f"delta_1 must lie in (0, 1), got {delta1}")
    if A < A0:
        raise PreconditionError(f"A = {A} is below A0 = {A0}")
    if ordering not in ("strict", "report"):
        raise PreconditionError(f"unknown ordering policy {ordering!r}")
    count = Q_max + 3
    log_lam = [np.log(A) - np.log(delta1) / (2 * theta)]
    for _ in range(count - 1):
        log_lam.append(b * log_lam[-1])
    log_lam = np.asarray(log_lam)
    log_delta = -2 * theta * (log_lam - np.log(A))
    log_delta[0] = np.log(delta1)
    with np.errstate(over="ignore", under="ignore"):
        lams = np.exp(log_lam)
        deltas = np.exp(log_delta)
    bad = [
        q + 1
        for q in range(count - 1)
        if log_delta[q + 1] > log_delta[q] - np.log(4) + 1e-12 or log_lam[q + 1] < log_lam[q] + np.log(2) - 1e-12
    ]
    if bad and ordering == "strict":
        q = bad[0]
        raise OrderingViolated(
            f"delta_{q + 1}/delta_{q} = {np.exp(log_delta[q] - log_delta[q - 1]):.3g} breaks the 1/4 ordering",
            q=q,
        )
    if bad:
        log.warning("⚠️ [Iterate] schedule ordering fails at q = %s", bad)
    return IterSchedule(
        A=A, b=b, theta=theta, delta1=delta1, Q_max=Q_max, ordering=ordering,
        deltas=[float(d) for d in deltas], lams=[float(l) for l in lams], ordering_violations=bad,
    )


class ScheduleFit(BaseModel):
    schedule: IterSchedule
    stage_factor: float = Field(description="C in the stage base C lambda_{q+2}")
    lambda0: float = Field(description="lower bound on stage lambda handed to every stage")
    stage_lams: List[float] = Field(description="stage lambda per level")
    frequencies: List[float] = Field(description="stage frequency (C lambda_{q+2})^tau per level")
    f_max: float = Field(description="largest frequency the grid resolves")


def fit_schedule(
    grid: Grid,
    theta: float,
    b: float,
    delta1: float,
    Q_max: int = Q_MAX_DEFAULT,
    decay: float = 0.3,
    nyquist_nodes: int = NYQUIST_NODES,
    A0: float = A0_DEFAULT,
) -> ScheduleFit:
    """Report-mode schedule whose last stage sits at the grid's Nyquist limit.

    lambda_2 is chosen so that delta_3 / delta_2 = decay, which fixes A through
    lambda_1 = lambda_2^{1/b}. C then shifts every stage base by one factor until
    the frequency of level Q_max - 1 is the largest one the grid carries.
    """
    if b <= 1:
        raise PreconditionError(f"b must exceed 1, got {b}")
    if not 0 < theta < 0.5:
        raise PreconditionError(f"theta must lie in (0, 1/2), got {theta}")
    if not 0 < decay < 1:
        raise PreconditionError(f"decay must lie in (0, 1), got {decay}")
    if Q_max < 1:
        raise PreconditionError("a fitted schedule needs at least one level")
    log_lam2 = np.log(1.0 / decay) / (2 * theta * (b - 1))
    log_A = log_lam2 / b + np.log(delta1) / (2 * theta)
    schedule = build_schedule(float(np.exp(log_A)), b, theta, delta1, Q_max, ordering="report", A0=A0)
    tau = schedule.tau
    f_max = 2 * np.pi / (nyquist_nodes * grid.h) * (1 - 1e-9)
    log_C = np.log(f_max) / tau - np.log(schedule.lam(Q_max + 1))
    stage_factor = float(np.exp(log_C))
    stage_lams = [stage_factor * schedule.lam(q + 2) for q in range(Q_max)]
    if stage_lams[0] <= 1.0:
        raise ResolutionError(
            f"first stage lambda {stage_lams[0]:.3g} is not above 1; raise decay or refine the grid",
            f_max=f_max,
            stage_lams=stage_lams,
        )
    fit = ScheduleFit(
        schedule=schedule,
        stage_factor=stage_factor,
        lambda0=min(LAMBDA0_DEFAULT, stage_lams[0] * (1 - 1e-9)),
        stage_lams=stage_lams,
        frequencies=[lam ** tau for lam in stage_lams],
        f_max=float(f_max),
    )
    log.info("📐 [Iterate] fitted schedule: frequencies %s", ", ".join(f"{f:.3g}" for f in fit.frequencies))
    return fit


# -------------------------
# Profiles and skeleta
# -------------------------
def smoothstep(s: np.ndarray) -> np.ndarray:
    """Quintic 0 -> 1 on [0, 1], C^2 at both ends."""
    t = np.clip(s, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class Profiles:
    """Transition windows: phi rises, psi falls; tilde variants enclose the plain ones."""

    phi: Tuple[float, float] = (1.75, 2.0)
    phi_tilde: Tuple[float, float] = (1.5, 1.7)
    psi: Tuple[float, float] = (R_STAR, 0.85)
    psi_tilde: Tuple[float, float] = (0.9, R_STAR_TILDE)

    @staticmethod
    def _up(s, window):
        lo, hi = window
        return smoothstep((s - lo) / (hi - lo))

    def phi_of(self, s):
        return self._up(s, self.phi)

    def phi_tilde_of(self, s):
        return self._up(s, self.phi_tilde)

    def psi_of(self, s):
        return 1.0 - self._up(s, self.psi)

    def psi_tilde_of(self, s):
        return 1.0 - self._up(s, self.psi_tilde)

    def scaled(self, factor: float) -> "Profiles":
        """phi and phi~ windows multiplied by `factor`; psi windows unchanged."""
        if factor == 1.0:
            return self
        return replace(
            self,
            phi=(factor * self.phi[0], factor * self.phi[1]),
            phi_tilde=(factor * self.phi_tilde[0], factor * self.phi_tilde[1]),
        )


def window_scale(schedule: IterSchedule, q: int) -> float:
    """Factor on the phi windows at level q.

    With delta_{q+1} >= 4 delta_{q+2} the plateau of phi already starts below
    rho = delta_{q+1}^{1/2}. Report-mode schedules may separate the two amplitudes
    by less; the windows then shrink until that rho is back on the plateau.
    """
    s = (schedule.delta(q + 1) / schedule.delta(q + 2)) ** 0.5
    if s >= 2.0:
        return 1.0
    return 0.95 * s / 2.0


@dataclass(frozen=True)
class SkeletonDescriptor:
    """S as the whole chart, the lines of a coarse square mesh, or its vertices."""

    kind: str = "chart"
    spacing: float = 0.25

    def distance(self, grid: Grid) -> np.ndarray:
        if self.kind == "chart":
            return np.zeros(grid.shape)
        X1, X2 = grid.mesh()
        near = []
        for X, h in ((X1, grid.spacing[0]), (X2, grid.spacing[1])):
            offset = np.abs(X - self.spacing * np.round(X / self.spacing))
            near.append(offset <= 0.5 * h + 1e-15)
        if self.kind == "lines":
            on = near[0] | near[1]
        elif self.kind == "vertices":
            on = near[0] & near[1]
        else:
            raise PreconditionError(f"unknown skeleton kind {self.kind!r}")
        if not np.any(on):
            raise ResolutionError(f"skeleton spacing {self.spacing} puts no node on S")
        return ndimage.distance_transform_edt(~on, sampling=grid.spacing)

    def neighbourhoods(self, grid: Grid, r: float) -> Tuple[np.ndarray, np.ndarray]:
        """S_q = {dist < r_* r}, S~_q = {dist < r~_* r}."""
        d = self.distance(grid)
        return d < R_STAR * r, d < R_STAR_TILDE * r


# -------------------------
# Cutoffs
# -------------------------
@dataclass(frozen=True, eq=False)
class CutoffPair:
    chi: ScalarField
    chi_tilde: ScalarField
    q: int
    gradient_sup: float
    support_gap: float
    nested: bool
    window_scale: float = 1.0


def build_cutoffs(
    rho: ScalarField,
    skeleton: SkeletonDescriptor,
    schedule: IterSchedule,
    q: int,
    profiles: Optional[Profiles] = None,
) -> CutoffPair:
    """chi_q = phi(rho/delta_{q+2}^{1/2}) psi(dist(x, S)/r_{q+1}) and its enclosing chi~_q."""
    scale = window_scale(schedule, q)
    profiles = (profiles or Profiles()).scaled(scale)
    grid = rho.grid
    r = schedule.r(q + 1)
    if skeleton.kind != "chart" and r < 4 * grid.h:
        raise ResolutionError(f"cutoff radius r_{q + 1} = {r:.3e} is below 4h = {4 * grid.h:.3e}")
    s_rho = rho.values / schedule.delta(q + 2) ** 0.5
    s_dist = skeleton.distance(grid) / r
    chi = profiles.phi_of(s_rho) * profiles.psi_of(s_dist)
    chi_tilde = profiles.phi_tilde_of(s_rho) * profiles.psi_tilde_of(s_dist)
    nested = bool(np.all(chi_tilde[chi > 0] == 1.0))
    grad = gradient_array(chi, grid)
    gsup = float(np.sqrt(np.sum(grad ** 2, axis=-1)).max(initial=0.0))
    if np.any(chi > 0) and np.any(chi_tilde == 0):
        gap_field = ndimage.distance_transform_edt(chi_tilde > 0, sampling=grid.spacing)
        support_gap = float(gap_field[chi > 0].min())
    else:
        support_gap = float("inf")
    return CutoffPair(ScalarField(grid, chi), ScalarField(grid, chi_tilde), q, gsup, support_gap, nested, scale)


def rho_update(rho: ScalarField, chi: ScalarField, delta_next2: float) -> ScalarField:
    """rho_{q+1}^2 = rho_q^2 (1 - chi^2) + delta_{q+2} chi^2; untouched where chi = 0."""
    c2 = chi.values ** 2
    new = np.sqrt(rho.values ** 2 * (1 - c2) + delta_next2 * c2)
    return ScalarField(rho.grid, np.where(chi.values == 0, rho.values, new))


def check_rho_properties(
    rho_q: ScalarField,
    rho_next: ScalarField,
    cut: CutoffPair,
    schedule: IterSchedule,
    q: int,
    skeleton: SkeletonDescriptor,
) -> Dict[str, str]:
    tol = 1e-12
    d1, d2 = schedule.delta(q + 1) ** 0.5, schedule.delta(q + 2) ** 0.5
    rq, rn = rho_q.values, rho_next.values
    chi, chit = cut.chi.values, cut.chi_tilde.values
    on_tilde, on_chi = chit > 0, chi > 0

    def flag(ok) -> str:
        return "held" if bool(np.all(ok)) else "violated"

    S_next, _ = skeleton.neighbourhoods(rho_q.grid, schedule.r(q + 1))
    return {
        "range_on_chi_tilde": flag((rq[on_tilde] >= 1.5 * cut.window_scale * d2 * (1 - tol)) & (rq[on_tilde] <= 2 * d1 * (1 + tol))),
        "monotone": flag(rn[rq >= d2] <= rq[rq >= d2] * (1 + tol)),
        "floor_on_chi": flag(rn[on_chi] >= d2 * (1 - tol)),
        "full_where_large": flag(chi[(rq >= d1) & S_next] == 1.0),
    }


# -------------------------
# Adapted triples
# -------------------------
class TripleDiagnostics(BaseModel):
    identity_residual: float = Field(description="sup |G - du^T du - rho^2 (G + h)|")
    defect_sup: float = Field(description="sup |G - du^T du|")
    h_within_half_G: bool = Field(description="-G/2 <= h <= G/2 at every node")
    rho_gradient_ratio: float = Field(description="max |∇rho| / (A rho^{1 - 1/theta}) where rho > 0")
    u_hessian_ratio: float = Field(description="max |∇²u| / (A rho^{1 - 1/theta}) where rho > 0")
    h_gradient_ratio: float = Field(description="max |∇h| / (A rho^{-1/theta}) where rho > 0")


@dataclass(frozen=True, eq=False)
class AdaptedTriple:
    """(u, rho, h) with G - du^T du = rho^2 (G + h)."""

    u: MapField
    rho: ScalarField
    h: SymMatrixField
    G: SymMatrixField
    theta: float
    A: float
    seeds: Optional[np.ndarray] = field(default=None)
    # first coordinate of the next unused block of normals; None shares the seeds above
    next_block: Optional[int] = None
    block_end: Optional[int] = None

    def defect(self) -> np.ndarray:
        J = jacobian_of(self.u)
        return self.G.values - np.einsum("...ki,...kj->...ij", J, J)

    def identity_residual(self) -> float:
        r2 = self.rho.values[..., None, None] ** 2
        res = self.defect() - r2 * (self.G.values + self.h.values)
        return float(np.sqrt(np.sum(res ** 2, axis=(-1, -2))).max())

    def diagnostics(self) -> TripleDiagnostics:
        rho = self.rho.values
        pos = rho > 0
        lo = np.linalg.eigvalsh(0.5 * self.G.values - self.h.values)[..., 0]
        hi = np.linalg.eigvalsh(0.5 * self.G.values + self.h.values)[..., 0]
        weight = np.where(pos, self.A * np.where(pos, rho, 1.0) ** (1 - 1 / self.theta), np.inf)
        weight_h = np.where(pos, self.A * np.where(pos, rho, 1.0) ** (-1 / self.theta), np.inf)
        grad_rho = np.sqrt(np.sum(gradient_array(rho, self.rho.grid) ** 2, axis=-1))
        hess_u = np.sqrt(np.sum(differentiate(self.u, 2).values ** 2, axis=(-1, -2, -3)))
        grad_h = np.sqrt(np.sum(gradient_array(self.h.values, self.h.grid) ** 2, axis=(-1, -2, -3)))
        defect = self.defect()
        return TripleDiagnostics(
            identity_residual=self.identity_residual(),
            defect_sup=float(np.sqrt(np.sum(defect ** 2, axis=(-1, -2))).max()),
            h_within_half_G=bool(np.all(lo >= -1e-12) and np.all(hi >= -1e-12)),
            rho_gradient_ratio=float((grad_rho / weight).max(initial=0.0)),
            u_hessian_ratio=float((hess_u / weight).max(initial=0.0)),
            h_gradient_ratio=float((grad_h / weight_h).max(initial=0.0)),
        )


def triple_from_map(u: MapField, G: SymMatrixField, theta: float, A: float, seeds=None) -> AdaptedTriple:
    """rho^2 = tr(G^{-1} defect)/2 and h = defect/rho^2 - G; requires u strictly short."""
    J = jacobian_of(u)
    defect = G.values - np.einsum("...ki,...kj->...ij", J, J)
    rho2 = 0.5 * np.einsum("...ij,...ji->...", np.linalg.inv(G.values), defect)
    if np.any(rho2 <= 0):
        raise PreconditionError("start map is not strictly short")
    h = defect / rho2[..., None, None] - G.values
    return AdaptedTriple(u, ScalarField(u.grid, np.sqrt(rho2)), SymMatrixField(u.grid, h), G, theta, A, seeds)


def flat_start_triple(grid: Grid, G: SymMatrixField, start_scale: float, theta: float, A: float, target_dim: int = 8) -> AdaptedTriple:
    """u_0 = r * flat inclusion with r^2 = start_scale; coordinates 2.. are free for normals."""
    triple = triple_from_map(flat_inclusion(grid, target_dim, start_scale ** 0.5), G, theta, A)
    return replace(triple, next_block=2)


# -------------------------
# Inductive step
# -------------------------
class StepRecord(BaseModel):
    q: int
    skipped: bool
    lam: float = 0.0
    delta: float = 0.0
    tau: float = 0.0
    du_c0: float = 0.0
    du_c1: float = 0.0
    rho_max: float
    defect_sup: float
    identity_residual: float
    E_c0: float = 0.0
    theta_applied: float
    locality_ok: bool = True
    normals: str = Field(default="shared", description="'fresh' for an unused coordinate block, else 'shared'")
    rho_properties: Dict[str, str] = Field(default_factory=dict)
    certificate_ratios: Dict[str, float] = Field(default_factory=dict)


def inductive_step(
    triple: AdaptedTriple,
    schedule: IterSchedule,
    q: int,
    skeleton: SkeletonDescriptor,
    stage_factor: float = 1.0,
    C0: float = 1.0,
    sigma0: float = SIGMA0_DEFAULT,
    lambda0: float = LAMBDA0_DEFAULT,
    profiles: Optional[Profiles] = None,
    cut: Optional[CutoffPair] = None,
    rng_seed: int = SEED_DEFAULT,
) -> Tuple[AdaptedTriple, StepRecord]:
    """One level: stage at (4 delta_{q+1}, C lambda_{q+2}) on chi_q, then the new (rho, h).

    `cut` lets the caller hand in the cutoffs it already built for level q.
    """
    grid = triple.u.grid
    d_next, d_next2 = schedule.delta(q + 1), schedule.delta(q + 2)
    theta_next = triple.theta / schedule.b ** 2

    # Step 1 - cutoffs and the stage amplitude
    if cut is None:
        cut = build_cutoffs(triple.rho, skeleton, schedule, q, profiles)
    chi, chit = cut.chi.values, cut.chi_tilde.values
    if not np.any(chi > 0):
        log.info("⚠️ [Iterate] q=%d: chi vanishes, triple unchanged", q)
        diag = triple.diagnostics()
        return triple, StepRecord(
            q=q, skipped=True, rho_max=float(triple.rho.values.max()), defect_sup=diag.defect_sup,
            identity_residual=diag.identity_residual, theta_applied=triple.theta,
        )
    if 4 * d_next >= 1:
        raise PreconditionError(f"stage amplitude 4 delta_{q + 1} = {4 * d_next:.3g} is not below 1")
    rho2 = triple.rho.values ** 2
    rho_stage = chi * np.sqrt(np.maximum(rho2 - d_next2, 0.0))
    on_tilde = chit > 0
    gain = np.where(on_tilde, rho2 / np.where(on_tilde, rho2 - d_next2, 1.0), 0.0)
    h_stage = (chit * gain)[..., None, None] * triple.h.values

    # Step 2 - one stage at (4 delta_{q+1}, C lambda_{q+2})
    params = StageParams(
        delta=4 * d_next, lam=stage_factor * schedule.lam(q + 2), tau=schedule.tau,
        C0=C0, sigma0=sigma0, lambda0=lambda0, gamma=_pinch(triple),
    )
    seeds, next_block = _stage_seeds(triple, 2 * standard_directions().count)
    result = perform_stage(
        triple.u, ScalarField(grid, rho_stage), SymMatrixField(grid, h_stage), triple.G, params,
        seeds=seeds, rng_seed=rng_seed,
    )

    # Step 3 - new rho and h
    rho_new = rho_update(triple.rho, cut.chi, d_next2)
    rn2 = rho_new.values ** 2
    if np.any(rn2[on_tilde] < d_next2 * (1 - 1e-9)):
        raise DefectBlowup(f"rho_{q + 1}^2 fell below delta_{q + 2} on supp chi~_{q}", q=q)
    carried = ((1 - chi ** 2) * rho2)[..., None, None] * triple.h.values - result.E.values
    h_new = np.where(on_tilde[..., None, None], carried / np.where(on_tilde, rn2, 1.0)[..., None, None], triple.h.values)
    locality_ok = bool(not np.any(result.support & ~on_tilde))
    if not locality_ok:
        log.warning("⚠️ [Iterate] q=%d: corrugation leaked outside supp chi~", q)

    new = AdaptedTriple(
        u=result.v,
        rho=rho_new,
        h=SymMatrixField(grid, h_new),
        G=triple.G,
        theta=theta_next,
        A=triple.A ** (schedule.b ** 2),
        seeds=triple.seeds,
        next_block=next_block,
        block_end=triple.block_end,
    )
    diff = MapField(grid, result.v.values - triple.u.values, jacobian_of(result.v) - jacobian_of(triple.u))
    diag = new.diagnostics()
    record = StepRecord(
        q=q,
        skipped=False,
        lam=params.lam,
        delta=params.delta,
        tau=params.tau,
        du_c0=ck_norm(diff, 0),
        du_c1=ck_norm(diff, 1),
        rho_max=float(rho_new.values.max()),
        defect_sup=diag.defect_sup,
        identity_residual=diag.identity_residual,
        E_c0=result.certificate.measured["E_c0"],
        theta_applied=theta_next,
        locality_ok=locality_ok,
        normals="fresh" if next_block != triple.next_block else "shared",
        rho_properties=check_rho_properties(triple.rho, rho_new, cut, schedule, q, skeleton),
        certificate_ratios=result.certificate.ratios,
    )
    log.info("✅ [Iterate] q=%d |du|_1=%.3e defect=%.3e", q, record.du_c1, record.defect_sup)
    return new, record


def _stage_seeds(triple: AdaptedTriple, count: int) -> Tuple[Optional[np.ndarray], Optional[int]]:
    """Constant seeds on the next unused coordinate block, else the triple's own seeds.

    Earlier levels never write into a fresh block, so its directions are normal to
    the image and the frame is constant.
    """
    m = triple.u.target_dim
    start = triple.next_block
    end = m if triple.block_end is None else triple.block_end
    if start is None or start + count > end:
        return triple.seeds, triple.next_block
    return np.eye(m)[start:start + count], start + count


def _pinch(triple: AdaptedTriple) -> float:
    J = jacobian_of(triple.u)
    eig = np.linalg.eigvalsh(np.einsum("...ki,...kj->...ij", J, J))
    return float(max(2.0, 1.05 * eig[..., -1].max(), 1.05 / eig[..., 0].min()))


# -------------------------
# Iteration
# -------------------------
class ConvergenceReport(BaseModel):
    schema_version: str = "1"
    rows: List[StepRecord] = Field(default_factory=list)
    levels_completed: int = 0
    stop_reason: Optional[str] = None
    theta_applied: float
    final_defect_sup: float
    schedule_tail: float = Field(description="4 delta_{Q+1} of the last attempted level")
    locality_ok: bool = True
    holder: Optional[HolderFit] = None
    ordering_violations: List[int] = Field(default_factory=list)
    start: Dict[str, float] = Field(default_factory=dict, description="strong-start readouts, if any")


def iterate_to_isometry(
    triple0: AdaptedTriple,
    schedule: IterSchedule,
    skeleton: Optional[SkeletonDescriptor] = None,
    Q_max: Optional[int] = None,
    stage_factor: float = 1.0,
    C0: float = 1.0,
    sigma0: float = SIGMA0_DEFAULT,
    lambda0: float = LAMBDA0_DEFAULT,
    rng_seed: int = SEED_DEFAULT,
) -> Tuple[AdaptedTriple, ConvergenceReport]:
    """Run inductive steps q = 0 .. Q_max - 1; any stage error stops the run with a partial report."""
    skeleton = skeleton or SkeletonDescriptor()
    Q = schedule.Q_max if Q_max is None else Q_max
    if Q > schedule.Q_max:
        raise PreconditionError(f"schedule covers {schedule.Q_max} levels, asked for {Q}")
    triple = triple0
    rows: List[StepRecord] = []
    touched = np.zeros(triple0.u.grid.shape, dtype=bool)
    stop_reason = None
    for q in range(Q):
        try:
            cut = build_cutoffs(triple.rho, skeleton, schedule, q)
            triple, record = inductive_step(
                triple, schedule, q, skeleton, stage_factor, C0, sigma0, lambda0, cut=cut, rng_seed=rng_seed,
            )
        except EngineError as exc:
            stop_reason = f"{type(exc).__name__}: {exc}"
            log.warning("⚠️ [Iterate] stopped at q=%d: %s", q, stop_reason)
            break
        touched |= cut.chi_tilde.values > 0
        rows.append(record)
    completed = len(rows)

    outside = ~touched
    locality = bool(
        np.array_equal(triple.u.values[outside], triple0.u.values[outside])
        and np.array_equal(triple.rho.values[outside], triple0.rho.values[outside])
        and np.array_equal(triple.h.values[outside], triple0.h.values[outside])
    )
    holder = None
    try:
        holder = holder_exponent_estimate(triple.u)
    except (FitDegenerate, PreconditionError) as exc:
        log.info("⚠️ [Iterate] no Hölder fit: %s", exc)
    diag = triple.diagnostics()
    report = ConvergenceReport(
        rows=rows,
        levels_completed=completed,
        stop_reason=stop_reason,
        theta_applied=triple.theta,
        final_defect_sup=diag.defect_sup,
        schedule_tail=4 * schedule.delta(min(completed, Q) + 1),
        locality_ok=locality and all(r.locality_ok for r in rows),
        holder=holder,
        ordering_violations=schedule.ordering_violations,
    )
    return triple, report


# -------------------------
# Torus demo
# -------------------------
def clifford_torus(grid: Grid, target_dim: int = 8, scale: float = 1.0) -> Tuple[MapField, np.ndarray]:
    """Isometric torus of the periodic chart in R^4 x 0, scaled by `scale`, with normal seeds.

    Returns the map and per-node seeds (n1, n2, 6, target_dim): the two radial
    normals of the torus followed by the last four coordinate directions.
    """
    if not all(grid.periodic):
        raise PreconditionError("the torus chart must be periodic in both axes")
    if target_dim < 8:
        raise PreconditionError(f"torus demo needs 8 target dimensions, got {target_dim}")
    X1, X2 = grid.mesh()
    L1, L2 = grid.extent
    a, b = 2 * np.pi * X1 / L1, 2 * np.pi * X2 / L2
    R1, R2 = scale * L1 / (2 * np.pi), scale * L2 / (2 * np.pi)
    values = np.zeros(grid.shape + (target_dim,))
    values[..., 0], values[..., 1] = R1 * np.cos(a), R1 * np.sin(a)
    values[..., 2], values[..., 3] = R2 * np.cos(b), R2 * np.sin(b)
    jac = np.zeros(grid.shape + (target_dim, 2))
    jac[..., 0, 0], jac[..., 1, 0] = -scale * np.sin(a), scale * np.cos(a)
    jac[..., 2, 1], jac[..., 3, 1] = -scale * np.sin(b), scale * np.cos(b)
    seeds = np.zeros(grid.shape + (6, target_dim))
    seeds[..., 0, 0], seeds[..., 0, 1] = np.cos(a), np.sin(a)
    seeds[..., 1, 2], seeds[..., 1, 3] = np.cos(b), np.sin(b)
    for k in range(4):
        seeds[..., 2 + k, target_dim - 4 + k] = 1.0
    return MapField(grid, values, jac), seeds


def shrink_scale(G: SymMatrixField, margin: float = 0.75, max_halvings: int = 30) -> float:
    """Largest r^2 = 4^{-j} with lambda_min(G - r^2 Id) >= margin * max lambda_max(G)."""
    eig = G.eigenvalues()
    lo, top = eig[..., 0].min(), eig[..., -1].max()
    r2 = 1.0
    for _ in range(max_halvings):
        if lo - r2 >= margin * top:
            return r2
        r2 *= 0.25
    raise PreconditionError("no scaling leaves the requested shortness margin")


def prepare_strong_start(
    G: SymMatrixField,
    theta: float,
    A: float,
    sigma0: float = 0.5,
    target_dim: int = 8,
    r2_floor: float = 4.0 ** -8,
) -> Tuple[AdaptedTriple, Dict[str, float]]:
    """Scaled torus as an adapted triple with constant rho^2 = delta*.

    With D = G - r^2 Id, delta* is the midrange of tr(G^{-1} D)/2 over the chart and
    h~ = D/delta* - G, so G - u^T u = delta* (G + h~) holds exactly. r^2 starts at
    shrink_scale(G) and is quartered until |h~| <= sigma0/4^{n+1}.
    """
    grid = G.grid
    bound = sigma0 / 4 ** 3
    Ginv = np.linalg.inv(G.values)
    r2 = shrink_scale(G)
    while True:
        defect = G.values - r2 * np.eye(2)
        density = 0.5 * np.einsum("...ij,...ji->...", Ginv, defect)
        delta_star = 0.5 * float(density.min() + density.max())
        h_tilde = defect / delta_star - G.values
        h_sup = float(np.sqrt(np.sum(h_tilde ** 2, axis=(-1, -2))).max())
        if h_sup <= bound:
            break
        if 0.25 * r2 < r2_floor:
            raise PreconditionError(
                f"|h~| = {h_sup:.3e} stays above sigma0/4^3 = {bound:.3e} down to r^2 = {r2:.3g}",
                r2=r2,
                h_tilde_sup=h_sup,
            )
        log.info("⚠️ [Iterate] |h~|=%.3e above %.3e at r^2=%.3g, shrinking", h_sup, bound, r2)
        r2 *= 0.25
    if not 0 < delta_star < 1:
        raise PreconditionError(f"strong-start amplitude delta* = {delta_star:.3g} outside (0, 1)")
    u0, seeds = clifford_torus(grid, target_dim, scale=r2 ** 0.5)
    triple = AdaptedTriple(
        u=u0,
        rho=ScalarField(grid, np.full(grid.shape, delta_star ** 0.5)),
        h=SymMatrixField(grid, h_tilde),
        G=G,
        theta=theta,
        A=A,
        seeds=seeds,
        next_block=4,
    )
    info = {"r2": r2, "delta_star": delta_star, "h_tilde_sup": h_sup, "h_tilde_bound": bound}
    log.info("✅ [Iterate] strong start r^2=%.3g delta*=%.4f |h~|=%.3e", r2, delta_star, h_sup)
    return triple, info


def global_embed_demo(
    G: SymMatrixField,
    theta: float = 0.45,
    b: float = 1.1,
    eps_target: float = 0.5,
    Q_max: int = Q_MAX_DEFAULT,
    sigma0: float = 0.5,
    C0: float = 1.0,
    decay: float = 0.6,
    defect_target: float = 1e-3,
    target_dim: Optional[int] = None,
    rng_seed: int = SEED_DEFAULT,
) -> Tuple[MapField, ConvergenceReport]:
    """Torus chart: strong start, then Q_max levels on a schedule fitted to the grid.

    delta_1 = delta*/4 keeps rho_0 <= 2 delta_1^{1/2}. The run raises DefectBlowup
    unless every level completes and the final defect is within
    max(defect_target, 4 delta_{Q+1}), and ProximityLost when the map leaves the
    eps_target neighbourhood of the start.
    """
    grid = G.grid
    m = max(8, 4 + 2 * standard_directions().count * Q_max) if target_dim is None else target_dim
    triple0, info = prepare_strong_start(G, theta, A0_DEFAULT, sigma0, m)
    fit = fit_schedule(grid, theta, b, 0.25 * info["delta_star"] * (1 + 1e-9), Q_max, decay)
    triple0 = replace(triple0, A=fit.schedule.A)
    triple, report = iterate_to_isometry(
        triple0, fit.schedule, SkeletonDescriptor("chart"), Q_max, fit.stage_factor, C0, sigma0, fit.lambda0,
        rng_seed=rng_seed,
    )
    proximity = float(np.sqrt(np.sum((triple.u.values - triple0.u.values) ** 2, axis=-1)).max())
    info.update(proximity=proximity, stage_factor=fit.stage_factor, f_max=fit.f_max)
    report = report.model_copy(update={"start": info})
    bound = max(defect_target, report.schedule_tail)
    if report.levels_completed < Q_max or report.final_defect_sup > bound:
        raise DefectBlowup(
            f"torus run ends at defect {report.final_defect_sup:.3e} after {report.levels_completed} of {Q_max} levels"
            f" (target {bound:.3e})",
            final_defect_sup=report.final_defect_sup,
            levels_completed=report.levels_completed,
            stop_reason=report.stop_reason,
        )
    if proximity > eps_target:
        raise ProximityLost(f"C^0 distance {proximity:.3g} from the start exceeds {eps_target:.3g}", proximity=proximity)
    log.info("✅ [Iterate] torus demo: %d levels, defect %.3e, proximity %.3g", Q_max, report.final_defect_sup, proximity)
    return triple.u, report
