# stage.py - one corrugation stage: add rho^2 (G + H) to the pullback metric up to E

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from corrugation.decompose import DirectionSet, perturbed_decompose_field, standard_directions, sym_to_vec
from corrugation.errors import FailsMetricBounds, NyquistViolation, PreconditionError, UnsupportedDimension
from corrugation.fields import (
    Grid,
    MapField,
    ScalarField,
    SymMatrixField,
    ck_norm,
    flat_inclusion,
    gradient_array,
    identity_metric,
    jacobian_of,
)
from corrugation.frames import NormalFrame, normal_frame
from corrugation.mollify import mollify
from engine_config import C0_DEFAULT, LAMBDA0_DEFAULT, NYQUIST_NODES, PRECONDITION_SLACK, SIGMA0_DEFAULT

log = logging.getLogger(__name__)


# -------------------------
# Parameters
# -------------------------
class StageParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta: float = Field(gt=0.0, lt=1.0, description="amplitude budget; rho <= delta^{1/2}")
    lam: float = Field(gt=1.0, description="frequency base lambda")
    tau: float = Field(gt=1.0, description="frequency exponent; oscillations run at lambda^tau")
    gamma: float = Field(default=2.0, ge=1.0, description="pinch bound for du^T du")
    sigma0: float = Field(default=SIGMA0_DEFAULT, gt=0.0, description="perturbed decomposition budget")
    C0: float = Field(default=C0_DEFAULT, ge=1.0, description="degenerate-cutoff constant")
    lambda0: float = Field(default=LAMBDA0_DEFAULT, gt=1.0, description="smallest admissible lambda")
    nyquist_nodes: int = Field(default=NYQUIST_NODES, ge=4, description="nodes per oscillation period")
    slack: float = Field(default=PRECONDITION_SLACK, ge=0.0, description="relative slack on preconditions")

    @property
    def frequency(self) -> float:
        return self.lam ** self.tau

    @property
    def ell_u(self) -> float:
        return self.lam ** (-self.tau)

    @property
    def ell_b(self) -> float:
        return self.lam ** (1.0 - 2.0 * self.tau)

    @property
    def eps_sqrt(self) -> float:
        return self.C0 * self.delta ** 0.5 * self.lam ** (1.0 - self.tau)


def check_nyquist(frequency: float, grid: Grid, nyquist_nodes: int = NYQUIST_NODES) -> None:
    limit = 2 * np.pi / nyquist_nodes
    if frequency * grid.h > limit * (1 + 1e-12):
        raise NyquistViolation(
            f"oscillation frequency {frequency:.4g} needs h <= {limit / frequency:.3e}, grid has h = {grid.h:.3e}",
            frequency=frequency,
            h=grid.h,
        )


# -------------------------
# Degenerate cutoff
# -------------------------
def degenerate_cutoff(rho: ScalarField, delta: float, lam: float, tau: float, C0: float) -> ScalarField:
    """Regularized 1/rho: 1/rho above 2 eps^{1/2}, eps^{-1/2} below eps^{1/2}, C^1 cubic in between."""
    e = C0 * delta ** 0.5 * lam ** (1.0 - tau)
    if e * e >= delta:
        raise PreconditionError(
            f"eps = {e * e:.4g} is not below delta = {delta:.4g}; raise lambda or lower C0",
            eps=e * e,
            delta=delta,
        )
    r = rho.values
    if np.any(r < 0):
        raise PreconditionError("rho must be nonnegative")
    s = np.clip((r - e) / e, 0.0, 1.0)
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    bridge = (h00 + 0.5 * h01 - 0.25 * h11) / e
    psi = np.where(r >= 2 * e, 1.0 / np.maximum(r, 2 * e), np.where(r <= e, 1.0 / e, bridge))
    return ScalarField(rho.grid, psi)


# -------------------------
# Corrugation fields
# -------------------------
@dataclass(frozen=True, eq=False)
class CorrugationFields:
    """A, B: (n1, n2, n*, m, 2); D: (n1, n2, n*, m); one frequency and unit wave direction per k."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    frequencies: np.ndarray
    directions: DirectionSet

    @property
    def count(self) -> int:
        return self.D.shape[2]


def wave_vectors(grid: Grid, frequency: float, dirs: DirectionSet) -> np.ndarray:
    """frequency * nu_k, snapped to the reciprocal lattice on periodic axes."""
    w = frequency * dirs.vectors.copy()
    for axis in range(2):
        if grid.periodic[axis]:
            base = 2 * np.pi / grid.extent[axis]
            w[:, axis] = base * np.round(w[:, axis] / base)
    return w


def corrugation_fields(
    u_tilde: MapField,
    frame: NormalFrame,
    lam: float,
    tau: float,
    dirs: Optional[DirectionSet] = None,
    nyquist_nodes: int = NYQUIST_NODES,
) -> CorrugationFields:
    """D_k = sin ζ_k + cos η_k, A_k = (cos ζ_k - sin η_k) ⊗ nu_k, B_k = sin ∇ζ_k + cos ∇η_k."""
    dirs = dirs or standard_directions()
    grid = u_tilde.grid
    nstar = dirs.count
    frequency = lam ** tau
    check_nyquist(frequency, grid, nyquist_nodes)
    if frame.count < 2 * nstar:
        raise PreconditionError(f"stage needs {2 * nstar} normals, frame has {frame.count}")
    w = wave_vectors(grid, frequency, dirs)
    freqs = np.linalg.norm(w, axis=1)
    kappa = w / freqs[:, None]
    X1, X2 = grid.mesh()
    m = u_tilde.target_dim
    A = np.empty(grid.shape + (nstar, m, 2))
    B = np.empty(grid.shape + (nstar, m, 2))
    D = np.empty(grid.shape + (nstar, m))
    for k in range(nstar):
        zeta = frame.member(k)
        eta = frame.member(nstar + k)
        phase = w[k, 0] * X1 + w[k, 1] * X2
        s, c = np.sin(phase)[..., None], np.cos(phase)[..., None]
        D[:, :, k] = s * zeta + c * eta
        A[:, :, k] = (c * zeta - s * eta)[..., None] * kappa[k]
        B[:, :, k] = s[..., None] * gradient_array(zeta, grid) + c[..., None] * gradient_array(eta, grid)
    return CorrugationFields(A=A, B=B, D=D, frequencies=freqs, directions=DirectionSet(kappa))


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def perturbation_terms(Ju: np.ndarray, cf: CorrugationFields):
    """Lambda_k = 2 sym(∇u^T A_k) + 2 sym(∇u^T B_k)/f_k and
    Theta_ij = 2 sym(A_i^T B_j)/f_j + sym(B_i^T B_j)/(f_i f_j)."""
    f = cf.frequencies
    uA = np.einsum("...mi,...kmj->...kij", Ju, cf.A)
    uB = np.einsum("...mi,...kmj->...kij", Ju, cf.B)
    Lam = 2 * _sym(uA) + 2 * _sym(uB) / f[:, None, None]
    AB = np.einsum("...imp,...jmq->...ijpq", cf.A, cf.B)
    BB = np.einsum("...imp,...jmq->...ijpq", cf.B, cf.B)
    Theta = 2 * _sym(AB) / f[None, :, None, None] + _sym(BB) / (f[:, None, None, None] * f[None, :, None, None])
    return Lam, Theta


# -------------------------
# Certificate and result
# -------------------------
class StageCertificate(BaseModel):
    schema_version: str = "1"
    inputs_hash: str = Field(description="SHA-256 over u, rho, H, G node values")
    params: Dict[str, float] = Field(description="stage parameters")
    measured: Dict[str, float] = Field(description="measured norms of v - u, v and E")
    bounds: Dict[str, float] = Field(description="bound shapes with unit constant")
    ratios: Dict[str, float] = Field(description="measured / bound")
    checks: Dict[str, str] = Field(description="precondition outcome: held, held-with-slack or violated")
    decomposition_identity: float = Field(description="sup residual of the pre-mollification decomposition identity")
    error_split_gap: float = Field(description="sup |E - E1 - E2|")
    e1_sup: float = Field(description="sup |E1|")
    e2_sup: float = Field(description="sup |E2|")
    budget_max: float = Field(description="largest perturbation budget met at a decomposed node")
    newton_steps: int = Field(description="Newton steps used by the nodewise solve")
    b_mollified: bool = Field(description="False when ell_b falls below 2h and b is used as is")
    support_excess: float = Field(description="largest distance of a changed node from supp rho")


@dataclass(frozen=True, eq=False)
class StageResult:
    v: MapField
    E: SymMatrixField
    E1: SymMatrixField
    E2: SymMatrixField
    certificate: StageCertificate
    support: np.ndarray
    b: np.ndarray
    b_tilde: np.ndarray


def inputs_hash(*arrays) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()


class _Checks:
    """Precondition ledger; a violation beyond the slack raises."""

    def __init__(self, slack: float):
        self.slack = slack
        self.outcomes: Dict[str, str] = {}

    def upper(self, name: str, value: float, bound: float, error=PreconditionError):
        if value <= bound:
            self.outcomes[name] = "held"
        elif value <= bound * (1 + self.slack):
            self.outcomes[name] = "held-with-slack"
        else:
            self.outcomes[name] = "violated"
            raise error(f"precondition {name} violated: {value:.4g} > {bound:.4g}", check=name, value=value, bound=bound)


def _sup_matrix(M: np.ndarray) -> float:
    return float(np.sqrt(np.sum(M ** 2, axis=(-1, -2))).max(initial=0.0))


def _distance_from(support: np.ndarray, grid: Grid) -> np.ndarray:
    if not np.any(support):
        return np.full(support.shape, np.inf)
    return ndimage.distance_transform_edt(~support, sampling=grid.spacing)


def perform_stage(
    u: MapField,
    rho: ScalarField,
    H: SymMatrixField,
    G: SymMatrixField,
    params: StageParams,
    dirs: Optional[DirectionSet] = None,
    seeds: Optional[np.ndarray] = None,
    rng_seed: int = 0,
) -> StageResult:
    """Corrugate u so that ∇v^T∇v = ∇u^T∇u + rho^2 (G + H) + E.

    `seeds` and `rng_seed` are handed to normal_frame; per-node seeds let curved
    starts avoid the rank loss of constant coordinate seeds.
    """
    dirs = dirs or standard_directions()
    grid = u.grid
    nstar = dirs.count
    if u.target_dim < 2 + 2 * nstar:
        raise UnsupportedDimension(f"stage needs {2 + 2 * nstar} target dimensions, got {u.target_dim}")
    if params.lam < params.lambda0:
        raise PreconditionError(f"lambda = {params.lam:.4g} is below lambda0 = {params.lambda0:.4g}")
    check_nyquist(params.frequency, grid, params.nyquist_nodes)

    checks = _Checks(params.slack)
    Ju = jacobian_of(u)
    g_u = np.einsum("...ki,...kj->...ij", Ju, Ju)
    eig = np.linalg.eigvalsh(g_u)
    checks.upper("metric_upper", float(eig[..., -1].max()), params.gamma, FailsMetricBounds)
    checks.upper("metric_lower", 1.0 / max(float(eig[..., 0].min()), 1e-300), params.gamma, FailsMetricBounds)
    if np.any(rho.values < 0):
        raise PreconditionError("rho must be nonnegative")
    sqrt_delta = params.delta ** 0.5
    checks.upper("rho_sup", ck_norm(rho, 0), sqrt_delta)
    checks.upper("rho_c1", ck_norm(rho, 1), sqrt_delta * params.lam)
    checks.upper("H_sup", _sup_matrix(H.values), params.sigma0 / 2)
    checks.upper("H_c1", ck_norm(H, 1), params.lam)

    target = rho.values[..., None, None] ** 2 * (G.values + H.values)
    params_dump = {k: float(v) for k, v in params.model_dump().items()}
    digest = inputs_hash(u.values, rho.values, H.values, G.values)

    if not np.any(rho.values > 0):
        zero = SymMatrixField(grid, np.zeros(grid.shape + (2, 2)))
        cert = StageCertificate(
            inputs_hash=digest,
            params=params_dump,
            measured={"v_minus_u_c0": 0.0, "v_minus_u_c1": 0.0, "v_c2": ck_norm(u, 2), "E_c0": 0.0, "E_c1": 0.0},
            bounds=_bounds(params),
            ratios={},
            checks=checks.outcomes,
            decomposition_identity=0.0,
            error_split_gap=0.0,
            e1_sup=0.0,
            e2_sup=0.0,
            budget_max=0.0,
            newton_steps=0,
            b_mollified=False,
            support_excess=0.0,
        )
        zeros = np.zeros(grid.shape + (nstar,))
        return StageResult(u, zero, zero, zero, cert, np.zeros(grid.shape, dtype=bool), zeros, zeros)

    # Step 1 - mollify u and build the normal frame on it
    u_tilde = mollify(u, params.ell_u, boundary="odd")
    frame = normal_frame(u_tilde, 2 * nstar, seeds=seeds, gamma=params.gamma * (1 + params.slack), rng_seed=rng_seed)
    cf = corrugation_fields(u_tilde, frame, params.lam, params.tau, dirs, params.nyquist_nodes)
    freqs = cf.frequencies

    # Step 2 - perturbed decomposition of G + H
    Lam, Theta = perturbation_terms(Ju, cf)
    psi = degenerate_cutoff(rho, params.delta, params.lam, params.tau, params.C0).values
    mask = rho.values > 0
    N = cf.directions.outer()
    a, steps = perturbed_decompose_field(
        G.values + H.values,
        G.values,
        psi[..., None, None, None] * Lam,
        Theta,
        cf.directions,
        params.sigma0,
        mask,
    )
    budget = (
        np.sqrt(np.sum((psi[..., None, None, None] * Lam) ** 2, axis=(-1, -2))).sum(axis=-1)
        + np.sqrt(np.sum(Theta ** 2, axis=(-1, -2))).sum(axis=(-1, -2))
        + np.sqrt(np.sum(H.values ** 2, axis=(-1, -2)))
    )
    b = rho.values[..., None] * a
    rho2psi = (rho.values ** 2 * psi)[..., None]
    identity = (
        np.einsum("...k,kij->...ij", b * b, N)
        + np.einsum("...k,...kij->...ij", rho2psi * a, Lam)
        + np.einsum("...i,...j,...ijpq->...pq", b, b, Theta)
        - target
    )

    # Step 3 - mollify the amplitudes
    b_mollified = params.ell_b >= 2 * grid.h
    if b_mollified:
        b_tilde = np.stack(
            [mollify(ScalarField(grid, b[..., k]), params.ell_b, boundary="odd").values for k in range(nstar)],
            axis=-1,
        )
    else:
        log.debug("⚠️ [Stage] ell_b = %.3e below 2h, amplitudes used unmollified", params.ell_b)
        b_tilde = b
    grad_bt = gradient_array(b_tilde, grid)

    # Step 4 - the corrugated map and its exact Jacobian
    inv_f = 1.0 / freqs
    v_values = u.values + np.einsum("...k,...km->...m", b_tilde * inv_f, cf.D)
    Jv = (
        Ju
        + np.einsum("...k,...kmj->...mj", b_tilde, cf.A)
        + np.einsum("...k,...kmj->...mj", b_tilde * inv_f, cf.B)
        + np.einsum("...km,...kj->...mj", cf.D * inv_f[:, None], grad_bt)
    )
    v = MapField(grid, v_values, Jv)

    # Step 5 - metric error and its split
    E = np.einsum("...ki,...kj->...ij", Jv, Jv) - g_u - target
    E1 = (
        np.einsum("...k,kij->...ij", b_tilde ** 2 - b ** 2, N)
        + np.einsum("...k,...kij->...ij", b_tilde - (rho.values * psi)[..., None] * b, Lam)
        + np.einsum("...ij,...ijpq->...pq", b_tilde[..., :, None] * b_tilde[..., None, :] - b[..., :, None] * b[..., None, :], Theta)
    )
    uD = np.einsum("...mi,...km->...ki", Ju, cf.D)
    BD = np.einsum("...imp,...jm->...ijp", cf.B, cf.D)
    E2 = (
        2 * _sym(np.einsum("...kp,...kq->...pq", uD * inv_f[:, None], grad_bt))
        + 2 * _sym(np.einsum("...i,...ijp,...jq->...pq", b_tilde * inv_f, BD, grad_bt * inv_f[:, None]))
        + np.einsum("...kp,...kq->...pq", grad_bt * inv_f[:, None], grad_bt * inv_f[:, None])
    )
    E_field = SymMatrixField(grid, E)
    E1_field = SymMatrixField(grid, E1)
    E2_field = SymMatrixField(grid, E2)

    # Step 6 - certificate
    support = np.any(v_values != u.values, axis=-1)
    dist = _distance_from(mask, grid)
    excess = float(dist[support].max(initial=0.0)) if np.any(support) else 0.0
    diff = MapField(grid, v_values - u.values, Jv - Ju)
    measured = {
        "v_minus_u_c0": ck_norm(diff, 0),
        "v_minus_u_c1": ck_norm(diff, 1),
        "v_c2": ck_norm(v, 2),
        "E_c0": _sup_matrix(E),
        "E_c1": ck_norm(E_field, 1),
    }
    bounds = _bounds(params)
    ratios = {key: measured[key] / bounds[key] for key in measured}
    cert = StageCertificate(
        inputs_hash=digest,
        params=params_dump,
        measured=measured,
        bounds=bounds,
        ratios=ratios,
        checks=checks.outcomes,
        decomposition_identity=_sup_matrix(np.where(mask[..., None, None], identity, 0.0)),
        error_split_gap=_sup_matrix(E - E1 - E2),
        e1_sup=_sup_matrix(E1),
        e2_sup=_sup_matrix(E2),
        budget_max=float(np.where(mask, budget, 0.0).max(initial=0.0)),
        newton_steps=steps,
        b_mollified=bool(b_mollified),
        support_excess=excess,
    )
    log.info(
        "✅ [Stage] lambda=%.4g tau=%.3g |E|_0=%.3e |v-u|_0=%.3e",
        params.lam, params.tau, measured["E_c0"], measured["v_minus_u_c0"],
    )
    return StageResult(v, E_field, E1_field, E2_field, cert, support, b, b_tilde)


def _bounds(params: StageParams) -> Dict[str, float]:
    sd, lam, tau = params.delta ** 0.5, params.lam, params.tau
    return {
        "v_minus_u_c0": sd * lam ** (-tau),
        "v_minus_u_c1": sd,
        "v_c2": sd * lam ** tau,
        "E_c0": params.delta * lam ** (2 - 2 * tau),
        "E_c1": params.delta * lam,
    }


# -------------------------
# Flat benchmark
# -------------------------
def flat_benchmark(grid: Grid, delta: float, lam: float, target_dim: int = 8, compact: bool = False):
    """Flat inclusion with rho = delta^{1/2} (3 + cos(lam x1)) / 4, G = Id, H = 0.

    With constant rho the flat stage is exact, so rho oscillates at the base
    frequency to expose the lambda^{2 - 2 tau} error. `compact` multiplies rho by
    a bump supported in the disc of radius L/3 about the chart centre.
    """
    X1, X2 = grid.mesh()
    rho = delta ** 0.5 * (3 + np.cos(lam * X1)) / 4
    if compact:
        L1, L2 = grid.extent
        r2 = ((X1 - L1 / 2) / (L1 / 3)) ** 2 + ((X2 - L2 / 2) / (L2 / 3)) ** 2
        bump = np.zeros_like(r2)
        inside = r2 < 1
        bump[inside] = np.exp(1 - 1 / (1 - r2[inside]))
        rho = rho * bump
    u = flat_inclusion(grid, target_dim)
    zero = SymMatrixField(grid, np.zeros(grid.shape + (2, 2)))
    return u, ScalarField(grid, rho), zero, identity_metric(grid)
