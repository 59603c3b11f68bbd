# decompose.py - rank-one decompositions of symmetric 2x2 matrices

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from corrugation.errors import (
    JacobianSingular,
    NoConvergence,
    NotDecomposable,
    PreconditionError,
    UnsupportedDimension,
)

log = logging.getLogger(__name__)

NEWTON_MAX_STEPS = 25
NEWTON_TOL = 1e-10
MAX_HALVINGS = 10


def sym_to_vec(P: np.ndarray) -> np.ndarray:
    """(..., 2, 2) symmetric -> (..., 3) as (xx, xy, yy)."""
    P = np.asarray(P, dtype=float)
    return np.stack([P[..., 0, 0], 0.5 * (P[..., 0, 1] + P[..., 1, 0]), P[..., 1, 1]], axis=-1)


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1]
    out[..., 1, 1] = v[..., 2]
    return out


def frobenius(v: np.ndarray) -> np.ndarray:
    """Frobenius norm of symmetric matrices stored as (xx, xy, yy)."""
    return np.sqrt(v[..., 0] ** 2 + 2.0 * v[..., 1] ** 2 + v[..., 2] ** 2)


@dataclass(frozen=True)
class DirectionSet:
    """Unit directions nu_k with frame matrix rows vec(nu_k ⊗ nu_k)."""

    vectors: np.ndarray
    frame_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=float)
        norms = np.linalg.norm(vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12):
            raise PreconditionError("directions must be unit vectors")
        M = sym_to_vec(np.einsum("ki,kj->kij", vectors, vectors))
        if abs(np.linalg.det(M)) < 1e-12:
            raise PreconditionError("rank-one frame {nu_k ⊗ nu_k} is linearly dependent")
        vectors.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "frame_matrix", M)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def outer(self) -> np.ndarray:
        """(n*, 2, 2) stack of nu_k ⊗ nu_k."""
        return np.einsum("ki,kj->kij", self.vectors, self.vectors)


def standard_directions(n: int = 2) -> DirectionSet:
    """Equiangular frame at 0, pi/3, 2pi/3; sum nu_k ⊗ nu_k = (3/2) Id."""
    if n != 2:
        raise UnsupportedDimension(f"only n = 2 charts are supported, got n = {n}")
    angles = np.array([0.0, np.pi / 3, 2 * np.pi / 3])
    return DirectionSet(np.stack([np.cos(angles), np.sin(angles)], axis=1))


def decompose_spd(P: np.ndarray, dirs: DirectionSet) -> np.ndarray:
    """Coefficients a_k^2 with P = sum a_k^2 nu_k ⊗ nu_k."""
    coeffs = linalg.solve(dirs.frame_matrix.T, sym_to_vec(P))
    if np.any(coeffs <= 0):
        k = int(np.argmin(coeffs))
        raise NotDecomposable(
            f"coefficient a_{k + 1}^2 = {coeffs[k]:.6g} is not positive",
            coefficients=coeffs.tolist(),
        )
    return coeffs


def decompose_field(P: np.ndarray, dirs: DirectionSet, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Nodewise decompose_spd for a (n1, n2, 2, 2) array; returns (n1, n2, n*)."""
    inv = linalg.inv(dirs.frame_matrix.T)
    coeffs = np.einsum("ij,...j->...i", inv, sym_to_vec(P))
    check = coeffs.min(axis=-1) <= 0
    if mask is not None:
        check &= mask
    if np.any(check):
        node = np.unravel_index(int(np.argmax(check)), check.shape)
        raise NotDecomposable(
            "matrix field leaves the positivity radius of the direction frame",
            node=node,
            coefficients=coeffs[node].tolist(),
        )
    return coeffs


@dataclass(frozen=True)
class PerturbationData:
    """Lambda_i as (n*, 2, 2), Theta_ij as (n*, n*, 2, 2), and the budget sigma0."""

    Lambda: np.ndarray
    Theta: np.ndarray
    sigma0: float = 0.1

    def budget(self, P: np.ndarray, P0: np.ndarray) -> float:
        total = frobenius(sym_to_vec(np.asarray(P) - np.asarray(P0)))
        total = total + frobenius(sym_to_vec(self.Lambda)).sum()
        total = total + frobenius(sym_to_vec(self.Theta)).sum()
        return float(total)


def _residual(a, target, N, Lam, Th):
    """sum a_k^2 N_k + sum a_k Lam_k + sum a_i a_j Th_ij - target (vectors over the last axis)."""
    r = np.einsum("...k,...kc->...c", a * a, N)
    r = r + np.einsum("...k,...kc->...c", a, Lam)
    r = r + np.einsum("...i,...j,...ijc->...c", a, a, Th)
    return r - target


def _jacobian(a, N, Lam, Th):
    """d residual_c / d a_k, returned as (..., 3, n*)."""
    J = 2.0 * a[..., :, None] * N
    J = J + Lam
    J = J + np.einsum("...j,...kjc->...kc", a, Th) + np.einsum("...j,...jkc->...kc", a, Th)
    return np.swapaxes(J, -1, -2)


def newton_solve(
    target: np.ndarray,
    N: np.ndarray,
    Lam: np.ndarray,
    Th: np.ndarray,
    guess: np.ndarray,
    max_steps: int = NEWTON_MAX_STEPS,
    tol: float = NEWTON_TOL,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Vectorized Newton for the perturbed decomposition.

    Shapes: target (B, 3), N (3, 3) shared rows, Lam (B, n*, 3), Th (B, n*, n*, 3),
    guess (B, n*). Returns (a, converged-mask, history of max residuals).
    Steps that would make some a_k non-positive are halved up to MAX_HALVINGS times.
    """
    a = np.array(guess, dtype=float)
    Nb = np.broadcast_to(N, a.shape[:-1] + N.shape)
    res = frobenius(_residual(a, target, Nb, Lam, Th))
    history = [float(res.max(initial=0.0))]
    J0 = _jacobian(a, Nb, Lam, Th)
    det0 = np.abs(np.linalg.det(J0))
    if np.any(det0 < 1e-14):
        raise JacobianSingular(
            "linearization at the seed is singular",
            node=(int(np.argmin(det0)),),
        )
    for _ in range(max_steps):
        active = res > tol
        if not np.any(active):
            break
        J = _jacobian(a[active], Nb[active], Lam[active], Th[active])
        F = _residual(a[active], target[active], Nb[active], Lam[active], Th[active])
        try:
            step = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise JacobianSingular(f"Newton linearization became singular: {exc}")
        t = np.ones(step.shape[0])
        trial = a[active] + t[:, None] * step
        for _h in range(MAX_HALVINGS):
            bad = np.any(trial <= 0, axis=-1)
            if not np.any(bad):
                break
            t[bad] *= 0.5
            trial = a[active] + t[:, None] * step
        if np.any(np.any(trial <= 0, axis=-1)):
            idx = int(np.flatnonzero(active)[np.argmax(np.any(trial <= 0, axis=-1))])
            raise NotDecomposable("Newton step cannot keep the coefficients positive", node=(idx,))
        a[active] = trial
        res[active] = frobenius(_residual(trial, target[active], Nb[active], Lam[active], Th[active]))
        history.append(float(res.max(initial=0.0)))
    converged = res <= tol
    return a, converged, history


def perturbed_decompose(
    P: np.ndarray,
    pert: PerturbationData,
    dirs: DirectionSet,
    guess: Optional[np.ndarray] = None,
    P0: Optional[np.ndarray] = None,
    return_history: bool = False,
):
    """Solve P = sum a_i^2 nu_i⊗nu_i + sum a_i Lambda_i + sum a_i a_j Theta_ij for a > 0."""
    P = np.asarray(P, dtype=float)
    P0 = P if P0 is None else np.asarray(P0, dtype=float)
    budget = pert.budget(P, P0)
    if budget >= pert.sigma0:
        raise PreconditionError(
            f"perturbation budget {budget:.4g} is not below sigma0 = {pert.sigma0}",
            budget=budget,
        )
    if guess is None:
        guess = np.sqrt(decompose_spd(P, dirs))
    guess = np.asarray(guess, dtype=float)
    if np.any(guess <= 0):
        raise PreconditionError("Newton seed must have positive coefficients")
    a, converged, history = newton_solve(
        sym_to_vec(P)[None],
        dirs.frame_matrix,
        sym_to_vec(pert.Lambda)[None],
        sym_to_vec(pert.Theta)[None],
        guess[None],
    )
    if not converged[0]:
        raise NoConvergence(
            f"no convergence after {NEWTON_MAX_STEPS} Newton steps (residual {history[-1]:.3e})",
            residual=history[-1],
        )
    log.debug("✅ [Decompose] converged in %d steps", len(history) - 1)
    if return_history:
        return a[0], history
    return a[0]


def perturbed_decompose_field(
    P: np.ndarray,
    P0: np.ndarray,
    Lambda: np.ndarray,
    Theta: np.ndarray,
    dirs: DirectionSet,
    sigma0: float,
    mask: np.ndarray,
) -> Tuple[np.ndarray, int]:
    """Nodewise perturbed decomposition on `mask`.

    P, P0: (n1, n2, 2, 2); Lambda: (n1, n2, n*, 2, 2); Theta: (n1, n2, n*, n*, 2, 2).
    Returns (a of shape (n1, n2, n*) with zeros off the mask, Newton steps used).
    A node over budget raises NotDecomposable carrying that node.
    """
    grid_shape = P.shape[:2]
    nstar = dirs.count
    a = np.zeros(grid_shape + (nstar,))
    if not np.any(mask):
        return a, 0
    Pv = sym_to_vec(P)[mask]
    P0v = sym_to_vec(P0)[mask]
    Lv = sym_to_vec(Lambda)[mask]
    Tv = sym_to_vec(Theta)[mask]
    budget = frobenius(Pv - P0v) + frobenius(Lv).sum(axis=-1) + frobenius(Tv).sum(axis=(-1, -2))
    if np.any(budget >= sigma0):
        worst = int(np.argmax(budget))
        node = tuple(int(c[worst]) for c in np.nonzero(mask))
        raise NotDecomposable(
            f"perturbation budget {budget[worst]:.4g} exceeds sigma0 = {sigma0}; raise lambda or C0",
            node=node,
            budget=float(budget[worst]),
        )
    inv = linalg.inv(dirs.frame_matrix.T)
    seed_sq = np.einsum("ij,bj->bi", inv, Pv)
    if np.any(seed_sq <= 0):
        worst = int(np.argmin(seed_sq.min(axis=-1)))
        node = tuple(int(c[worst]) for c in np.nonzero(mask))
        raise NotDecomposable("unperturbed seed is not positive", node=node)
    sol, converged, history = newton_solve(Pv, dirs.frame_matrix, Lv, Tv, np.sqrt(seed_sq))
    if not np.all(converged):
        worst = int(np.argmin(converged))
        node = tuple(int(c[worst]) for c in np.nonzero(mask))
        raise NoConvergence(
            f"no convergence after {NEWTON_MAX_STEPS} Newton steps",
            node=node,
            residual=history[-1],
        )
    a[mask] = sol
    return a, len(history) - 1
