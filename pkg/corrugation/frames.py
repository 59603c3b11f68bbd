# frames.py - orthonormal normal fields along a discrete immersion

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from corrugation.errors import DegenerateSeed, FailsMetricBounds, PreconditionError
from corrugation.fields import MapField, jacobian_of

log = logging.getLogger(__name__)

RANK_TOL = 1e-8
CONTINUITY_LIMIT = 0.5


class FrameQuality(BaseModel):
    orthogonality_defect: float = Field(description="max |<zeta_i, zeta_j> - delta_ij| over nodes")
    tangency_defect: float = Field(description="max |dv^T zeta_i| over nodes")
    continuity_defect: float = Field(description="max neighbour-node deviation of any frame vector")
    seeds: str = Field(description="'coordinate', 'given' or 'random'")


@dataclass(frozen=True, eq=False)
class NormalFrame:
    """Frame vectors as an array of shape (n1, n2, count, m)."""

    vectors: np.ndarray
    source: MapField
    quality: FrameQuality

    @property
    def count(self) -> int:
        return self.vectors.shape[2]

    def member(self, i: int) -> np.ndarray:
        return self.vectors[:, :, i, :]


def _check_metric(g: np.ndarray, gamma: Optional[float]) -> None:
    eig = np.linalg.eigvalsh(g)
    lo, hi = eig[..., 0], eig[..., -1]
    if gamma is None:
        bad = lo <= 1e-12
    else:
        bad = (lo < 1.0 / gamma) | (hi > gamma)
    if np.any(bad):
        node = np.unravel_index(int(np.argmax(bad)), bad.shape)
        raise FailsMetricBounds(
            f"pullback metric eigenvalues [{lo[node]:.4g}, {hi[node]:.4g}] violate the pinch bound gamma={gamma}",
            node=node,
        )


def _tangent_part(w: np.ndarray, J: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    coeff = np.einsum("...jl,...kl,...k->...j", ginv, J, w)
    return np.einsum("...kj,...j->...k", J, coeff)


def _project_and_orthonormalize(J: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """nu_i = xi_i - sum_j R_ij d_j v with R = B (dv^T dv)^{-1}, then Gram-Schmidt.

    Seeds are (count, m) constants or (n1, n2, count, m) per-node vectors.
    """
    g = np.einsum("...ki,...kj->...ij", J, J)
    ginv = np.linalg.inv(g)
    B = np.einsum("...ck,...kj->...cj", seeds, J)
    R = np.einsum("...cj,...jl->...cl", B, ginv)
    cand = seeds - np.einsum("...cl,...kl->...ck", R, J)
    out = np.empty_like(cand)
    for i in range(cand.shape[2]):
        w = cand[:, :, i, :]
        # two passes keep the result orthogonal to machine precision
        for _pass in range(2):
            for j in range(i):
                zj = out[:, :, j, :]
                w = w - np.sum(w * zj, axis=-1, keepdims=True) * zj
            w = w - _tangent_part(w, J, ginv)
        norm = np.linalg.norm(w, axis=-1)
        if np.any(norm < RANK_TOL):
            node = np.unravel_index(int(np.argmin(norm)), norm.shape)
            raise DegenerateSeed(f"projected seed {i} lost rank", node=node, member=i)
        out[:, :, i, :] = w / norm[..., None]
    return out


def _continuity(vectors: np.ndarray, periodic) -> float:
    worst = 0.0
    for axis in range(2):
        if periodic[axis]:
            d = np.roll(vectors, -1, axis=axis) - vectors
        else:
            d = np.diff(vectors, axis=axis)
        if d.size:
            worst = max(worst, float(np.linalg.norm(d, axis=-1).max()))
    return worst


def normal_frame(
    v: MapField,
    count: int,
    seeds: Optional[np.ndarray] = None,
    gamma: Optional[float] = None,
    rng_seed: int = 0,
) -> NormalFrame:
    """`count` orthonormal fields normal to the image of v.

    Default seeds are the last `count` coordinate directions; if they lose rank a
    random orthonormal draw from a fixed seed is tried once. Explicit seeds, constant
    or per node, get no fallback.
    """
    m = v.target_dim
    if count > m - 2:
        raise PreconditionError(f"at most m - n = {m - 2} normals exist, asked for {count}")
    J = jacobian_of(v)
    g = np.einsum("...ki,...kj->...ij", J, J)
    _check_metric(g, gamma)

    if seeds is not None:
        used = "given"
        vectors = _project_and_orthonormalize(J, np.asarray(seeds, dtype=float))
    else:
        used = "coordinate"
        try:
            vectors = _project_and_orthonormalize(J, np.eye(m)[m - count:])
        except DegenerateSeed as exc:
            log.warning("⚠️ [Frames] coordinate seeds degenerate at %s, retrying with a random draw", exc.node)
            rng = np.random.default_rng(rng_seed)
            q, _ = np.linalg.qr(rng.standard_normal((m, m)))
            used = "random"
            vectors = _project_and_orthonormalize(J, q[:, :count].T)

    gram = np.einsum("...ik,...jk->...ij", vectors, vectors)
    ortho = float(np.abs(gram - np.eye(count)).max(initial=0.0))
    tang = float(np.abs(np.einsum("...ck,...kj->...cj", vectors, J)).max(initial=0.0))
    cont = _continuity(vectors, v.grid.periodic)
    if cont >= CONTINUITY_LIMIT:
        raise DegenerateSeed(f"frame jumps by {cont:.3f} between neighbouring nodes")
    quality = FrameQuality(orthogonality_defect=ortho, tangency_defect=tang, continuity_defect=cont, seeds=used)
    return NormalFrame(vectors=vectors, source=v, quality=quality)
