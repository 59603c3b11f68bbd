# fields.py - grids, tensor fields, finite differences and discrete norms

import logging
from dataclasses import dataclass, field
from typing import ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field as PydanticField

from corrugation.errors import PreconditionError, ResolutionError, UnsupportedDimension

log = logging.getLogger(__name__)

MIN_NODES = 16


# -------------------------
# Grid
# -------------------------
@dataclass(frozen=True)
class Grid:
    """Rectangular lattice over [0, L1] x [0, L2]; axis 0 is x1, axis 1 is x2."""

    extent: Tuple[float, float]
    resolution: Tuple[int, int]
    periodic: Tuple[bool, bool] = (False, False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.resolution

    @property
    def spacing(self) -> Tuple[float, float]:
        return tuple(
            L / n if p else L / (n - 1)
            for L, n, p in zip(self.extent, self.resolution, self.periodic)
        )

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def diameter(self) -> float:
        return float(np.hypot(*self.extent))

    def axis(self, i: int) -> np.ndarray:
        return np.arange(self.resolution[i]) * self.spacing[i]

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.axis(0), self.axis(1), indexing="ij"))

    def node(self, index: Tuple[int, int]) -> Tuple[float, float]:
        return tuple(float(index[i] * self.spacing[i]) for i in range(2))

    def header(self) -> dict:
        return {
            "extent": [float(v) for v in self.extent],
            "resolution": [int(v) for v in self.resolution],
            "periodic": [bool(v) for v in self.periodic],
        }


def _pair(value, cast):
    if np.ndim(value) == 0:
        return (cast(value), cast(value))
    if len(value) != 2:
        raise UnsupportedDimension(f"charts are two-dimensional, got {len(value)} entries")
    return (cast(value[0]), cast(value[1]))


def make_grid(extent, resolution, periodicity=False) -> Grid:
    """Build a chart grid. Scalars are broadcast to both axes."""
    ext = _pair(extent, float)
    res = _pair(resolution, int)
    per = _pair(periodicity, bool)
    if min(ext) <= 0:
        raise PreconditionError(f"extent sides must be positive, got {ext}")
    if min(res) < MIN_NODES:
        raise ResolutionError(f"resolution {res} below the minimum of {MIN_NODES} nodes per axis")
    return Grid(extent=ext, resolution=res, periodic=per)


# -------------------------
# Fields
# -------------------------
@dataclass(frozen=True, eq=False)
class TensorField:
    """Node values on a grid. Values are copied and frozen at construction."""

    grid: Grid
    values: np.ndarray
    kind: ClassVar[str] = "tensor"
    value_rank: ClassVar[Optional[int]] = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape[:2] != self.grid.shape:
            raise PreconditionError(
                f"{self.kind} values of shape {arr.shape} do not match grid {self.grid.shape}"
            )
        if self.value_rank is not None and arr.ndim != 2 + self.value_rank:
            raise PreconditionError(f"{self.kind} expects {self.value_rank} component axes, got {arr.ndim - 2}")
        arr = self._normalize(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def _normalize(self, arr: np.ndarray) -> np.ndarray:
        return arr

    @property
    def component_shape(self) -> Tuple[int, ...]:
        return self.values.shape[2:]

    def with_values(self, values: np.ndarray) -> "TensorField":
        return type(self)(self.grid, values)

    def pointwise_norm(self) -> np.ndarray:
        axes = tuple(range(2, self.values.ndim))
        if not axes:
            return np.abs(self.values)
        return np.sqrt(np.sum(self.values ** 2, axis=axes))


@dataclass(frozen=True, eq=False)
class ScalarField(TensorField):
    kind: ClassVar[str] = "scalar"
    value_rank: ClassVar[Optional[int]] = 0


@dataclass(frozen=True, eq=False)
class VectorField(TensorField):
    kind: ClassVar[str] = "vector"
    value_rank: ClassVar[Optional[int]] = 1


@dataclass(frozen=True, eq=False)
class JacobianField(TensorField):
    kind: ClassVar[str] = "jacobian"
    value_rank: ClassVar[Optional[int]] = 2


@dataclass(frozen=True, eq=False)
class HessianField(TensorField):
    kind: ClassVar[str] = "hessian"


@dataclass(frozen=True, eq=False)
class SymMatrixField(TensorField):
    kind: ClassVar[str] = "symmatrix"
    value_rank: ClassVar[Optional[int]] = 2

    def _normalize(self, arr):
        if arr.shape[-2:] != (2, 2):
            raise PreconditionError(f"symmetric 2x2 field expected, got component shape {arr.shape[2:]}")
        skew = np.abs(arr - np.swapaxes(arr, -1, -2)).max(initial=0.0)
        scale = 1.0 + np.abs(arr).max(initial=0.0)
        if skew > 1e-10 * scale:
            raise PreconditionError(f"matrix field is not symmetric (max skew {skew:.3e})")
        return 0.5 * (arr + np.swapaxes(arr, -1, -2))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)

    def trace(self) -> np.ndarray:
        return self.values[..., 0, 0] + self.values[..., 1, 1]


@dataclass(frozen=True, eq=False)
class MapField(TensorField):
    """Map into R^m. May carry an exact Jacobian (shape (n1, n2, m, 2))."""

    jacobian: Optional[np.ndarray] = field(default=None)
    kind: ClassVar[str] = "map"
    value_rank: ClassVar[Optional[int]] = 1

    def __post_init__(self):
        super().__post_init__()
        if self.jacobian is not None:
            jac = np.array(self.jacobian, dtype=float)
            if jac.shape != self.values.shape + (2,):
                raise PreconditionError(f"carried Jacobian shape {jac.shape} does not match map {self.values.shape}")
            jac.setflags(write=False)
            object.__setattr__(self, "jacobian", jac)

    @property
    def target_dim(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values: np.ndarray, jacobian: Optional[np.ndarray] = None) -> "MapField":
        return MapField(self.grid, values, jacobian)


Field = Union[ScalarField, VectorField, MapField, SymMatrixField, TensorField]


def identity_metric(grid: Grid, scale: Union[float, np.ndarray] = 1.0) -> SymMatrixField:
    values = np.zeros(grid.shape + (2, 2))
    values[..., 0, 0] = scale
    values[..., 1, 1] = scale
    return SymMatrixField(grid, values)


def flat_inclusion(grid: Grid, target_dim: int, scale: float = 1.0) -> MapField:
    """x -> scale * (x1, x2, 0, ..., 0) with its exact Jacobian."""
    X1, X2 = grid.mesh()
    values = np.zeros(grid.shape + (target_dim,))
    values[..., 0] = scale * X1
    values[..., 1] = scale * X2
    jac = np.zeros(grid.shape + (target_dim, 2))
    jac[..., 0, 0] = scale
    jac[..., 1, 1] = scale
    return MapField(grid, values, jac)


# -------------------------
# Finite differences
# -------------------------
def gradient_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order differences on each chart axis; the new last axis indexes the direction."""
    parts = []
    for axis in range(2):
        h = grid.spacing[axis]
        if grid.periodic[axis]:
            d = (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
        else:
            d = np.gradient(values, h, axis=axis, edge_order=2)
        parts.append(d)
    return np.stack(parts, axis=-1)


def differentiate(f: TensorField, order: int = 1) -> TensorField:
    """Discrete first or second derivative.

    A MapField that carries its Jacobian returns it for order 1 and differentiates
    it once for order 2. The derivative direction is always the last axis.
    """
    if order not in (1, 2):
        raise PreconditionError(f"order must be 1 or 2, got {order}")
    carried = getattr(f, "jacobian", None)
    first = carried if carried is not None else gradient_array(f.values, f.grid)
    if order == 1:
        if isinstance(f, ScalarField):
            return VectorField(f.grid, first)
        if isinstance(f, (MapField, VectorField)):
            return JacobianField(f.grid, first)
        return HessianField(f.grid, first)
    return HessianField(f.grid, gradient_array(first, f.grid))


def jacobian_of(u: MapField) -> np.ndarray:
    return u.jacobian if u.jacobian is not None else gradient_array(u.values, u.grid)


def pullback_metric(u: MapField) -> SymMatrixField:
    """(du^T du)_ij = sum_k d_i u^k d_j u^k."""
    if u.target_dim < 2:
        raise UnsupportedDimension(f"pullback needs at least 2 target dimensions, got {u.target_dim}")
    J = jacobian_of(u)
    return SymMatrixField(u.grid, np.einsum("...ki,...kj->...ij", J, J))


# -------------------------
# Norms
# -------------------------
def _sup(arr: np.ndarray) -> float:
    axes = tuple(range(2, arr.ndim))
    pointwise = np.sqrt(np.sum(arr ** 2, axis=axes)) if axes else np.abs(arr)
    return float(pointwise.max(initial=0.0))


def partial_sups(f: TensorField, order: int) -> List[float]:
    """sup-norms of every partial derivative of the given order."""
    if order == 0:
        return [_sup(f.values)]
    if order == 1:
        J = differentiate(f, 1).values
        return [_sup(J[..., j]) for j in range(2)]
    H = differentiate(f, 2).values
    return [_sup(H[..., 0, 0]), _sup(H[..., 0, 1]), _sup(H[..., 1, 1])]


def ck_norm(f: TensorField, k: int) -> float:
    """Cumulative C^k norm: sum over j <= k of the largest order-j partial."""
    if k not in (0, 1, 2):
        raise PreconditionError(f"C^k norms are provided for k <= 2, got {k}")
    return float(sum(max(partial_sups(f, j)) for j in range(k + 1)))


def default_radius_ladder(grid: Grid) -> List[float]:
    radii = []
    r = 2 * grid.h
    limit = 0.5 * min(grid.extent)
    while r <= limit:
        radii.append(r)
        r *= 2
    return radii


def _shifted_pairs(values: np.ndarray, grid: Grid, steps: Tuple[int, int]):
    """Differences f(x + s) - f(x) over every node pair at the given node offset."""
    a, b = values, values
    for axis, s in enumerate(steps):
        if s == 0:
            continue
        if grid.periodic[axis]:
            b = np.roll(b, -s, axis=axis)
        else:
            n = values.shape[axis]
            if abs(s) >= n:
                return None
            if s > 0:
                a = np.take(a, np.arange(0, n - s), axis=axis)
                b = np.take(b, np.arange(s, n), axis=axis)
            else:
                a = np.take(a, np.arange(-s, n), axis=axis)
                b = np.take(b, np.arange(0, n + s), axis=axis)
    return b - a


def modulus_at(values: np.ndarray, grid: Grid, radius: float) -> Tuple[float, List[Tuple[float, float]]]:
    """Largest |f(x)-f(y)| over pairs at about `radius` along axes and diagonals.

    Returns the modulus together with the (separation, max difference) samples.
    """
    samples = []
    s = [max(1, int(round(radius / grid.spacing[i]))) for i in range(2)]
    for steps in ((s[0], 0), (0, s[1]), (s[0], s[1]), (s[0], -s[1])):
        diff = _shifted_pairs(values, grid, steps)
        if diff is None or diff.size == 0:
            continue
        dist = float(np.hypot(steps[0] * grid.spacing[0], steps[1] * grid.spacing[1]))
        samples.append((dist, _sup(diff)))
    best = max((m for _, m in samples), default=0.0)
    return best, samples


def holder_seminorm(f: TensorField, theta: float, radius_ladder: Optional[Sequence[float]] = None) -> float:
    """Lower estimate of [f]_theta from node pairs at the ladder separations."""
    if not 0 < theta <= 1:
        raise PreconditionError(f"theta must lie in (0, 1], got {theta}")
    ladder = list(radius_ladder) if radius_ladder is not None else default_radius_ladder(f.grid)
    # spacing, not 2h: a ladder entry may sit on the 2h floor up to rounding
    if ladder and min(ladder) < 2 * min(f.grid.spacing) * (1 - 1e-9):
        raise ResolutionError(f"ladder radius {min(ladder):.3e} below 2h")
    best = 0.0
    for r in ladder:
        _, samples = modulus_at(f.values, f.grid, r)
        for dist, diff in samples:
            best = max(best, diff / dist ** theta)
    return float(best)


class NormReport(BaseModel):
    c0: float = PydanticField(description="sup norm")
    c1: float = PydanticField(description="cumulative C^1 norm")
    c2: float = PydanticField(description="cumulative C^2 norm")
    theta: float = PydanticField(description="Hölder exponent used for `holder`")
    holder: float = PydanticField(description="estimated Hölder seminorm of the field")
    radius_ladder: List[float] = PydanticField(description="pair separations sampled")


def norm_report(f: TensorField, theta: float = 0.5, radius_ladder: Optional[Sequence[float]] = None) -> NormReport:
    ladder = list(radius_ladder) if radius_ladder is not None else default_radius_ladder(f.grid)
    return NormReport(
        c0=ck_norm(f, 0),
        c1=ck_norm(f, 1),
        c2=ck_norm(f, 2),
        theta=theta,
        holder=holder_seminorm(f, theta, ladder),
        radius_ladder=ladder,
    )
