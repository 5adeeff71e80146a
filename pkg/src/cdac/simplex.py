"""Regular lattice on the probability simplex.

Cells are the points ``a / n`` with ``a`` a vector of ``k`` nonnegative
integers summing to ``n``. They are enumerated in lexicographic order of
``a`` and ranked with the combinatorial number system, so index lookups
never touch floating point.

Interpolation uses the Freudenthal triangulation expressed in cumulative
coordinates ``z_i = sum_{j >= i} a_j``. For ``k = 3`` this is the familiar
split of the simplex into "up" and "down" triangles, which is invariant
under every relabelling of the vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

# Tolerance for treating a query as lying on the simplex.
SIMPLEX_TOL = 1e-9
# Rounding slack used by nearest-point lookup.
_SNAP = 1e-10
# Cumulative coordinates within this many ulps (of n) of an integer are snapped.
_SNAP_ULPS = 64


def check_belief(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate and renormalize a belief vector (or a stack of them)."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] < 2:
        raise ValueError("a belief needs at least two locations")
    if not np.all(np.isfinite(p)):
        raise ValueError("belief contains non-finite entries")
    if np.any(p < -tol):
        raise ValueError(f"belief has negative entries: {p.min()!r}")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > tol):
        raise ValueError("belief does not sum to one")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BarycentricWeights:
    indices: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """All lattice points of the ``k``-simplex with ``n`` subdivisions per edge."""

    k: int
    n: int
    lattice: np.ndarray = field(repr=False)
    _binom: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.lattice.shape[0]

    @property
    def points(self) -> np.ndarray:
        """Cell coordinates as beliefs, shape ``(size, k)``."""
        return self.lattice / self.n

    def index(self, counts) -> np.ndarray | int:
        """Rank of lattice count vectors; accepts ``(k,)`` or ``(..., k)``."""
        a = np.asarray(counts, dtype=np.int64)
        scalar = a.ndim == 1
        a = np.atleast_2d(a)
        if a.shape[-1] != self.k:
            raise ValueError("count vector has the wrong length")
        if np.any(a < 0) or np.any(a.sum(axis=-1) != self.n):
            raise ValueError("not a lattice point of this grid")
        rank = np.zeros(a.shape[0], dtype=np.int64)
        remaining = np.full(a.shape[0], self.n, dtype=np.int64)
        b = self._binom
        for i in range(self.k - 1):
            parts = self.k - 1 - i
            # compositions of remaining - v into (parts + 1) pieces, v < a_i
            rank += b[remaining + parts, parts] - b[remaining - a[:, i] + parts, parts]
            remaining = remaining - a[:, i]
        return int(rank[0]) if scalar else rank

    def coords(self, index) -> np.ndarray:
        return self.lattice[index]

    def locate(self, p) -> BarycentricWeights:
        """Enclosing sub-simplex of ``p`` with zero-weight vertices dropped."""
        idx, w = self.locate_many(np.asarray(p, dtype=float)[None, :])
        keep = w[0] > 0.0
        return BarycentricWeights(indices=idx[0][keep], weights=w[0][keep])

    def locate_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`locate`; returns ``(indices, weights)``, each ``(m, k)``.

        Unused vertices carry weight exactly 0.
        """
        p = check_belief(points)
        if p.ndim != 2 or p.shape[1] != self.k:
            raise ValueError("expected an (m, k) array of beliefs")
        m, k = p.shape
        y = p * self.n
        z = np.cumsum(y[:, ::-1], axis=1)[:, ::-1]
        z[:, 0] = self.n
        near = np.rint(z)
        snap = _SNAP_ULPS * np.finfo(float).eps * self.n
        z = np.where(np.abs(z - near) < snap, near, z)
        base = np.floor(z)
        frac = z - base
        frac[:, 0] = 0.0
        base = base.astype(np.int64)
        # fractional parts of z_1..z_{k-1}, largest first (stable)
        order = np.argsort(-frac[:, 1:], axis=1, kind="stable") + 1
        sorted_frac = np.take_along_axis(frac, order, axis=1)
        weights = np.empty((m, k))
        weights[:, 0] = 1.0 - sorted_frac[:, 0]
        weights[:, 1:-1] = sorted_frac[:, :-1] - sorted_frac[:, 1:]
        weights[:, -1] = sorted_frac[:, -1]
        verts = np.empty((m, k, k), dtype=np.int64)
        verts[:, 0] = base
        rows = np.arange(m)
        for step in range(1, k):
            verts[:, step] = verts[:, step - 1]
            verts[rows, step, order[:, step - 1]] += 1
        counts = np.empty_like(verts)
        counts[..., :-1] = verts[..., :-1] - verts[..., 1:]
        counts[..., -1] = verts[..., -1]
        # zero-weight vertices may fall outside the simplex; park them on vertex 0
        unused = weights <= 0.0
        weights[unused] = 0.0
        counts[unused] = counts[:, :1].repeat(k, axis=1)[unused]
        indices = self.index(counts.reshape(-1, k)).reshape(m, k)
        return indices, weights

    def interpolate(self, values, p) -> float:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise ValueError("need one value per cell")
        loc = self.locate(p)
        return float(loc.weights @ values[loc.indices])

    def interpolate_many(self, values, points) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise ValueError("need one value per cell")
        idx, w = self.locate_many(points)
        return np.einsum("mk,mk...->m...", w, values[idx])

    def nearest(self, points) -> np.ndarray:
        """Index of the closest lattice point (largest-remainder rounding).

        Categorical quantities such as actions are looked up here rather
        than interpolated.
        """
        p = check_belief(points)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        y = p * self.n
        base = np.floor(y + _SNAP)
        deficit = (self.n - base.sum(axis=1)).astype(np.int64)
        order = np.argsort(-(y - base), axis=1, kind="stable")
        bump = np.arange(self.k)[None, :] < deficit[:, None]
        counts = base.astype(np.int64)
        np.put_along_axis(
            counts, order, np.take_along_axis(counts, order, axis=1) + bump, axis=1
        )
        idx = self.index(counts)
        return int(idx[0]) if single else idx

    def permutation(self, sigma: Sequence[int]) -> np.ndarray:
        """Index map for relabelling: location ``i`` becomes ``sigma[i]``.

        Returns ``perm`` with ``perm[c]`` the index of cell ``c`` after the
        relabelling, i.e. coordinates ``q[sigma[i]] = a[i]``.
        """
        sigma = _check_perm(sigma, self.k)
        moved = np.empty_like(self.lattice)
        moved[:, sigma] = self.lattice
        return self.index(moved)

    def permute_cell(self, cell: int, sigma: Sequence[int]) -> int:
        if not 0 <= cell < self.size:
            raise IndexError(cell)
        sigma = _check_perm(sigma, self.k)
        moved = np.empty(self.k, dtype=np.int64)
        moved[sigma] = self.lattice[cell]
        return self.index(moved)

    def vertex(self, i: int) -> int:
        a = np.zeros(self.k, dtype=np.int64)
        a[i] = self.n
        return self.index(a)


def _check_perm(sigma, k: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != (k,) or sorted(sigma.tolist()) != list(range(k)):
        raise ValueError(f"not a permutation of {k} labels: {sigma!r}")
    return sigma


def cell_count(k: int, n: int) -> int:
    return comb(n + k - 1, k - 1)


def _compositions(n: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    blocks = []
    for first in range(n + 1):
        rest = _compositions(n - first, k - 1)
        blocks.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(blocks)


def enumerate_cells(k: int, n: int) -> SimplexGrid:
    if k < 2:
        raise ValueError("need k >= 2 locations")
    if n < 1:
        raise ValueError("need n >= 1 subdivisions")
    lattice = _compositions(n, k)
    lattice.setflags(write=False)
    top = n + k + 1
    binom = np.zeros((top, k + 1), dtype=np.int64)
    for r in range(top):
        for c in range(min(r, k) + 1):
            binom[r, c] = comb(r, c)
    return SimplexGrid(k=k, n=n, lattice=lattice, _binom=binom)


def sample_simplex(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    """``m`` points uniform on the simplex (flat Dirichlet via exponentials)."""
    e = rng.standard_exponential((m, k))
    return e / e.sum(axis=1, keepdims=True)
