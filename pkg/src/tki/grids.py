"""Uniform Brillouin-zone grids on T^d with inversion bookkeeping.

Nodes are k_a = -pi + 2 pi n_a / N_a.  The momentum inversion k -> -k acts
on indices as n -> (N - n) mod N per axis; its fixed nodes (n_a in {0, N/2})
are the time-reversal invariant momenta.  The fundamental domain used by the
localisation descent is the index half-space n_a in [N/2, N-1] on a chosen
axis, i.e. k_a in [0, pi].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BZGrid:
    dim: int
    sizes: tuple
    fdomain_axis: int = field(default=-1)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"unsupported dimension {self.dim}")
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) != self.dim:
            raise GridError("sizes must have one entry per axis")
        for n in sizes:
            if n < 4 or n % 2:
                raise GridError("grid sizes must be even and >= 4")
        object.__setattr__(self, "sizes", sizes)
        ax = self.fdomain_axis % self.dim
        object.__setattr__(self, "fdomain_axis", ax)

    @classmethod
    def cubic(cls, dim: int, n: int) -> "BZGrid":
        return cls(dim, (n,) * dim)

    @property
    def spacings(self):
        return tuple(2 * np.pi / n for n in self.sizes)

    def axis_nodes(self, a: int) -> np.ndarray:
        n = self.sizes[a]
        return -np.pi + 2 * np.pi * np.arange(n) / n

    def node_mesh(self) -> np.ndarray:
        """Array of shape sizes + (dim,) with the momentum of every node."""
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def involution_indices(self):
        """Per-axis index arrays realizing n -> (N - n) mod N."""
        return np.ix_(*[(-np.arange(n)) % n for n in self.sizes])

    def involute(self, values: np.ndarray) -> np.ndarray:
        """Pull a node-indexed array back along the inversion."""
        return values[self.involution_indices()]

    @property
    def trims(self):
        """The 2^dim inversion-fixed node index tuples."""
        return [t for t in product(*[(0, n // 2) for n in self.sizes])]

    def trim_momentum(self, t) -> np.ndarray:
        return np.array([self.axis_nodes(a)[t[a]] for a in range(self.dim)])

    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))
