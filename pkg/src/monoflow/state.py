"""Snapshot of a multi-species system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DensityField


@dataclass
class SystemState:
    """State of all species at time ``t``.

    Each entry of ``species`` is either a :class:`DensityField` (grid
    species) or a 1-d array holding the location of a point-mass
    (Dirac) species.  ``cache`` memoises quantities shared by several
    terms, such as allocation weights; states are treated as immutable.
    """

    t: float
    species: list
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.species = [s if isinstance(s, DensityField) else np.atleast_1d(np.asarray(s, dtype=float))
                        for s in self.species]

    @property
    def n(self) -> int:
        return len(self.species)

    def is_grid(self, i: int) -> bool:
        return isinstance(self.species[i], DensityField)

    @property
    def grid_species(self) -> list[DensityField]:
        return [s for s in self.species if isinstance(s, DensityField)]

    @property
    def dirac_species(self) -> list[np.ndarray]:
        return [s for s in self.species if not isinstance(s, DensityField)]

    def dim(self, i: int) -> int:
        s = self.species[i]
        return s.grid.dim if isinstance(s, DensityField) else s.shape[0]

    def copy(self) -> "SystemState":
        return SystemState(self.t, [s.copy() for s in self.species])
