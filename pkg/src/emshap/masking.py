"""Bernoulli feature masking and the linearly increasing masking-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatchError


@dataclass(frozen=True)
class MaskSchedule:
    """Masking probability that grows by ``delta`` per epoch up to ``zeta_max``."""

    zeta_min: float
    zeta_max: float
    delta: float
    current_epoch: int = 0

    def __post_init__(self):
        if not 0.0 <= self.zeta_min <= self.zeta_max <= 1.0:
            raise ValueError(
                f"need 0 <= zeta_min <= zeta_max <= 1, got {self.zeta_min}, {self.zeta_max}"
            )
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    @classmethod
    def for_epochs(cls, zeta_min: float, zeta_max: float, epochs: int,
                   delta_override: float | None = None) -> "MaskSchedule":
        """Default increment spans [zeta_min, zeta_max] over the configured epochs."""
        if delta_override is not None:
            delta = delta_override
        elif epochs > 1:
            delta = (zeta_max - zeta_min) / (epochs - 1)
        else:
            delta = 0.0
        return cls(zeta_min, zeta_max, delta)

    @property
    def zeta(self) -> float:
        return min(self.zeta_min + self.current_epoch * self.delta, self.zeta_max)


def advance_schedule(sched: MaskSchedule) -> MaskSchedule:
    return replace(sched, current_epoch=sched.current_epoch + 1)


@dataclass(frozen=True)
class Coalition:
    """Partition of feature indices into observed (S) and masked (S-bar) sets.

    ``mask`` is a boolean vector over the |D| features; True marks a masked
    feature. Masked indices are always reported in ascending order, which is
    the canonical conditioning order used everywhere in this package.
    """

    mask: tuple[bool, ...]

    @classmethod
    def from_mask(cls, mask) -> "Coalition":
        return cls(tuple(bool(b) for b in mask))

    @classmethod
    def from_masked_indices(cls, d: int, masked) -> "Coalition":
        mask = np.zeros(d, dtype=bool)
        mask[list(masked)] = True
        return cls.from_mask(mask)

    @classmethod
    def from_observed_indices(cls, d: int, observed) -> "Coalition":
        mask = np.ones(d, dtype=bool)
        mask[list(observed)] = False
        return cls.from_mask(mask)

    @property
    def d(self) -> int:
        return len(self.mask)

    @property
    def mask_array(self) -> np.ndarray:
        return np.asarray(self.mask, dtype=bool)

    @property
    def masked_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(self.mask_array)[0])

    @property
    def observed_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(~self.mask_array)[0])

    @property
    def n_masked(self) -> int:
        return sum(self.mask)


def draw_mask(d: int, zeta: float, rng: np.random.Generator,
              require_nonempty_masked: bool = False) -> Coalition:
    """Mask each of ``d`` features independently with probability ``zeta``.

    With ``require_nonempty_masked`` the draw is repeated until at least one
    feature is masked (a training step needs a nonempty masked set).
    """
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"need 0 <= zeta <= 1, got {zeta}")
    while True:
        mask = rng.random(d) < zeta
        if mask.any() or not require_nonempty_masked:
            return Coalition.from_mask(mask)


def apply_mask(x, c: Coalition) -> tuple[np.ndarray, np.ndarray]:
    """Split a sample into masked values (ascending index order) and observed values."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (c.d,):
        raise DimensionMismatchError("sample length", (c.d,), x.shape)
    m = c.mask_array
    return x[m].copy(), x[~m].copy()


def reassemble(c: Coalition, masked_values, observed_values) -> np.ndarray:
    """Inverse of :func:`apply_mask`."""
    out = np.empty(c.d, dtype=np.float64)
    out[c.mask_array] = np.asarray(masked_values, dtype=np.float64)
    out[~c.mask_array] = np.asarray(observed_values, dtype=np.float64)
    return out
