"""Channel-independence metrics on activation matrices.

The channel independence of channel i is the drop in nuclear norm of the
matricized feature maps when row i is zeroed. Zeroing a row leaves the same
nonzero singular values as deleting it, so all masked norms here are computed
on the row-deleted submatrix, which is the cheaper SVD.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import CombinatorialGuardError, MaskError, SvdFailureError
from .tensor_io import ActivationMatrix

# Negative CI within this fraction of ||A||_* is floating-point noise and is
# clamped to zero; anything beyond it means the SVD went wrong.
NEG_TOL_FACTOR = 1e-9

# Default relative threshold on singular values when counting rank.
DEFAULT_RANK_REL_TOL = 1e-6

BRUTE_FORCE_MAX_ROWS = 20
BRUTE_FORCE_MAX_COMBINATIONS = 10**6


@dataclass(frozen=True)
class RowMask:
    """A set of rows to zero out, never all of them."""

    size: int
    zeroed_rows: tuple[int, ...]

    def __post_init__(self):
        rows = tuple(sorted(set(int(r) for r in self.zeroed_rows)))
        if len(rows) != len(self.zeroed_rows):
            raise MaskError(f"duplicate row indices in {self.zeroed_rows}")
        if rows and (rows[0] < 0 or rows[-1] >= self.size):
            raise MaskError(f"row indices {rows} out of range for size {self.size}")
        if len(rows) >= self.size:
            raise MaskError(f"mask would zero all {self.size} rows")
        object.__setattr__(self, "zeroed_rows", rows)

    @classmethod
    def of(cls, size: int, rows) -> "RowMask":
        return cls(size, tuple(rows))


@dataclass(frozen=True)
class CIValue:
    """Channel independence of a single channel, in activation units."""

    channel: int
    value: float


def _singular_values(a: np.ndarray, layer_id: str) -> np.ndarray:
    # Orient so the SVD works on the smaller Gram dimension.
    if a.shape[0] > a.shape[1]:
        a = a.T
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailureError(f"layer {layer_id!r}: SVD did not converge: {exc}") from exc


def _nuc(a: np.ndarray, layer_id: str) -> float:
    return float(_singular_values(a, layer_id).sum())


def nuclear_norm(m: ActivationMatrix) -> float:
    """Sum of singular values of the activation matrix."""
    return _nuc(m.data, m.layer_id)


def _clamp_ci(raw: float, full_norm: float, layer_id: str) -> float:
    if raw < -NEG_TOL_FACTOR * max(full_norm, 1.0):
        raise SvdFailureError(
            f"layer {layer_id!r}: nuclear-norm change {raw:g} is negative beyond "
            f"tolerance ({NEG_TOL_FACTOR:g} * ||A||_*); SVD result is not trustworthy"
        )
    return max(raw, 0.0)


def ci_single(m: ActivationMatrix, channel: int) -> CIValue:
    """Nuclear-norm drop when one channel's row is removed."""
    if not 0 <= channel < m.rows:
        raise MaskError(f"channel {channel} out of range for {m.rows} rows")
    if m.rows < 2:
        raise MaskError("need at least 2 rows to remove one")
    if not m.data[channel].any():
        # Removing an all-zero row provably leaves the spectrum unchanged.
        return CIValue(channel, 0.0)
    full = _nuc(m.data, m.layer_id)
    masked = _nuc(np.delete(m.data, channel, axis=0), m.layer_id)
    return CIValue(channel, _clamp_ci(full - masked, full, m.layer_id))


def ci_all(m: ActivationMatrix) -> list[CIValue]:
    """CI of every channel, sharing one full-matrix SVD across channels."""
    if m.rows < 2:
        raise MaskError("need at least 2 rows")
    full = _nuc(m.data, m.layer_id)
    out = []
    for ch in range(m.rows):
        if not m.data[ch].any():
            out.append(CIValue(ch, 0.0))
            continue
        masked = _nuc(np.delete(m.data, ch, axis=0), m.layer_id)
        out.append(CIValue(ch, _clamp_ci(full - masked, full, m.layer_id)))
    return out


def ci_combined_exact(m: ActivationMatrix, channels: RowMask) -> float:
    """Nuclear-norm drop when all listed rows are zeroed simultaneously."""
    if channels.size != m.rows:
        raise MaskError(f"mask size {channels.size} != matrix rows {m.rows}")
    if not channels.zeroed_rows:
        return 0.0
    full = _nuc(m.data, m.layer_id)
    keep = [i for i in range(m.rows) if i not in set(channels.zeroed_rows)]
    masked = _nuc(m.data[keep], m.layer_id)
    return _clamp_ci(full - masked, full, m.layer_id)


def ci_combined_approx(scores: list[CIValue], channels: set[int]) -> float:
    """Sum of individual CI values over the listed channels."""
    by_channel = {s.channel: s.value for s in scores}
    missing = set(channels) - set(by_channel)
    if missing:
        raise MaskError(f"channels {sorted(missing)} not present in scores")
    return float(sum(by_channel[c] for c in channels))


def rank_change(m: ActivationMatrix, channel: int, rel_tol: float = DEFAULT_RANK_REL_TOL) -> int:
    """Rank drop when one row is removed.

    Both ranks count singular values above ``rel_tol * sigma_max(A)`` where A is
    the full matrix, so the two counts share one threshold.
    """
    if not 0 <= channel < m.rows:
        raise MaskError(f"channel {channel} out of range for {m.rows} rows")
    if rel_tol <= 0:
        raise MaskError("rel_tol must be positive")
    sv_full = _singular_values(m.data, m.layer_id)
    smax = float(sv_full[0]) if sv_full.size else 0.0
    if smax == 0.0:
        return 0
    thresh = rel_tol * smax
    sv_sub = _singular_values(np.delete(m.data, channel, axis=0), m.layer_id)
    return int((sv_full > thresh).sum()) - int((sv_sub > thresh).sum())


def brute_force_min_subset(m: ActivationMatrix, prune_count: int) -> tuple[set[int], float]:
    """Exhaustively find the prune_count rows whose joint removal changes the
    nuclear norm least. Ties go to the lexicographically smallest index set.
    """
    c = m.rows
    if not 0 <= prune_count < c:
        raise MaskError(f"prune_count {prune_count} out of range for {c} rows")
    if c > BRUTE_FORCE_MAX_ROWS:
        raise CombinatorialGuardError(
            f"{c} rows exceeds the brute-force bound of {BRUTE_FORCE_MAX_ROWS} rows"
        )
    n_comb = comb(c, prune_count)
    if n_comb > BRUTE_FORCE_MAX_COMBINATIONS:
        raise CombinatorialGuardError(
            f"C({c},{prune_count}) = {n_comb} exceeds the brute-force bound of "
            f"{BRUTE_FORCE_MAX_COMBINATIONS} combinations"
        )
    if prune_count == 0:
        return set(), 0.0

    full = _nuc(m.data, m.layer_id)
    # Replace only on improvement beyond a tie tolerance; lexicographic
    # enumeration order then makes the first near-minimum win ties.
    tie_tol = 1e-12 * max(full, 1.0)
    best_subset: tuple[int, ...] | None = None
    best_value = np.inf
    all_rows = np.arange(c)
    for subset in combinations(range(c), prune_count):
        keep = np.setdiff1d(all_rows, subset, assume_unique=True)
        value = _clamp_ci(full - _nuc(m.data[keep], m.layer_id), full, m.layer_id)
        if value < best_value - tie_tol:
            best_value = value
            best_subset = subset
    assert best_subset is not None
    return set(best_subset), float(best_value)
