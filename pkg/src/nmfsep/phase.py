"""Phase handling for mask-based separation.

Three reconstruction routes, all operating on one mixture spectrogram:

* soft masking with the mixture phase (``wiener_separate``),
* iterative magnitude-constrained consistency projection (``griffin_lim``),
* the same iteration driven by a truncated local kernel instead of a full
  synthesis/analysis pass (``kernel_griffin_lim``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nmf import FactorPair
from .stft import (
    ConsistencyKernel,
    Spectrogram,
    apply_consistency_kernel,
    consistency_project,
    istft,
    spectral_energy,
)

_TINY = np.finfo(float).tiny

__all__ = [
    "SourceEstimateSet",
    "wiener_separate",
    "init_from_wiener",
    "griffin_lim",
    "kernel_griffin_lim",
    "magnitude_mismatch",
]


@dataclass
class SourceEstimateSet:
    """Per-source complex spectrograms, their time signals, and the mixture."""

    spectrograms: list
    signals: list
    mixture: Spectrogram

    def __post_init__(self):
        if len(self.spectrograms) != len(self.signals):
            raise ValueError("spectrogram/signal counts differ")
        for s in self.spectrograms:
            if s.plan != self.mixture.plan or s.signal_length != self.mixture.signal_length:
                raise ValueError("source spectrogram does not match the mixture's plan")

    @classmethod
    def from_spectrograms(cls, spectrograms, mixture: Spectrogram) -> "SourceEstimateSet":
        return cls(list(spectrograms), [istft(s) for s in spectrograms], mixture)

    @property
    def n_sources(self) -> int:
        return len(self.spectrograms)


def _group_numerators(factors: FactorPair, shape, grouping):
    F, T = shape
    if factors.W.shape[0] != F or factors.H.shape[1] != T:
        raise ValueError(
            f"factors of shape {factors.W.shape}x{factors.H.shape} do not "
            f"match the {shape} spectrogram"
        )
    K = factors.n_components
    if grouping is None:
        grouping = np.arange(K)
    grouping = np.asarray(grouping)
    if grouping.shape != (K,) or not np.issubdtype(grouping.dtype, np.integer):
        raise ValueError(f"grouping must assign an integer source to each of the {K} components")
    if grouping.min() < 0:
        raise ValueError("grouping contains negative source indices")
    n_sources = int(grouping.max()) + 1
    nums = np.zeros((n_sources, F, T))
    for k in range(K):
        nums[grouping[k]] += factors.component(k)
    if np.any(nums.sum(axis=(1, 2)) == 0):
        raise ValueError("grouping leaves a source with no components")
    return nums


def wiener_separate(mixture: Spectrogram, factors: FactorPair, grouping=None) -> SourceEstimateSet:
    """Split the mixture with soft masks built from grouped factor products.

    The masks are a partition of unity, so the per-source spectrograms sum
    back to the mixture (to rounding) and each keeps the mixture phase.
    """
    nums = _group_numerators(factors, mixture.data.shape, grouping)
    denom = np.maximum(nums.sum(axis=0), _TINY)
    specs = [mixture.with_data((num / denom) * mixture.data) for num in nums]
    return SourceEstimateSet.from_spectrograms(specs, mixture)


def init_from_wiener(mixture: Spectrogram, factors: FactorPair, grouping=None,
                     mode: str = "wiener") -> list:
    """Initial per-source spectrograms for the iterative reconstructions.

    ``mode="wiener"`` (default) starts from the soft-masked mixture — both
    the phase and the target magnitude come from the masked estimate.
    ``mode="model"`` forces the factor-product magnitude and keeps the raw
    mixture phase.  Either way the iterations fix the magnitude at the
    returned ``abs`` value.
    """
    if mode == "wiener":
        return wiener_separate(mixture, factors, grouping).spectrograms
    if mode == "model":
        nums = _group_numerators(factors, mixture.data.shape, grouping)
        phase = _phase_of(mixture.data, 1.0 + 0.0j)
        return [mixture.with_data(num * phase) for num in nums]
    raise ValueError(f"unknown init mode {mode!r}")


def _check_target(target, spec: Spectrogram):
    target = np.asarray(target, dtype=float)
    if target.shape != spec.data.shape:
        raise ValueError(f"target magnitude shape {target.shape} != {spec.data.shape}")
    if np.any(target < 0) or not np.all(np.isfinite(target)):
        raise ValueError("target magnitude must be finite and nonnegative")
    return target


def _phase_of(data, fallback):
    mag = np.abs(data)
    ok = mag > 0
    return np.where(ok, data / np.where(ok, mag, 1.0), fallback)


def _magnitude_iteration(target, init, iterations, project):
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    phase = _phase_of(init.data, 1.0 + 0.0j)  # phase 0 where undefined
    current = init.with_data(target * phase)
    for _ in range(iterations):
        proposal = project(current)
        phase = _phase_of(proposal.data, phase)  # keep old phase at zero bins
        current = current.with_data(target * phase)
    return current


def griffin_lim(target, init: Spectrogram, iterations: int = 50) -> Spectrogram:
    """Iteratively re-estimate phase under a fixed magnitude.

    Each pass projects onto consistent spectrograms and then restores the
    target magnitude.  The full-spectrum distance between the target and the
    projected magnitude never increases (both steps are nearest-point maps).
    """
    target = _check_target(target, init)
    return _magnitude_iteration(target, init, iterations, consistency_project)


def kernel_griffin_lim(target, init: Spectrogram, iterations: int = 50,
                       kernel: ConsistencyKernel | None = None) -> Spectrogram:
    """Like :func:`griffin_lim` but the projection is a local kernel pass.

    With an untruncated kernel the iterates match :func:`griffin_lim`; with
    the (cheap) truncated default they only approximate it, which costs some
    of the descent guarantee but keeps every update local in the TF plane.
    """
    target = _check_target(target, init)
    if kernel is None:
        from .stft import consistency_kernel
        kernel = consistency_kernel(init.plan)
    return _magnitude_iteration(
        target, init, iterations, lambda s: apply_consistency_kernel(kernel, s))


def magnitude_mismatch(spec: Spectrogram, target) -> float:
    """Full-spectrum distance between the projected magnitude and a target."""
    target = _check_target(target, spec)
    return float(np.sqrt(spectral_energy(
        np.abs(consistency_project(spec).data) - target)))
