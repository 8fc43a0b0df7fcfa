"""Complex NMF: nonnegative magnitude factors with free per-component phases.

The model predicts X as a sum of rank-1 magnitude layers, each carrying its
own full phase field:

    prediction(f, t) = sum_k W[f, k] H[k, t] phases[k, f, t]

A sweep distributes the current residual over components in proportion to
their magnitude share (the shares sum to one, so the distributed targets sum
back to X exactly), re-points each phase field at its target, and refits W
and H by closed-form weighted least squares.  With ``gamma > 0`` the phase
targets are blended with their consistency projection, which trades the
plain-CNMF descent guarantee for spectrograms closer to being the analysis
of an actual signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nmf import EPS
from .stft import Spectrogram, consistency_project, inconsistency

_TINY = np.finfo(float).tiny

__all__ = [
    "ComplexNmfModel",
    "complex_nmf_objective",
    "complex_nmf_step",
    "fit_complex_nmf",
    "refit_phases",
    "complex_nmf_separate",
]


@dataclass(eq=False)
class ComplexNmfModel:
    W: np.ndarray
    H: np.ndarray
    phases: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.phases = np.asarray(self.phases, dtype=complex)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ValueError("W must be (F, K) and H (K, T)")
        k, f, t = self.W.shape[1], self.W.shape[0], self.H.shape[1]
        if self.phases.shape != (k, f, t):
            raise ValueError(f"phases must have shape {(k, f, t)}")
        if np.any(self.W < 0) or np.any(self.H < 0):
            raise ValueError("factors must be nonnegative")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.H))
                and np.all(np.isfinite(self.phases))):
            raise ValueError("model arrays must be finite")
        if np.max(np.abs(np.abs(self.phases) - 1.0)) > 1e-6:
            raise ValueError("phase fields must be unit modulus")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def n_components(self) -> int:
        return self.W.shape[1]

    def component_magnitudes(self) -> np.ndarray:
        """(K, F, T) stack of the rank-1 magnitude layers."""
        return np.einsum("fk,kt->kft", self.W, self.H)

    def component(self, k: int) -> np.ndarray:
        return np.outer(self.W[:, k], self.H[k]) * self.phases[k]

    def prediction(self) -> np.ndarray:
        return (self.component_magnitudes() * self.phases).sum(axis=0)


def _unit(data: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    mag = np.abs(data)
    ok = mag > 0
    return np.where(ok, data / np.where(ok, mag, 1.0), fallback)


def _check_shapes(X: Spectrogram, model: ComplexNmfModel):
    if model.W.shape[0] != X.data.shape[0] or model.H.shape[1] != X.data.shape[1]:
        raise ValueError(
            f"model for {(model.W.shape[0], model.H.shape[1])} does not match "
            f"spectrogram of shape {X.data.shape}"
        )


def complex_nmf_objective(X: Spectrogram, model: ComplexNmfModel) -> float:
    """Squared fit error plus ``gamma`` times the components' inconsistency."""
    _check_shapes(X, model)
    value = float(np.sum(np.abs(X.data - model.prediction()) ** 2))
    if model.gamma > 0:
        for k in range(model.n_components):
            value += model.gamma * inconsistency(X.with_data(model.component(k)))
    return value


def _distribute_residual(X: Spectrogram, model: ComplexNmfModel):
    """Per-component targets X̄_k with sum_k X̄_k = X (to rounding)."""
    mags = model.component_magnitudes()
    comps = mags * model.phases
    floored = np.maximum(mags, EPS)
    shares = floored / floored.sum(axis=0)
    bars = comps + shares * (X.data - comps.sum(axis=0))
    return mags, shares, bars


def complex_nmf_step(X: Spectrogram, model: ComplexNmfModel) -> ComplexNmfModel:
    """One sweep: distribute residual, update phases, refit W then H.

    At ``gamma = 0`` the sweep never increases the objective: the shares form
    a partition of unity, so the weighted per-component errors majorize the
    fit term, and each sub-update minimizes that surrogate exactly.
    """
    _check_shapes(X, model)
    _, shares, bars = _distribute_residual(X, model)

    if model.gamma > 0:
        targets = np.empty_like(bars)
        for k in range(model.n_components):
            projected = consistency_project(X.with_data(bars[k])).data
            targets[k] = bars[k] + model.gamma * projected
    else:
        targets = bars
    phases = _unit(targets, model.phases)

    weights = 1.0 / shares
    amplitude = np.abs(bars)
    num_w = np.einsum("kft,kt->fk", amplitude * weights, model.H)
    den_w = np.einsum("kft,kt->fk", weights, model.H**2)
    W = num_w / np.maximum(den_w, _TINY)
    num_h = np.einsum("kft,fk->kt", amplitude * weights, W)
    den_h = np.einsum("kft,fk->kt", weights, W**2)
    H = num_h / np.maximum(den_h, _TINY)
    return ComplexNmfModel(W=W, H=H, phases=phases, gamma=model.gamma)


def fit_complex_nmf(X: Spectrogram, n_components: int, gamma: float = 0.0,
                    iterations: int = 30, seed: int = 0):
    """Fit from a random scale-matched start; returns (model, trajectory).

    Phases start at the mixture phase for every component; the trajectory
    has ``iterations + 1`` objective values (initial one included).
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    n_bins, n_frames = X.data.shape
    W = 1.0 - rng.random((n_bins, n_components))
    H = 1.0 - rng.random((n_components, n_frames))
    scale = np.sqrt(np.mean(np.abs(X.data)) / max(np.mean(W @ H), _TINY))
    W *= scale
    H *= scale
    mixture_phase = _unit(X.data, np.ones_like(X.data))
    phases = np.broadcast_to(mixture_phase, (n_components,) + X.data.shape).copy()
    model = ComplexNmfModel(W=W, H=H, phases=phases, gamma=gamma)
    trajectory = [complex_nmf_objective(X, model)]
    for _ in range(iterations):
        model = complex_nmf_step(X, model)
        trajectory.append(complex_nmf_objective(X, model))
    return model, np.asarray(trajectory)


def refit_phases(X: Spectrogram, model: ComplexNmfModel, iterations: int = 50):
    """Re-estimate only the phase fields against ``X``; W and H stay frozen.

    Returns (model, trajectory).  Used by the oracle protocol, where the
    magnitude factors come from isolated sources but the phases must be
    found on the mixture.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    _check_shapes(X, model)
    trajectory = [complex_nmf_objective(X, model)]
    for _ in range(iterations):
        _, _, bars = _distribute_residual(X, model)
        if model.gamma > 0:
            targets = np.empty_like(bars)
            for k in range(model.n_components):
                projected = consistency_project(X.with_data(bars[k])).data
                targets[k] = bars[k] + model.gamma * projected
        else:
            targets = bars
        model = ComplexNmfModel(W=model.W, H=model.H,
                                phases=_unit(targets, model.phases),
                                gamma=model.gamma)
        trajectory.append(complex_nmf_objective(X, model))
    return model, np.asarray(trajectory)


def complex_nmf_separate(X: Spectrogram, model: ComplexNmfModel, grouping=None):
    """Per-source spectrograms: each component's model plus its residual share.

    The shares sum to one, so the estimates sum back to the mixture (within
    rounding), with or without grouping.
    """
    from .phase import SourceEstimateSet

    _check_shapes(X, model)
    _, _, bars = _distribute_residual(X, model)
    if grouping is None:
        grouping = np.arange(model.n_components)
    grouping = np.asarray(grouping)
    if grouping.shape != (model.n_components,) or not np.issubdtype(
            grouping.dtype, np.integer):
        raise ValueError("grouping must assign an integer source to each component")
    if grouping.min() < 0:
        raise ValueError("grouping contains negative source indices")
    n_sources = int(grouping.max()) + 1
    specs = []
    for s in range(n_sources):
        members = np.flatnonzero(grouping == s)
        if members.size == 0:
            raise ValueError("grouping leaves a source with no components")
        specs.append(X.with_data(bars[members].sum(axis=0)))
    return SourceEstimateSet.from_spectrograms(specs, X)
