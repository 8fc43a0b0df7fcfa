"""Nonnegative matrix factorization by multiplicative updates.

Supports the KL and Itakura-Saito divergences plus a per-entry weighted
Euclidean cost (the weighted variant exists to serve the complex
factorization's inner magnitude fits).  All updates are majorization-based
and never increase their cost; the IS update uses the tempered exponent 1/2,
the form the majorization argument actually proves monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

EPS = 1e-12

__all__ = ["EPS", "DivergenceKind", "FactorPair", "divergence", "mur_step",
           "fit_nmf", "random_factor_pair"]


class DivergenceKind(str, Enum):
    KL = "kl"
    IS = "is"
    EUCLIDEAN = "euclidean"


@dataclass
class FactorPair:
    """Nonnegative factors W (F x K) and H (K x T)."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ValueError(f"incompatible factor shapes {self.W.shape} x {self.H.shape}")
        for name, m in (("W", self.W), ("H", self.H)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            if np.any(m < 0):
                raise ValueError(f"{name} contains negative entries")

    @property
    def n_components(self) -> int:
        return self.W.shape[1]

    @property
    def compression_ratio(self) -> float:
        """Parameters kept relative to the matrix being modelled (diagnostic)."""
        F, K = self.W.shape
        T = self.H.shape[1]
        return K * (F + T) / (F * T)

    def product(self) -> np.ndarray:
        return self.W @ self.H

    def component(self, k: int) -> np.ndarray:
        return np.outer(self.W[:, k], self.H[k])


def _check_pair(V, Vhat, weights):
    V = np.asarray(V, dtype=float)
    Vhat = np.asarray(Vhat, dtype=float)
    if V.shape != Vhat.shape:
        raise ValueError(f"shape mismatch {V.shape} vs {Vhat.shape}")
    if np.any(V < 0) or not np.all(np.isfinite(V)):
        raise ValueError("V must be finite and nonnegative")
    if np.any(Vhat <= 0) or not np.all(np.isfinite(Vhat)):
        raise ValueError("Vhat must be finite and strictly positive")
    if weights is None:
        return V, Vhat, None
    weights = np.asarray(weights, dtype=float)
    if weights.shape != V.shape or np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must match V's shape and be finite and nonnegative")
    return V, Vhat, weights


def divergence(V, Vhat, kind: DivergenceKind = DivergenceKind.KL, weights=None) -> float:
    """Separable divergence between a nonnegative target and a positive model.

    KL uses the convention 0*log(0/y) = 0; IS floors the target at EPS (its
    integrand diverges at exact zeros).  ``weights`` multiplies the integrand
    entrywise for any kind.
    """
    V, Vhat, weights = _check_pair(V, Vhat, weights)
    kind = DivergenceKind(kind)
    if kind is DivergenceKind.KL:
        ratio = np.divide(V, Vhat)
        terms = np.where(V > 0, V * np.log(np.where(V > 0, ratio, 1.0)), 0.0) - V + Vhat
    elif kind is DivergenceKind.IS:
        r = np.maximum(V, EPS) / Vhat
        terms = r - np.log(r) - 1.0
    else:
        terms = (V - Vhat) ** 2
    if weights is not None:
        terms = weights * terms
    return float(terms.sum())


def mur_step(V, factors: FactorPair, kind: DivergenceKind = DivergenceKind.KL,
             weights=None, update_w: bool = True, update_h: bool = True) -> FactorPair:
    """One multiplicative sweep (W then H, each against a fresh model).

    Never increases ``divergence(V, W@H, kind, weights)``.  Updated entries
    are floored at EPS, so zero rows or columns of V cannot produce NaNs.
    Either factor can be frozen via ``update_w``/``update_h``.
    """
    V, _, weights = _check_pair(V, np.ones_like(np.asarray(V, dtype=float)), weights)
    kind = DivergenceKind(kind)
    if weights is None:
        weights = np.ones_like(V)
    W = factors.W.copy()
    H = factors.H.copy()

    def updated(A, V, WH, Hmat, w):
        # returns the multiplicative factor for A given model WH and basis Hmat
        if kind is DivergenceKind.KL:
            num = (w * V / WH) @ Hmat.T
            den = w @ Hmat.T
            ratio = num / np.maximum(den, EPS)
        elif kind is DivergenceKind.IS:
            # the IS divergence floors its target at EPS; the update must
            # fit the same floored target or monotonicity breaks
            num = (w * np.maximum(V, EPS) / WH ** 2) @ Hmat.T
            den = (w / WH) @ Hmat.T
            ratio = np.sqrt(num / np.maximum(den, EPS))
        else:
            num = (w * V) @ Hmat.T
            den = (w * WH) @ Hmat.T
            ratio = num / np.maximum(den, EPS)
        return np.maximum(A * ratio, EPS)

    if update_w:
        WH = np.maximum(W @ H, EPS)
        W = updated(W, V, WH, H, weights)
    if update_h:
        WH = np.maximum(W @ H, EPS)
        H = updated(H.T, V.T, WH.T, W.T, weights.T).T
    return FactorPair(W, H)


def random_factor_pair(n_rows: int, n_cols: int, n_components: int,
                       target_mean: float, seed: int = 0) -> FactorPair:
    """Random factors with entries in (0, 1], rescaled so the product's mean
    matches ``target_mean`` — the canonical random initialization."""
    rng = np.random.default_rng(seed)
    W = 1.0 - rng.random((n_rows, n_components))
    H = 1.0 - rng.random((n_components, n_cols))
    if target_mean > 0:
        scale = np.sqrt(target_mean / (W @ H).mean())
        W *= scale
        H *= scale
    return FactorPair(W, H)


def fit_nmf(V, n_components: int, kind: DivergenceKind = DivergenceKind.KL,
            iterations: int = 30, seed: int = 0, weights=None,
            init: FactorPair | None = None):
    """Factorize ``V ~= W @ H`` from a scale-matched random start.

    Returns ``(FactorPair, trajectory)`` where ``trajectory[i]`` is the
    divergence after ``i`` sweeps (length ``iterations + 1``, non-increasing).
    Deterministic in ``seed``.  Pass ``init`` to continue from existing
    factors instead of the random start (``seed`` is then unused).
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise ValueError(f"V must be 2-D, got shape {V.shape}")
    F, T = V.shape
    if not 1 <= n_components <= min(F, T):
        raise ValueError(f"n_components must lie in [1, {min(F, T)}], got {n_components}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if init is not None:
        if init.W.shape != (F, n_components) or init.H.shape != (n_components, T):
            raise ValueError("init factors do not match V")
        factors = FactorPair(init.W.copy(), init.H.copy())
    else:
        factors = random_factor_pair(F, T, n_components, V.mean(), seed)
    traj = [divergence(V, factors.product(), kind, weights)]
    for _ in range(iterations):
        factors = mur_step(V, factors, kind, weights)
        traj.append(divergence(V, factors.product(), kind, weights))
    return factors, np.asarray(traj)
