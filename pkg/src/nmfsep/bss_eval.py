"""Energy-ratio scores for separated sources against known references.

An estimate is split by nested least-squares projections onto spans of
short-delayed reference copies:

    estimate = s_target + e_interf + e_artif

``s_target`` is the part explained by filtering the matched reference,
``e_interf`` the extra part explained by filtering all references, and
``e_artif`` whatever remains.  The three parts are mutually orthogonal, so
the usual ratios decompose the estimate's energy exactly:

    SDR = 10 log10 ||s_target||^2 / ||e_interf + e_artif||^2
    SIR = 10 log10 ||s_target||^2 / ||e_interf||^2
    SAR = 10 log10 ||s_target + e_interf||^2 / ||e_artif||^2

Estimates are matched to references by the permutation with the highest
mean SIR.  All ratios are clamped to +-300 dB so degenerate cases (an exact
copy, an all-zero estimate) stay finite.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

_TINY = np.finfo(float).tiny
_DB_LIMIT = 300.0
_MAX_PERMUTATION_SOURCES = 6

__all__ = ["SeparationScores", "ReferenceSet", "bss_eval", "decompose_estimate"]


def _db_ratio(num: float, den: float) -> float:
    if num <= _TINY:
        return -_DB_LIMIT
    if den <= _TINY:
        return _DB_LIMIT
    return float(np.clip(10.0 * np.log10(num / den), -_DB_LIMIT, _DB_LIMIT))


@dataclass(frozen=True)
class SeparationScores:
    """Per-reference scores after the best-permutation match.

    ``permutation[j]`` is the index of the estimate assigned to reference
    ``j``; the score arrays are ordered by reference.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    permutation: np.ndarray


class ReferenceSet:
    """Projection machinery for a fixed set of reference signals.

    Building the block-Toeplitz Gram of all delayed reference copies (and
    factoring it) is the expensive part, so it happens once here and is
    reused for every estimate scored against the same references.
    """

    def __init__(self, references, filter_length: int = 512):
        refs = np.atleast_2d(np.asarray(references, dtype=float))
        if refs.ndim != 2 or refs.shape[1] < 1:
            raise ValueError("references must be a (n_sources, n_samples) array")
        if not np.all(np.isfinite(refs)):
            raise ValueError("references must be finite")
        if np.any(np.sum(refs**2, axis=1) <= _TINY):
            raise ValueError("every reference must have nonzero energy")
        if filter_length < 1:
            raise ValueError("filter_length must be >= 1")
        self.references = refs
        self.filter_length = int(filter_length)
        n_refs, n_samples = refs.shape
        self.n_padded = n_samples + self.filter_length - 1
        self._nfft = scipy.fft.next_fast_len(n_samples + self.filter_length)
        self._spectra = np.fft.rfft(refs, self._nfft, axis=1)

        flen = self.filter_length
        gram = np.empty((n_refs * flen, n_refs * flen))
        for i in range(n_refs):
            for j in range(i, n_refs):
                # block[a, b] = sum_t ref_i[t - a] ref_j[t - b] = corr_ij[b - a]
                # where corr_ij[d] = sum_t ref_i[t + d] ref_j[t]
                corr = np.fft.irfft(self._spectra[i] * np.conj(self._spectra[j]), self._nfft)
                col = np.concatenate(([corr[0]], corr[-1 : -flen : -1]))
                row = corr[:flen]
                block = scipy.linalg.toeplitz(col, row)
                gram[i * flen : (i + 1) * flen, j * flen : (j + 1) * flen] = block
                if j != i:
                    gram[j * flen : (j + 1) * flen, i * flen : (i + 1) * flen] = block.T
        self.gram = gram
        self._full_factor = _factor(gram, "the delayed-reference Gram")
        self._block_factors = [
            _factor(
                gram[j * flen : (j + 1) * flen, j * flen : (j + 1) * flen],
                f"reference {j}'s delayed Gram",
            )
            for j in range(n_refs)
        ]

    @property
    def n_references(self) -> int:
        return self.references.shape[0]

    def _check_estimate(self, estimate) -> np.ndarray:
        est = np.asarray(estimate, dtype=float)
        if est.shape != (self.references.shape[1],):
            raise ValueError(
                f"estimate must be a length-{self.references.shape[1]} signal"
            )
        if not np.all(np.isfinite(est)):
            raise ValueError("estimate must be finite")
        return est

    def _rhs(self, est: np.ndarray) -> np.ndarray:
        # rhs[j*flen + a] = sum_t ref_j[t - a] est[t]
        espec = np.fft.rfft(est, self._nfft)
        corr = np.fft.irfft(espec[None, :] * np.conj(self._spectra), self._nfft, axis=1)
        return corr[:, : self.filter_length].ravel()

    def _synthesize(self, coeffs: np.ndarray, ref_indices) -> np.ndarray:
        flen = self.filter_length
        out_spec = np.zeros(self._spectra.shape[1], dtype=complex)
        for pos, j in enumerate(ref_indices):
            fir = coeffs[pos * flen : (pos + 1) * flen]
            out_spec += self._spectra[j] * np.fft.rfft(fir, self._nfft)
        return np.fft.irfft(out_spec, self._nfft)[: self.n_padded]

    def decompose(self, estimate, target_index: int):
        """Split ``estimate`` into (s_target, e_interf, e_artif).

        The parts live on the padded axis (length ``n_padded``) so that
        delayed reference copies fit without truncation.
        """
        est = self._check_estimate(estimate)
        if not 0 <= target_index < self.n_references:
            raise ValueError("target_index out of range")
        rhs = self._rhs(est)
        proj_all = self._project_all(rhs)
        s_target = self._project_one(rhs, target_index)
        padded = np.zeros(self.n_padded)
        padded[: est.size] = est
        return s_target, proj_all - s_target, padded - proj_all

    def _project_all(self, rhs: np.ndarray) -> np.ndarray:
        coeffs = scipy.linalg.cho_solve(self._full_factor, rhs)
        return self._synthesize(coeffs, range(self.n_references))

    def _project_one(self, rhs: np.ndarray, j: int) -> np.ndarray:
        flen = self.filter_length
        coeffs = scipy.linalg.cho_solve(
            self._block_factors[j], rhs[j * flen : (j + 1) * flen]
        )
        return self._synthesize(coeffs, [j])

    def score_against_each(self, estimate):
        """(sdr, sir, sar) of ``estimate`` versus every reference in turn."""
        est = self._check_estimate(estimate)
        rhs = self._rhs(est)
        proj_all = self._project_all(rhs)
        padded = np.zeros(self.n_padded)
        padded[: est.size] = est
        artif_energy = float(np.sum((padded - proj_all) ** 2))
        sdr = np.empty(self.n_references)
        sir = np.empty(self.n_references)
        sar = np.empty(self.n_references)
        for j in range(self.n_references):
            s_target = self._project_one(rhs, j)
            target_energy = float(np.sum(s_target**2))
            interf_energy = float(np.sum((proj_all - s_target) ** 2))
            sdr[j] = _db_ratio(target_energy, interf_energy + artif_energy)
            sir[j] = _db_ratio(target_energy, interf_energy)
            sar[j] = _db_ratio(target_energy + interf_energy, artif_energy)
        return sdr, sir, sar


def _factor(mat: np.ndarray, label: str):
    try:
        return scipy.linalg.cho_factor(mat)
    except scipy.linalg.LinAlgError:
        warnings.warn(
            f"{label} is singular; adding a small diagonal ridge", RuntimeWarning
        )
        ridge = 1e-10 * np.trace(mat) + _TINY
        return scipy.linalg.cho_factor(mat + ridge * np.eye(mat.shape[0]))


def decompose_estimate(estimate, references, target_index: int, filter_length: int = 512):
    """One-off projection split; see :meth:`ReferenceSet.decompose`."""
    return ReferenceSet(references, filter_length).decompose(estimate, target_index)


def bss_eval(references, estimates, filter_length: int = 512) -> SeparationScores:
    """Score a set of estimates against references, resolving permutation.

    Every estimate is scored against every reference; the assignment with
    the highest mean SIR wins.  The exhaustive search keeps this honest but
    caps the source count at 6.
    """
    refset = ReferenceSet(references, filter_length)
    ests = np.atleast_2d(np.asarray(estimates, dtype=float))
    if ests.shape != refset.references.shape:
        raise ValueError(
            f"estimates of shape {ests.shape} do not match "
            f"{refset.references.shape} references"
        )
    n = refset.n_references
    if n > _MAX_PERMUTATION_SOURCES:
        raise ValueError(
            f"permutation search supports at most {_MAX_PERMUTATION_SOURCES} "
            f"sources, got {n}"
        )
    sdr = np.empty((n, n))
    sir = np.empty((n, n))
    sar = np.empty((n, n))
    for i in range(n):
        sdr[i], sir[i], sar[i] = refset.score_against_each(ests[i])

    best = max(
        itertools.permutations(range(n)),
        key=lambda perm: np.mean([sir[perm[j], j] for j in range(n)]),
    )
    order = np.asarray(best)
    picks = (order, np.arange(n))
    return SeparationScores(
        sdr=sdr[picks], sir=sir[picks], sar=sar[picks], permutation=order
    )
