"""Short-time Fourier analysis with an exactly invertible overlap-add design.

Conventions used throughout the package:

* frames are taken on a zero-padded *circle*: the signal is padded with
  ``window_length`` zeros on the left and ``window_length + (-L mod hop)``
  zeros on the right, and analysis windows tile the whole padded buffer with
  period ``hop`` (wrapping frames only ever see pad zeros for real signals).
  Every original sample is covered by the full complement of overlapping
  windows, so weighted overlap-add inverts the transform exactly.
* phases are referenced to the window start: ``X[f, t] = sum_n w[n] *
  x[t*hop + n] * exp(-2j*pi*f*n / window_length)``.
* the analysis window is normalized so its squared shifts sum to one, which
  makes the same window usable for synthesis without a divisor and turns
  ``stft . istft`` into an orthogonal projection onto consistent
  spectrograms.

One-sided spectrograms are stored (``F = window_length//2 + 1`` rows).  The
imaginary parts of the DC and Nyquist rows are ignored by synthesis, exactly
as ``numpy.fft.irfft`` treats them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "StftPlan",
    "Spectrogram",
    "ConsistencyKernel",
    "stft",
    "istft",
    "consistency_project",
    "inconsistency",
    "bin_weights",
    "spectral_energy",
    "consistency_kernel",
    "apply_consistency_kernel",
]


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True, eq=False)
class StftPlan:
    """Analysis/synthesis configuration shared by a spectrogram and its signal.

    Parameters
    ----------
    window_length : int
        Even, positive frame length in samples.
    hop : int
        Frame advance; must divide ``window_length``.
    sample_rate : float
        Sampling rate in Hz (metadata for bin frequencies; defaults to 1).
    window : ndarray, optional
        Custom nonnegative analysis window.  It must satisfy the constant
        squared-overlap condition; it is rescaled so the constant is one.
        Defaults to a periodic Hann window.
    """

    window_length: int
    hop: int
    sample_rate: float = 1.0
    window: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        n, h = self.window_length, self.hop
        if not (isinstance(n, (int, np.integer)) and n > 0 and n % 2 == 0):
            raise ValueError(f"window_length must be a positive even integer, got {n!r}")
        if not (isinstance(h, (int, np.integer)) and h > 0 and n % h == 0):
            raise ValueError(f"hop must be a positive divisor of window_length, got {h!r}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate!r}")
        w = self.window
        if w is None:
            w = _periodic_hann(n)
        w = np.asarray(w, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"window must have shape ({n},), got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("window entries must be finite and nonnegative")
        # constant squared-overlap check, then normalize the constant to 1
        cola = np.array([w[j::h].dot(w[j::h]) for j in range(h)])
        if cola.min() <= 0 or (cola.max() - cola.min()) > 1e-12 * cola.max():
            raise ValueError(
                "window does not satisfy the constant squared-overlap condition "
                f"(per-offset sums range over [{cola.min()}, {cola.max()}])"
            )
        object.__setattr__(self, "window", w / math.sqrt(cola.mean()))

    def __eq__(self, other):
        return (
            isinstance(other, StftPlan)
            and self.window_length == other.window_length
            and self.hop == other.hop
            and self.sample_rate == other.sample_rate
            and np.array_equal(self.window, other.window)
        )

    @property
    def n_bins(self) -> int:
        return self.window_length // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.window_length

    def padded_length(self, signal_length: int) -> int:
        if signal_length < 1:
            raise ValueError("signal_length must be >= 1")
        return 2 * self.window_length + self.hop * math.ceil(signal_length / self.hop)

    def n_frames(self, signal_length: int) -> int:
        return self.padded_length(signal_length) // self.hop


@dataclass
class Spectrogram:
    """Complex one-sided spectrogram tied to its plan and signal length."""

    data: np.ndarray
    plan: StftPlan
    signal_length: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        expect = (self.plan.n_bins, self.plan.n_frames(self.signal_length))
        if self.data.shape != expect:
            raise ValueError(
                f"spectrogram shape {self.data.shape} does not match plan "
                f"(expected {expect} for signal_length={self.signal_length})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram entries must be finite")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return replace(self, data=data)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


def _frame_indices(plan: StftPlan, signal_length: int) -> np.ndarray:
    total = plan.padded_length(signal_length)
    T = total // plan.hop
    starts = np.arange(T)[:, None] * plan.hop
    return (starts + np.arange(plan.window_length)[None, :]) % total


def _analyze(xp: np.ndarray, plan: StftPlan, signal_length: int) -> np.ndarray:
    idx = _frame_indices(plan, signal_length)
    return np.fft.rfft(xp[idx] * plan.window, axis=1).T


def _overlap_add(spec: Spectrogram) -> np.ndarray:
    plan = spec.plan
    frames = np.fft.irfft(spec.data.T, n=plan.window_length, axis=1) * plan.window
    xp = np.zeros(plan.padded_length(spec.signal_length))
    np.add.at(xp, _frame_indices(plan, spec.signal_length), frames)
    return xp


def stft(x: np.ndarray, plan: StftPlan) -> Spectrogram:
    """Analyze a real 1-D signal.

    Returns a :class:`Spectrogram` whose inverse (:func:`istft`) reproduces
    ``x`` exactly up to rounding.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"expected a nonempty 1-D signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    xp = np.zeros(plan.padded_length(x.size))
    xp[plan.window_length:plan.window_length + x.size] = x
    return Spectrogram(_analyze(xp, plan, x.size), plan, x.size)


def istft(spec: Spectrogram) -> np.ndarray:
    """Weighted overlap-add synthesis, sliced back to the original support."""
    n = spec.plan.window_length
    return _overlap_add(spec)[n:n + spec.signal_length]


def consistency_project(spec: Spectrogram) -> Spectrogram:
    """Re-analyze the overlap-add synthesis of ``spec``.

    This is the orthogonal projection onto the linear subspace of consistent
    spectrograms (those that are the analysis of some time signal on the
    padded circle).  It is exactly idempotent and never increases the
    two-sided spectral norm.
    """
    return spec.with_data(_analyze(_overlap_add(spec), spec.plan, spec.signal_length))


def bin_weights(n_bins: int) -> np.ndarray:
    """Per-row weights making one-sided sums equal full-spectrum sums."""
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def spectral_energy(data: np.ndarray) -> float:
    """Full-spectrum squared norm of a one-sided complex (or real) matrix.

    For a consistent spectrogram this equals ``window_length`` times the
    energy of the padded time signal (the analysis operator scales Parseval's
    identity by the frame length because the squared window shifts sum to 1).
    """
    return float(np.sum(bin_weights(data.shape[0])[:, None] * np.abs(data) ** 2))


def inconsistency(spec: Spectrogram) -> float:
    """Squared full-spectrum distance between ``spec`` and its projection.

    Zero exactly on consistent spectrograms; the projection of any
    spectrogram has inconsistency zero, so the operator never increases it.
    """
    return spectral_energy(spec.data - consistency_project(spec).data)


# ---------------------------------------------------------------------------
# Local time-frequency representation of the consistency operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyKernel:
    """Truncated TF-domain representation of ``consistency_project``.

    ``coeffs[df + rf, dt + rt]`` couples input bin ``f + df`` at frame
    ``t - dt`` to output bin ``f`` at frame ``t``; applying the kernel also
    multiplies each term by the frame-advance phase ``exp(2j*pi*(f+df)*dt*
    hop/window_length)``, which is what makes the coupling shift-invariant in
    the window-start phase convention.
    """

    coeffs: np.ndarray
    window_length: int
    hop: int

    @property
    def bin_radius(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def frame_radius(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2


def consistency_kernel(plan: StftPlan, truncation: tuple[int, int] | None = None) -> ConsistencyKernel:
    """Build the local kernel whose application approximates the projection.

    Parameters
    ----------
    truncation : (n_bins, n_frames), optional
        Odd total widths of the kernel in the bin and frame directions,
        each at least 3.  Defaults to ``(3, 2*(window_length//hop - 1) + 1)``:
        the frame direction is kept at its full support (the overlap span)
        while the bin direction keeps only the dominant ±1 couplings.
        ``n_bins = window_length + 1`` covers every circular frequency shift,
        at which point applying the kernel reproduces the projection exactly.

    Notes
    -----
    The frame-offset-zero slice of the kernel is exactly supported on ±2 bins
    for the Hann window (the squared window is a three-term cosine
    polynomial), but slices at nonzero frame offsets have small tails at all
    frequency shifts because the overlapped window product is truncated at
    the window edge.
    """
    n, h = plan.window_length, plan.hop
    span = n // h - 1
    if truncation is None:
        truncation = (3, 2 * span + 1)
    nb, nf = truncation
    if nb % 2 == 0 or nf % 2 == 0 or nb < 3 or nf < 3:
        raise ValueError(f"truncation widths must be odd and >= 3, got {truncation}")
    if nb > n + 1:
        raise ValueError(f"bin truncation {nb} exceeds the {n + 1} useful widths")
    rf, rt = (nb - 1) // 2, (nf - 1) // 2
    w = plan.window
    coeffs = np.zeros((nb, nf), dtype=np.complex128)
    for dt in range(-rt, rt + 1):
        if abs(dt) > span:
            continue  # windows this far apart never overlap
        prod = np.zeros(n)
        lo, hi = max(0, -dt * h), min(n, n - dt * h)
        prod[lo:hi] = w[lo:hi] * w[lo + dt * h:hi + dt * h]
        spectrum = np.fft.fft(prod) / n
        for df in range(-rf, rf + 1):
            c = spectrum[(-df) % n]
            if rf == n // 2 and abs(df) == rf:
                c = c / 2.0  # +-N/2 alias to one circular shift; split it
            coeffs[df + rf, dt + rt] = c
    return ConsistencyKernel(coeffs, n, h)


def apply_consistency_kernel(kernel: ConsistencyKernel, spec: Spectrogram) -> Spectrogram:
    """Apply the truncated kernel to a spectrogram.

    With an untruncated kernel this equals :func:`consistency_project` to
    rounding; truncated kernels trade accuracy for locality.
    """
    plan = spec.plan
    n, h = plan.window_length, plan.hop
    if (kernel.window_length, kernel.hop) != (n, h):
        raise ValueError(
            f"kernel built for window/hop {(kernel.window_length, kernel.hop)} "
            f"does not match plan {(n, h)}"
        )
    F, T = spec.data.shape
    rf, rt = kernel.bin_radius, kernel.frame_radius
    if 2 * rt + 1 > T:
        raise ValueError(f"kernel frame width {2 * rt + 1} exceeds the {T} frames available")
    # Hermitian two-sided extension (synthesis ignores imaginary DC/Nyquist).
    full = np.empty((n, T), dtype=np.complex128)
    full[:F] = spec.data
    full[0] = spec.data[0].real
    full[F - 1] = spec.data[F - 1].real
    full[F:] = np.conj(full[1:F - 1][::-1])
    out = np.zeros_like(full)
    fgrid = np.arange(n)
    for dt in range(-rt, rt + 1):
        col = kernel.coeffs[:, dt + rt]
        if not np.any(col):
            continue
        shifted = np.roll(full, dt, axis=1)
        for df in range(-rf, rf + 1):
            c = col[df + rf]
            if c == 0:
                continue
            mod = np.exp(2j * np.pi * (fgrid + df) * dt * h / n)
            out += c * mod[:, None] * np.roll(shifted, -df, axis=0)
    return spec.with_data(out[:F])
