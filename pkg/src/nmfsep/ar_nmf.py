"""Per-band autoregressive Gaussian source model, estimated by exact EM.

Component k models each frequency band's coefficient sequence as a complex
autoregression driven by time-varying innovation power:

    X_k(f, t) = sum_p a_p(k, f) X_k(f, t - p) + b_k(f, t),
    b_k(f, t) ~ CN(0, W[f, k] H[k, t]),      X_k(f, t <= 0) = 0,
    y(f, t)   = sum_k X_k(f, t) + n(f, t),   n ~ CN(0, noise_var).

Bands are independent given the parameters, and each band is a linear
Gaussian state-space model, so the E-step is an exact complex Kalman filter
plus RTS smoothing pass.  Each component's state block is its lag window
extended by one slot — (X_k(t), ..., X_k(t - P_k)) — which makes every
second moment the M-step needs available inside a single smoothed state.

The M-step is generalized: AR coefficients solve exact weighted normal
equations, the variance factors take one tempered multiplicative IS sweep
per component toward the posterior innovation powers, and the observation
noise is the exact residual-power mean.  Every piece increases the expected
complete-data likelihood, so the marginal log-likelihood never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nmf import EPS, DivergenceKind, FactorPair, fit_nmf, mur_step, random_factor_pair
from .stft import Spectrogram

_NOISE_FLOOR = 1e-12

__all__ = [
    "ArNmfModel",
    "BandPosterior",
    "kalman_smooth_band",
    "em_step",
    "fit_ar_nmf",
    "ar_nmf_separate",
    "stack_models",
]


@dataclass(eq=False)
class ArNmfModel:
    """Variance factors, per-(component, band) AR coefficients, noise floor.

    ``ar[k, f, :orders[k, f]]`` holds the active coefficients; entries past
    the order are ignored.  Order 0 freezes a band at the static (no-memory)
    model.  AR stability is not enforced — see :meth:`unstable_bands`.
    """

    W: np.ndarray
    H: np.ndarray
    ar: np.ndarray
    orders: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.ar = np.asarray(self.ar, dtype=complex)
        self.orders = np.asarray(self.orders)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ValueError("W must be (F, K) and H (K, T)")
        n_bins, k = self.W.shape
        if np.any(self.W < 0) or np.any(self.H < 0):
            raise ValueError("variance factors must be nonnegative")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.H))
                and np.all(np.isfinite(self.ar))):
            raise ValueError("model arrays must be finite")
        if self.orders.shape != (k, n_bins) or not np.issubdtype(
                self.orders.dtype, np.integer):
            raise ValueError(f"orders must be an integer array of shape {(k, n_bins)}")
        if self.orders.min() < 0:
            raise ValueError("orders must be nonnegative")
        if self.ar.ndim != 3 or self.ar.shape[:2] != (k, n_bins) \
                or self.ar.shape[2] < max(1, int(self.orders.max())):
            raise ValueError("ar must be (K, F, P) with P covering every order")
        if not (np.isfinite(self.noise_var) and self.noise_var > 0):
            raise ValueError("noise_var must be positive")

    @property
    def n_components(self) -> int:
        return self.W.shape[1]

    @property
    def n_bins(self) -> int:
        return self.W.shape[0]

    @property
    def n_frames(self) -> int:
        return self.H.shape[1]

    def component_variances(self) -> np.ndarray:
        """(K, F, T) innovation powers W_k(f)H_k(t), floored at EPS."""
        return np.maximum(np.einsum("fk,kt->kft", self.W, self.H), EPS)

    def unstable_bands(self, tol: float = 1e-9) -> np.ndarray:
        """(K, F) diagnostic: which AR polynomials have roots outside the
        unit circle.  Informational only; the smoother stays exact either way
        because every recursion starts from rest."""
        out = np.zeros(self.orders.shape, dtype=bool)
        for k in range(self.n_components):
            for f in range(self.n_bins):
                p = int(self.orders[k, f])
                if p == 0:
                    continue
                roots = np.roots(np.concatenate(([1.0], -self.ar[k, f, :p])))
                if roots.size and np.max(np.abs(roots)) > 1.0 + tol:
                    out[k, f] = True
        return out


@dataclass(eq=False)
class BandPosterior:
    """Exact posterior statistics of one band's components given its data.

    ``variances`` are second moments E[|X_k(t)|^2 | y]; ``lag1[k, t]`` is
    E[X_k(t) conj(X_k(t-1)) | y] with the t = 0 entry fixed at 0 (the state
    before the first frame is deterministically zero).  ``moments`` and
    ``residual_power`` carry the extended-lag blocks and observation
    residuals the M-step consumes; they are plumbing, not part of the
    advertised posterior.
    """

    means: np.ndarray
    variances: np.ndarray
    lag1: np.ndarray
    loglik: float
    moments: list
    residual_power: np.ndarray


def _hermT(a: np.ndarray) -> np.ndarray:
    return a.conj().swapaxes(-1, -2)


def _herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + _hermT(a))


def _smooth_group(Y, variances, ar, orders, noise_var):
    """Batched smoother for bands sharing one order signature.

    ``Y``: (B, T) observations; ``variances``: (B, K, T) innovation powers;
    ``ar``: (B, K, P); ``orders``: length-K ints.  Returns batched posterior
    statistics (see the caller for the layout).
    """
    n_bands, n_frames = Y.shape
    sizes = [int(p) + 1 for p in orders]
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    dim = int(np.sum(sizes))
    sel = offsets  # observation reads the newest slot of each block

    A = np.zeros((n_bands, dim, dim), dtype=complex)
    for k, (p, off) in enumerate(zip(orders, offsets)):
        if p > 0:
            A[:, off, off : off + p] = ar[:, k, :p]
        for j in range(1, p + 1):
            A[:, off + j, off + j - 1] = 1.0

    filt_m = np.zeros((n_frames, n_bands, dim), dtype=complex)
    filt_P = np.zeros((n_frames, n_bands, dim, dim), dtype=complex)
    pred_m = np.zeros_like(filt_m)
    pred_P = np.zeros_like(filt_P)
    loglik = np.zeros(n_bands)
    eye = np.eye(dim)

    m = np.zeros((n_bands, dim), dtype=complex)
    P = np.zeros((n_bands, dim, dim), dtype=complex)
    for t in range(n_frames):
        if t == 0:
            pm = np.zeros_like(m)
            pP = np.zeros_like(P)
        else:
            pm = np.einsum("bij,bj->bi", A, m)
            pP = _herm(A @ P @ _hermT(A))
        pP[:, sel, sel] += variances[:, :, t]
        innov_var = pP[:, sel][:, :, sel].sum(axis=(1, 2)).real + noise_var
        if not np.all(innov_var > 0):
            # symmetrization happens on every covariance update; if the
            # predicted observation variance still collapses, the recursion
            # has lost positive definiteness beyond repair
            raise np.linalg.LinAlgError(
                "innovation variance collapsed to a non-positive value")
        innov = Y[:, t] - pm[:, sel].sum(axis=1)
        gain = pP[:, :, sel].sum(axis=2) / innov_var[:, None]
        m = pm + gain * innov[:, None]
        shrink = np.zeros_like(P)
        shrink[:, :, sel] = gain[:, :, None]
        shrink = eye - shrink
        P = _herm(shrink @ pP @ _hermT(shrink)
                  + noise_var * gain[:, :, None] * gain.conj()[:, None, :])
        loglik += -np.log(np.pi * innov_var) - np.abs(innov) ** 2 / innov_var
        filt_m[t], filt_P[t] = m, P
        pred_m[t], pred_P[t] = pm, pP

    smooth_m = np.zeros_like(filt_m)
    smooth_P = np.zeros_like(filt_P)
    cross = np.zeros_like(filt_P)  # cross[t] = Cov(state_t, state_{t-1} | Y)
    smooth_m[-1], smooth_P[-1] = filt_m[-1], filt_P[-1]
    AH = _hermT(A)
    for t in range(n_frames - 2, -1, -1):
        # the one-step-ahead covariance is singular while startup zeros sit
        # in the lag slots; the pseudo-inverse assigns those directions zero
        # gain, which is exact (they carry no uncertainty)
        J = filt_P[t] @ AH @ np.linalg.pinv(pred_P[t + 1], hermitian=True)
        smooth_m[t] = filt_m[t] + np.einsum(
            "bij,bj->bi", J, smooth_m[t + 1] - pred_m[t + 1])
        smooth_P[t] = _herm(
            filt_P[t] + J @ (smooth_P[t + 1] - pred_P[t + 1]) @ _hermT(J))
        cross[t + 1] = smooth_P[t + 1] @ _hermT(J)

    second = smooth_P + smooth_m[..., :, None] * smooth_m.conj()[..., None, :]
    means = smooth_m[:, :, sel].transpose(1, 2, 0)  # (B, K, T)
    variances_out = second[:, :, sel, sel].real.transpose(1, 2, 0)
    lag1 = np.zeros((n_bands, len(orders), n_frames), dtype=complex)
    for k, off in enumerate(offsets):
        lag1[:, k, 1:] = (
            cross[1:, :, off, off]
            + smooth_m[1:, :, off] * smooth_m[:-1, :, off].conj()
        ).T
    blocks = [
        second[:, :, off : off + s, off : off + s].transpose(1, 0, 2, 3)
        for off, s in zip(offsets, sizes)
    ]  # per component: (B, T, s, s) extended-lag moment matrices
    fitted = smooth_m[:, :, sel].sum(axis=2).T  # (B, T) posterior sum of components
    cPc = smooth_P[:, :, sel][:, :, :, sel].sum(axis=(2, 3)).real.T
    residual_power = np.abs(Y - fitted) ** 2 + cPc
    return means, variances_out, lag1, loglik, blocks, residual_power


def kalman_smooth_band(y, variances, ar_coeffs, orders, noise_var: float) -> BandPosterior:
    """Exact posterior for one band: (T,) data, (K, T) innovation powers,
    (K, P) AR coefficients, length-K orders, positive noise variance."""
    y = np.asarray(y, dtype=complex)
    variances = np.asarray(variances, dtype=float)
    ar_coeffs = np.atleast_2d(np.asarray(ar_coeffs, dtype=complex))
    orders = np.asarray(orders, dtype=int)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("y must be a nonempty vector")
    n_frames = y.size
    if variances.ndim != 2 or variances.shape[1] != n_frames:
        raise ValueError("variances must be (K, T)")
    if np.any(variances < 0) or not np.all(np.isfinite(variances)):
        raise ValueError("variances must be finite and nonnegative")
    if not (np.isfinite(noise_var) and noise_var > 0):
        raise ValueError("noise_var must be positive")
    k = variances.shape[0]
    if orders.shape != (k,) or orders.min() < 0:
        raise ValueError("orders must be K nonnegative integers")
    if ar_coeffs.shape[0] != k or ar_coeffs.shape[1] < max(1, int(orders.max())):
        raise ValueError("ar_coeffs must be (K, P) with P covering every order")
    means, second, lag1, loglik, blocks, resid = _smooth_group(
        y[None, :], np.maximum(variances, EPS)[None], ar_coeffs[None],
        orders, float(noise_var))
    return BandPosterior(
        means=means[0],
        variances=second[0],
        lag1=lag1[0],
        loglik=float(loglik[0]),
        moments=[b[0] for b in blocks],
        residual_power=resid[0],
    )


def _band_groups(orders: np.ndarray):
    """Group band indices by their per-component order signature."""
    groups = {}
    for f in range(orders.shape[1]):
        groups.setdefault(tuple(int(p) for p in orders[:, f]), []).append(f)
    return [(sig, np.asarray(idx)) for sig, idx in groups.items()]


def em_step(X: Spectrogram, model: ArNmfModel, update_w: bool = True,
            update_h: bool = True, update_ar: bool = True,
            update_noise: bool = True):
    """One exact E-step plus a generalized M-step.

    Returns ``(new_model, loglik)`` where the log-likelihood is the marginal
    likelihood of the *incoming* model (the E-step evaluates it for free).
    Any parameter group can be frozen; whatever remains enabled still only
    ever increases the expected complete-data likelihood.
    """
    if (model.n_bins, model.n_frames) != X.data.shape:
        raise ValueError(
            f"model for {(model.n_bins, model.n_frames)} does not match "
            f"spectrogram of shape {X.data.shape}"
        )
    return _em_step_data(X.data, model, update_w, update_h, update_ar,
                         update_noise)


def _em_step_data(data: np.ndarray, model: ArNmfModel, update_w: bool,
                  update_h: bool, update_ar: bool, update_noise: bool):
    n_bins, n_frames = data.shape
    n_comp = model.n_components
    V = model.component_variances()
    ar_new = model.ar.copy()
    innov_power = np.zeros((n_comp, n_bins, n_frames))
    total_loglik = 0.0
    residual_total = 0.0

    for sig, fidx in _band_groups(model.orders):
        means, second, lag1, loglik, blocks, resid = _smooth_group(
            data[fidx, :],
            V[:, fidx, :].transpose(1, 0, 2),
            model.ar[:, fidx, :].transpose(1, 0, 2),
            np.asarray(sig),
            model.noise_var,
        )
        total_loglik += float(loglik.sum())
        residual_total += float(resid.sum())
        for k, p in enumerate(sig):
            moments = blocks[k]  # (B, T, p+1, p+1)
            weights = 1.0 / V[k, fidx, :]  # (B, T), evaluated at the old factors
            if update_ar and p > 0:
                gram = np.einsum("bt,btij->bij", weights, moments)
                for row, f in enumerate(fidx):
                    # normal equations sum_p a_p G[p, q] = G[0, q], q = 1..P
                    lhs = gram[row, 1:, 1:].T
                    rhs = gram[row, 0, 1:]
                    try:
                        sol = np.linalg.solve(lhs, rhs)
                    except np.linalg.LinAlgError:
                        sol = np.zeros(p, dtype=complex)
                    if not np.all(np.isfinite(sol)):
                        sol = np.zeros(p, dtype=complex)
                    ar_new[k, f, :p] = sol
            # innovation power under the (possibly) updated coefficients
            avec = np.concatenate(
                [np.ones((len(fidx), 1), dtype=complex), -ar_new[k, fidx, :p]],
                axis=1,
            )
            q = np.einsum("bi,btij,bj->bt", avec, moments, avec.conj()).real
            innov_power[k, fidx, :] = np.maximum(q, 0.0)

    W_new = model.W.copy()
    H_new = model.H.copy()
    if update_w or update_h:
        for k in range(n_comp):
            pair = mur_step(
                innov_power[k],
                FactorPair(W_new[:, k : k + 1], H_new[k : k + 1, :]),
                kind=DivergenceKind.IS,
                update_w=update_w,
                update_h=update_h,
            )
            W_new[:, k] = pair.W[:, 0]
            H_new[k, :] = pair.H[0, :]

    noise_new = model.noise_var
    if update_noise:
        noise_new = max(residual_total / (n_bins * n_frames), _NOISE_FLOOR)

    new_model = ArNmfModel(W=W_new, H=H_new, ar=ar_new, orders=model.orders,
                           noise_var=noise_new)
    return new_model, total_loglik


def fit_ar_nmf(X: Spectrogram, n_components: int, iterations: int = 30,
               seed: int = 0, init: str | FactorPair = "klnmf",
               nmf_iterations: int = 30, order: int = 1,
               noise_var: float | None = None, update_ar: bool = True):
    """Fit the model to a spectrogram; returns (model, loglik trajectory).

    The variance factors start from a KL-NMF of the power spectrogram by
    default (``init`` may also be ``"isnmf"``, ``"random"``, or an explicit
    :class:`FactorPair`); AR coefficients start at zero — the static model —
    and the noise floor at one percent of the mean power.  The trajectory
    holds the marginal log-likelihood of the model *entering* each EM step
    (length ``iterations``), and it never decreases.

    Fitting only sees frames whose windows lie fully inside the signal.
    Boundary frames mix the padding with the signal, and because their
    variances shrink toward zero there, they get weights of order 1/V in the
    AR normal equations — a single straddling frame can outweigh every
    interior frame combined and drag the estimated poles toward zero.  The
    returned activations cover all frames again (boundary columns copy the
    nearest interior column), so separation still smooths the whole
    spectrogram.
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if order < 0:
        raise ValueError("order must be >= 0")
    power = np.abs(X.data) ** 2
    n_bins, n_frames = power.shape
    plan = X.plan
    t_lo = min(-(-plan.window_length // plan.hop), n_frames)
    t_hi = max(min(X.signal_length // plan.hop + 1, n_frames), t_lo)
    if t_hi - t_lo < 2:
        t_lo, t_hi = 0, n_frames
    fit_power = power[:, t_lo:t_hi]
    fit_frames = t_hi - t_lo
    if isinstance(init, FactorPair):
        if init.W.shape != (n_bins, n_components) or init.H.shape[1] != n_frames:
            raise ValueError("init factors do not match the spectrogram")
        pair = FactorPair(init.W.copy(), init.H[:, t_lo:t_hi].copy())
    elif init == "klnmf":
        pair, _ = fit_nmf(fit_power, n_components, kind=DivergenceKind.KL,
                          iterations=nmf_iterations, seed=seed)
    elif init == "isnmf":
        # IS updates from a flat random start tend to park a component on the
        # broadband floor; a KL pass first hands them a harmonic split to
        # refine under the IS weighting.
        warm, _ = fit_nmf(fit_power, n_components, kind=DivergenceKind.KL,
                          iterations=nmf_iterations, seed=seed)
        pair, _ = fit_nmf(fit_power, n_components, kind=DivergenceKind.IS,
                          iterations=nmf_iterations, seed=seed, init=warm)
    elif init == "random":
        pair = random_factor_pair(n_bins, fit_frames, n_components,
                                  fit_power.mean(), seed)
    else:
        raise ValueError(f"unknown init {init!r}")
    model = ArNmfModel(
        W=pair.W.copy(),
        H=pair.H.copy(),
        ar=np.zeros((n_components, n_bins, max(order, 1)), dtype=complex),
        orders=np.full((n_components, n_bins), order, dtype=int),
        noise_var=noise_var if noise_var is not None else 0.01 * float(fit_power.mean()),
    )
    trajectory = []
    fit_data = X.data[:, t_lo:t_hi]
    for _ in range(iterations):
        model, loglik = _em_step_data(fit_data, model, True, True,
                                      update_ar, True)
        trajectory.append(loglik)
    if fit_frames != n_frames:
        H_full = np.empty((n_components, n_frames))
        H_full[:, t_lo:t_hi] = model.H
        H_full[:, :t_lo] = model.H[:, :1]
        H_full[:, t_hi:] = model.H[:, -1:]
        model = ArNmfModel(W=model.W, H=H_full, ar=model.ar,
                           orders=model.orders, noise_var=model.noise_var)
    return model, np.asarray(trajectory)


def ar_nmf_separate(X: Spectrogram, model: ArNmfModel, grouping=None):
    """Posterior-mean separation: each source is its components' smoothed
    means per band, synthesized back to a signal."""
    from .phase import SourceEstimateSet

    if (model.n_bins, model.n_frames) != X.data.shape:
        raise ValueError("model does not match the spectrogram")
    V = model.component_variances()
    means = np.zeros((model.n_components,) + X.data.shape, dtype=complex)
    for sig, fidx in _band_groups(model.orders):
        out = _smooth_group(
            X.data[fidx, :],
            V[:, fidx, :].transpose(1, 0, 2),
            model.ar[:, fidx, :].transpose(1, 0, 2),
            np.asarray(sig),
            model.noise_var,
        )
        means[:, fidx, :] = out[0].transpose(1, 0, 2)
    if grouping is None:
        grouping = np.arange(model.n_components)
    grouping = np.asarray(grouping)
    if grouping.shape != (model.n_components,) or not np.issubdtype(
            grouping.dtype, np.integer):
        raise ValueError("grouping must assign an integer source to each component")
    if grouping.min() < 0:
        raise ValueError("grouping contains negative source indices")
    specs = []
    for s in range(int(grouping.max()) + 1):
        members = np.flatnonzero(grouping == s)
        if members.size == 0:
            raise ValueError("grouping leaves a source with no components")
        specs.append(X.with_data(means[members].sum(axis=0)))
    return SourceEstimateSet.from_spectrograms(specs, X)


def stack_models(models, noise_var: float | None = None) -> ArNmfModel:
    """Concatenate per-source models into one joint model.

    Used by the oracle protocol: each source is learned in isolation, then
    the mixture is separated under the stacked model.  Noise variances add
    (independent observation noise per learned model) unless overridden.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    n_bins = models[0].n_bins
    n_frames = models[0].n_frames
    if any(m.n_bins != n_bins or m.n_frames != n_frames for m in models):
        raise ValueError("models must share the spectrogram geometry")
    max_p = max(m.ar.shape[2] for m in models)
    ar_parts = []
    for m in models:
        pad = max_p - m.ar.shape[2]
        ar_parts.append(np.pad(m.ar, ((0, 0), (0, 0), (0, pad))))
    return ArNmfModel(
        W=np.hstack([m.W for m in models]),
        H=np.vstack([m.H for m in models]),
        ar=np.concatenate(ar_parts, axis=0),
        orders=np.concatenate([m.orders for m in models], axis=0),
        noise_var=noise_var if noise_var is not None
        else float(sum(m.noise_var for m in models)),
    )
