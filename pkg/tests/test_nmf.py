import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmfsep.nmf import EPS, DivergenceKind, FactorPair, divergence, fit_nmf, mur_step

V_PIN = np.array([[1.0, 2.0], [3.0, 4.0]])
VH_PIN = np.array([[2.0, 1.0], [1.0, 5.0]])
W_PIN = np.array([[0.5, 2.0], [1.0, 0.25]])


def direct_divergence(V, Vhat, kind, weights=None):
    """Entry-by-entry loop oracle."""
    total = 0.0
    for i in range(V.shape[0]):
        for j in range(V.shape[1]):
            v, y = V[i, j], Vhat[i, j]
            if kind == "kl":
                term = (v * math.log(v / y) if v > 0 else 0.0) - v + y
            elif kind == "is":
                r = max(v, EPS) / y
                term = r - math.log(r) - 1.0
            else:
                term = (v - y) ** 2
            if weights is not None:
                term *= weights[i, j]
            total += term
    return total


# ------------------------------------------------------------- divergence

def test_pinned_divergence_values():
    # frozen from the independent oracle script
    assert divergence(V_PIN, VH_PIN, DivergenceKind.KL) == pytest.approx(2.0964098413074357, abs=1e-14)
    assert divergence(V_PIN, VH_PIN, DivergenceKind.IS) == pytest.approx(1.4245312626461, abs=1e-12)
    assert divergence(V_PIN, VH_PIN, DivergenceKind.EUCLIDEAN, weights=W_PIN) == pytest.approx(6.75, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["kl", "is", "euclidean"]))
def test_divergence_matches_loop_oracle(seed, kind):
    rng = np.random.default_rng(seed)
    V = rng.random((3, 4)) * 5
    Vhat = rng.random((3, 4)) * 5 + 0.1
    w = rng.random((3, 4))
    assert divergence(V, Vhat, kind) == pytest.approx(direct_divergence(V, Vhat, kind), rel=1e-12)
    assert divergence(V, Vhat, kind, weights=w) == pytest.approx(
        direct_divergence(V, Vhat, kind, w), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_divergence_identity_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    V = rng.random((4, 3)) + 0.05
    for kind in DivergenceKind:
        assert divergence(V, V, kind) == pytest.approx(0.0, abs=1e-12)
        assert divergence(V, rng.random((4, 3)) + 0.05, kind) >= 0.0


def test_kl_zero_convention():
    V = np.array([[0.0, 1.0]])
    Vhat = np.array([[2.0, 1.0]])
    # 0*log(0/2) = 0 leaves only the -V+Vhat part
    assert divergence(V, Vhat, DivergenceKind.KL) == pytest.approx(2.0)


def test_divergence_input_validation():
    with pytest.raises(ValueError):
        divergence(V_PIN, np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        divergence(-V_PIN, VH_PIN)
    with pytest.raises(ValueError):
        divergence(V_PIN, VH_PIN[:1])
    with pytest.raises(ValueError):
        divergence(V_PIN, VH_PIN, weights=-W_PIN)


# -------------------------------------------------------------- mur_step

@pytest.mark.parametrize("kind", list(DivergenceKind))
def test_sweep_never_increases_divergence(kind):
    for seed in range(40):
        rng = np.random.default_rng(seed)
        F, T, K = rng.integers(2, 9), rng.integers(2, 9), rng.integers(1, 4)
        V = rng.random((F, T)) * 10
        V[rng.random((F, T)) < 0.15] = 0.0  # sprinkle exact zeros
        factors = FactorPair(rng.random((F, K)) + 1e-3, rng.random((K, T)) + 1e-3)
        w = rng.random((F, T)) + 0.1 if kind is DivergenceKind.EUCLIDEAN else None
        for _ in range(3):
            before = divergence(V, factors.product(), kind, w)
            factors = mur_step(V, factors, kind, w)
            after = divergence(V, factors.product(), kind, w)
            assert after <= before + 1e-10


@pytest.mark.parametrize("kind", list(DivergenceKind))
def test_exact_factorization_is_a_fixed_point(kind):
    rng = np.random.default_rng(5)
    W = rng.random((6, 2)) + 0.2
    H = rng.random((2, 7)) + 0.2
    V = W @ H
    out = mur_step(V, FactorPair(W, H), kind)
    assert np.abs(out.W - W).max() < 1e-12 * W.max()
    assert np.abs(out.H - H).max() < 1e-12 * H.max()


def test_zero_rows_and_columns_stay_finite():
    rng = np.random.default_rng(2)
    V = rng.random((5, 6))
    V[2, :] = 0.0
    V[:, 3] = 0.0
    factors = FactorPair(rng.random((5, 2)), rng.random((2, 6)))
    for kind in DivergenceKind:
        out = mur_step(V, factors, kind)
        assert np.all(np.isfinite(out.W)) and np.all(np.isfinite(out.H))
        assert out.W.min() >= EPS and out.H.min() >= EPS


# --------------------------------------------------------------- fit_nmf

def test_fit_is_deterministic_and_monotone():
    rng = np.random.default_rng(11)
    V = rng.random((12, 9)) * 3
    f1, t1 = fit_nmf(V, 3, DivergenceKind.KL, iterations=30, seed=42)
    f2, t2 = fit_nmf(V, 3, DivergenceKind.KL, iterations=30, seed=42)
    assert np.array_equal(f1.W, f2.W) and np.array_equal(f1.H, f2.H)
    assert np.array_equal(t1, t2)
    assert len(t1) == 31
    assert all(b <= a + 1e-10 for a, b in zip(t1, t1[1:]))


def test_fit_all_kinds_reduce_divergence():
    rng = np.random.default_rng(3)
    V = np.abs(rng.standard_normal((10, 8))) + 0.01
    for kind in DivergenceKind:
        _, traj = fit_nmf(V, 2, kind, iterations=15, seed=1)
        assert traj[-1] < traj[0]


def test_fit_init_is_scale_matched():
    rng = np.random.default_rng(7)
    V = rng.random((20, 15)) * 100
    factors, _ = fit_nmf(V, 2, iterations=1, seed=0)
    # one sweep from a scale-matched start cannot be wildly off
    assert 0.1 < factors.product().mean() / V.mean() < 10


def test_fit_continues_from_given_factors():
    rng = np.random.default_rng(19)
    V = rng.random((12, 9)) * 3
    warm, t1 = fit_nmf(V, 3, DivergenceKind.KL, iterations=10, seed=4)
    cont, t2 = fit_nmf(V, 3, DivergenceKind.KL, iterations=10, seed=99, init=warm)
    # the continuation picks up where the warm run stopped, seed ignored
    assert t2[0] == pytest.approx(t1[-1])
    assert t2[-1] <= t2[0]
    assert np.array_equal(warm.W, fit_nmf(V, 3, iterations=10, seed=4)[0].W)
    with pytest.raises(ValueError, match="init factors"):
        fit_nmf(V, 2, init=warm)


def test_fit_rejects_bad_rank_and_inputs():
    V = np.ones((4, 5))
    with pytest.raises(ValueError):
        fit_nmf(V, 5)
    with pytest.raises(ValueError):
        fit_nmf(V, 0)
    with pytest.raises(ValueError):
        fit_nmf(V, 2, iterations=0)
    with pytest.raises(ValueError):
        fit_nmf(np.ones(4), 1)


def test_factor_pair_validation_and_diagnostics():
    with pytest.raises(ValueError):
        FactorPair(np.ones((3, 2)), np.ones((3, 4)))
    with pytest.raises(ValueError):
        FactorPair(-np.ones((3, 2)), np.ones((2, 4)))
    with pytest.raises(ValueError):
        FactorPair(np.full((3, 2), np.nan), np.ones((2, 4)))
    pair = FactorPair(np.ones((10, 2)), np.ones((2, 5)))
    assert pair.n_components == 2
    assert pair.compression_ratio == pytest.approx(2 * 15 / 50)
    assert pair.component(1).shape == (10, 5)
