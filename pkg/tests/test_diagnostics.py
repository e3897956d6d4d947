"""Diagnostics: Jacobi spectra, effective rank vs exact rank, dormancy."""

from fractions import Fraction

import numpy as np
import pytest

from sprlab import diagnostics as D
from sprlab import tensor as T


def exact_rank_gaussian_elimination(matrix: np.ndarray) -> int:
    """Exact rank over the rationals; fully independent of the spectrum path."""
    rows = [[Fraction(int(x)) for x in row] for row in matrix.astype(int)]
    rank = 0
    n_rows, n_cols = len(rows), len(rows[0])
    pivot_row = 0
    for col in range(n_cols):
        pivot = next((r for r in range(pivot_row, n_rows) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[pivot_row], rows[pivot] = rows[pivot], rows[pivot_row]
        lead = rows[pivot_row][col]
        for r in range(pivot_row + 1, n_rows):
            if rows[r][col] != 0:
                factor = rows[r][col] / lead
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[pivot_row])]
        pivot_row += 1
        rank += 1
        if pivot_row == n_rows:
            break
    return rank


def test_singular_values_identity():
    np.testing.assert_allclose(D.singular_values(np.eye(5)), np.ones(5), atol=1e-10)


def test_singular_values_rank_one_outer_product():
    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    sv = D.singular_values(np.outer(u, v))
    np.testing.assert_allclose(sv[0], np.linalg.norm(u) * np.linalg.norm(v), atol=1e-9)
    np.testing.assert_allclose(sv[1:], 0.0, atol=1e-9)


def test_singular_values_diagonal():
    sv = D.singular_values(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(sv, [3.0, 1.0], atol=1e-12)
    with pytest.raises(T.NumericError):
        D.singular_values(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_singular_values_match_numpy_reference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = rng.normal(size=(12, 7))
        mine = D.singular_values(f)
        ref = np.sort(np.linalg.svd(f, compute_uv=False))[::-1]
        np.testing.assert_allclose(mine, ref, atol=1e-8)


def test_srank_examples():
    assert D.srank(np.array([10.0, 1e-6]), 0.01) == 1
    assert D.srank(np.array([3.0, 1.0]), 0.01) == 2  # 3/4 < 0.99
    assert D.srank(np.ones(5), 0.01) == 5
    with pytest.raises(T.ContractError):
        D.srank(np.zeros(3))
    with pytest.raises(T.ContractError):
        D.srank(np.array([1.0, 2.0]))
    with pytest.raises(T.DomainError):
        D.srank(np.array([1.0]), delta=0.0)


def test_srank_matches_exact_rank_on_integer_matrices():
    rng = np.random.default_rng(42)
    checked = 0
    attempts = 0
    while checked < 50 and attempts < 500:
        attempts += 1
        n = int(rng.integers(2, 9))
        r = int(rng.integers(1, n + 1))
        left = rng.integers(-3, 4, size=(n, r))
        right = rng.integers(-3, 4, size=(r, n))
        m = (left @ right).astype(float)
        if not m.any():
            continue
        spectrum = D.singular_values(m)
        exact = exact_rank_gaussian_elimination(m)
        positive = spectrum[spectrum > 1e-9 * spectrum[0]]
        # Clean spectrum: every nonzero singular value carries clearly more
        # than a delta share of the mass, so srank == exact rank.
        if positive.size != exact or positive.min() < 0.05 * spectrum.sum():
            continue
        assert D.srank(spectrum, 0.01) == exact
        checked += 1
    assert checked == 50


def test_srank_scale_invariance():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(10, 6))
    base = D.singular_values(f)
    scaled = D.singular_values(4.0 * f)
    assert D.srank(base) == D.srank(scaled)
    np.testing.assert_allclose(scaled, 4.0 * base, rtol=1e-12, atol=1e-12)


def test_dormant_fraction_cases():
    frac, scores = D.dormant_fraction(np.zeros((3, 4)), tau=0.025)
    assert frac == 1.0
    frac, scores = D.dormant_fraction(np.array([[0.0, 5.0], [0.0, 3.0]]), tau=0.0)
    assert frac == 0.5
    np.testing.assert_allclose(scores, [0.0, 2.0])
    frac, _ = D.dormant_fraction(np.abs(np.random.default_rng(2).normal(size=(6, 5))) + 0.5, tau=0.0)
    assert frac == 0.0


def test_dormant_fraction_scale_invariance():
    rng = np.random.default_rng(3)
    acts = rng.normal(size=(8, 6))
    f1, s1 = D.dormant_fraction(acts, tau=0.025)
    f2, s2 = D.dormant_fraction(512.0 * acts, tau=0.025)
    assert f1 == f2
    np.testing.assert_allclose(s1, s2, atol=1e-12)


def test_probe_reports_shape():
    from sprlab import networks as N

    sizes = N.NetworkSizes(d_obs=6, n_actions=4, hidden=8, d_lat=5, d_emb=3)
    nets = N.AgentNetworks.build(sizes, np.random.default_rng(0), predictor_enabled=False)
    probe = np.random.default_rng(1).uniform(0, 1, (16, 6))
    ranks, dormancy = D.probe_reports(nets, probe, step=0)
    assert {r.layer for r in ranks} <= set(D.PROBE_LAYERS)
    assert len(dormancy) == 3
    for r in ranks:
        assert 1 <= r.srank <= min(16, len(r.singular_values))
        assert all(a >= b - 1e-12 for a, b in zip(r.singular_values, r.singular_values[1:]))
    payloads = [r.to_json() for r in ranks] + [d.to_json() for d in dormancy]
    assert all("layer" in p for p in payloads)
