# tests/test_polybases.py - 多項式基底と係数変換のテスト

"""
Chebyshev / Bernstein / Jacobi / GPR の係数行列 Φ と Θ = Φ^T w の変換
"""

import sys
from pathlib import Path

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np
import pytest

from src.error_handling import GraphValidationException
from src.polybases import (
    MAX_DEGREE,
    apply_basis_filter,
    apply_krylov_filter,
    bernstein_coeffs,
    chebyshev_coeffs,
    describe_domain,
    eval_basis_rows,
    eval_filter_response,
    export_coeffs_csv,
    gpr_coeffs,
    jacobi_coeffs,
    krylov_weights,
    make_coeffs,
    monomial_coeffs,
    monomial_weights,
)
from src.propagation import build_krylov_basis, build_propagator
from src.spectral import eig_oracle
from src.theorem_suites import random_test_graph


def test_chebyshev_rows():
    """T_0 = 1, T_1 = x, T_2 = 2x² − 1"""
    phi = chebyshev_coeffs(2).phi
    np.testing.assert_array_equal(phi[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(phi[1], [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(phi[2], [-1.0, 0.0, 2.0])


def test_chebyshev_bounded_on_unit_interval():
    """|T_k(u)| ≤ 1 (u ∈ [−1, 1]、1000 点)"""
    rows = eval_basis_rows(chebyshev_coeffs(10), np.linspace(-1.0, 1.0, 1000))
    assert np.max(np.abs(rows)) <= 1.0 + 1e-9


def test_bernstein_degree_one():
    """K=1: (2−λ)/2 → [1, −1/2]、λ/2 → [0, 1/2]"""
    phi = bernstein_coeffs(1).phi
    np.testing.assert_allclose(phi[0], [1.0, -0.5])
    np.testing.assert_allclose(phi[1], [0.0, 0.5])


def test_bernstein_partition_of_unity_and_nonnegative():
    """K=5 の行の和は定数 1、各行は λ ∈ [0, 2] で非負"""
    coeffs = bernstein_coeffs(5)
    np.testing.assert_allclose(coeffs.phi.sum(axis=0), [1.0, 0, 0, 0, 0, 0], atol=1e-12)
    rows = eval_basis_rows(coeffs, np.linspace(0.0, 2.0, 500))
    assert np.min(rows) >= -1e-12


def test_jacobi_legendre_cases():
    """P_0 = 1、P_1(1−λ) = 1−λ、P_2(0) = −1/2"""
    coeffs = jacobi_coeffs(2, 0.0, 0.0)
    np.testing.assert_allclose(coeffs.phi[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(coeffs.phi[1], [1.0, -1.0, 0.0])
    assert eval_basis_rows(coeffs, [1.0])[2, 0] == pytest.approx(-0.5)


def test_jacobi_general_parameters():
    """P_1^{a,b}(z) = (a+1) + (a+b+2)(z−1)/2 を z = 1−λ で確認"""
    a, b = 1.5, 0.5
    coeffs = jacobi_coeffs(3, a, b)
    lam = np.array([0.0, 0.4, 1.3])
    z = 1.0 - lam
    expected = (a + 1.0) + (a + b + 2.0) * (z - 1.0) / 2.0
    np.testing.assert_allclose(eval_basis_rows(coeffs, lam)[1], expected)


def test_jacobi_rejects_invalid_parameters():
    with pytest.raises(GraphValidationException):
        jacobi_coeffs(3, -1.0, 0.0)


def test_identity_kinds():
    """単項式 / GPR は Φ = I"""
    np.testing.assert_array_equal(monomial_coeffs(4).phi, np.eye(5))
    np.testing.assert_array_equal(gpr_coeffs(4).phi, np.eye(5))


def test_degree_limits():
    with pytest.raises(GraphValidationException):
        chebyshev_coeffs(MAX_DEGREE + 1)
    with pytest.raises(GraphValidationException):
        bernstein_coeffs(-1)
    with pytest.raises(GraphValidationException):
        make_coeffs("gaussian", 3)


def test_response_constant_first_basis():
    """w = e_0 なら応答は常に 1"""
    lambdas = np.linspace(0.0, 2.0, 11)
    for kind in ("monomial", "gpr", "chebyshev", "jacobi"):
        coeffs = make_coeffs(kind, 4)
        w = np.zeros(5)
        w[0] = 1.0
        np.testing.assert_allclose(eval_filter_response(coeffs, w, lambdas), 1.0)


def test_response_low_pass_example():
    """−λ³/10 + λ²/2 − λ + 1 は λ=0 で 1"""
    coeffs = monomial_coeffs(3)
    assert eval_filter_response(coeffs, [1.0, -1.0, 0.5, -0.1], [0.0])[0] == pytest.approx(1.0)


def test_response_quartic_example():
    """λ⁴ − 4λ³ + 4λ² は λ=1 で 1"""
    coeffs = monomial_coeffs(4)
    assert eval_filter_response(coeffs, [0.0, 0.0, 4.0, -4.0, 1.0], [1.0])[0] == pytest.approx(1.0)


def test_response_learned_gpr_filters():
    """(1−λ) の冪の学習済みフィルター: λ=0 で係数和、λ=1 で定数項"""
    coeffs = gpr_coeffs(4)
    homophilous = [1.2416, 0.8853, 0.8428, 0.7282, 0.6558]
    assert eval_filter_response(coeffs, homophilous, [0.0])[0] == pytest.approx(4.3537)
    heterophilous = [0.0487, -0.027, 0.31, -0.12, 0.05]
    assert eval_filter_response(coeffs, heterophilous, [1.0])[0] == pytest.approx(0.0487)


def test_response_length_mismatch():
    with pytest.raises(GraphValidationException):
        eval_filter_response(chebyshev_coeffs(3), [1.0, 2.0], [0.0])


def test_monomial_and_krylov_weights():
    """Θ = Φ^T w、単項式基底 λ の P 展開は I − P"""
    coeffs = chebyshev_coeffs(2)
    np.testing.assert_allclose(monomial_weights(coeffs, [1.0, 2.0, 3.0]), [-2.0, 2.0, 6.0])
    np.testing.assert_allclose(krylov_weights(monomial_coeffs(1), [0.0, 1.0]), [1.0, -1.0])
    np.testing.assert_allclose(krylov_weights(gpr_coeffs(3), [1.0, 2.0, 3.0, 4.0]), [1.0, 2.0, 3.0, 4.0])


@pytest.mark.parametrize("kind", ["monomial", "gpr", "chebyshev", "bernstein", "jacobi"])
def test_filter_recurrence_matches_conversion(kind):
    """基底の漸化式による Σ w_k B_k x と Σ θ_j P^j x が一致する (1e-8)"""
    rng = np.random.default_rng(42)
    g = random_test_graph(21, 15, 25)
    p = build_propagator(g, 0.85)
    x = rng.standard_normal((g.n, 2))
    coeffs = make_coeffs(kind, 6, 0.5, 1.0) if kind == "jacobi" else make_coeffs(kind, 6)
    for _ in range(5):
        w = rng.standard_normal(7)
        direct = apply_basis_filter(coeffs, w, p, x)
        converted = apply_krylov_filter(krylov_weights(coeffs, w), p, x)
        assert np.linalg.norm(direct - converted) <= 1e-8 * max(np.linalg.norm(direct), 1.0)


@pytest.mark.parametrize("kind", ["chebyshev", "bernstein", "jacobi"])
def test_filtered_signal_in_krylov_span(kind):
    """K=8 のフィルター出力は span{x, Px, …, P^8 x} に入る"""
    rng = np.random.default_rng(7)
    g = random_test_graph(22, 20, 30)
    p = build_propagator(g, 1.0)
    x = rng.standard_normal(g.n)
    coeffs = make_coeffs(kind, 8)
    span = build_krylov_basis(p, x, 8).blocks[:, :, 0].T
    for _ in range(5):
        filtered = apply_basis_filter(coeffs, rng.standard_normal(9), p, x).ravel()
        solution = np.linalg.lstsq(span, filtered, rcond=None)[0]
        assert np.linalg.norm(span @ solution - filtered) < 1e-8 * np.linalg.norm(filtered)


@pytest.mark.parametrize("kind", ["monomial", "gpr", "chebyshev", "bernstein", "jacobi"])
def test_filter_matches_spectral_definition(kind):
    """U g_w(Λ) U^T x と行列上の漸化式が一致する"""
    rng = np.random.default_rng(3)
    g = random_test_graph(23, 10, 15)
    tau = 0.75
    p = build_propagator(g, tau)
    report = eig_oracle(g, tau)
    coeffs = make_coeffs(kind, 5)
    w = rng.standard_normal(6)
    x = rng.standard_normal(g.n)
    response = eval_filter_response(coeffs, w, report.eigenvalues)
    expected = report.eigenvectors @ (response * (report.eigenvectors.T @ x))
    np.testing.assert_allclose(apply_basis_filter(coeffs, w, p, x), expected, atol=1e-9)


def test_describe_domain():
    domain = describe_domain(chebyshev_coeffs(3))
    assert domain["argument_domain"] == [-1.0, 1.0]
    assert describe_domain(gpr_coeffs(3))["argument_domain"] == [-1.0, 1.0]
    assert describe_domain(bernstein_coeffs(3))["argument_domain"] == [0.0, 2.0]


def test_export_coeffs_csv(tmp_path):
    path = tmp_path / "phi.csv"
    export_coeffs_csv(chebyshev_coeffs(2), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "basis,c0,c1,c2"
    assert lines[3] == "chebyshev_2,-1.0,0.0,2.0"
