# src/polybases.py - 古典的多項式フィルター基底

"""
Chebyshev / GPR(単項式) / Bernstein / Jacobi 基底
各基底を単項式係数行列 Φ に変換し、Θ = Φ^T w で Krylov 形式に統一する
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly
from scipy.special import comb

from .error_handling import GraphValidationException
from .propagation import TauPropagator, laplacian_tau

LOGGER = logging.getLogger(__name__)

MAX_DEGREE = 30

# 基底の引数 u = slope·λ + intercept (λ は L_τ の固有値)
_ARGUMENT_MAPS: Dict[str, tuple] = {
    "monomial": (1.0, 0.0),
    "gpr": (-1.0, 1.0),
    "chebyshev": (1.0, -1.0),
    "bernstein": (1.0, 0.0),
    "jacobi": (1.0, 0.0),
}


@dataclass(frozen=True, eq=False)
class PolyCoeffMatrix:
    """Φ の i 行目は基底多項式 i の単項式係数 (引数 u について昇冪)"""
    kind: str
    degree: int
    phi: np.ndarray
    slope: float
    intercept: float
    jacobi_a: float = 0.0
    jacobi_b: float = 0.0

    @property
    def matrix_argument(self) -> tuple:
        """u に対応する行列 a·P_τ + b·I の (a, b)"""
        return -self.slope, self.slope + self.intercept


def _check_degree(K: int) -> None:
    if K < 0 or K > MAX_DEGREE:
        raise GraphValidationException(f"次数 K は 0..{MAX_DEGREE} である必要があります (K={K})", field="K", value=K)


def _pad(coef: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size, dtype=np.float64)
    coef = np.trim_zeros(np.asarray(coef, dtype=np.float64), "b")[:size]
    out[:coef.size] = coef
    return out


def _make(kind: str, K: int, phi: np.ndarray, **kwargs) -> PolyCoeffMatrix:
    slope, intercept = _ARGUMENT_MAPS[kind]
    return PolyCoeffMatrix(kind=kind, degree=K, phi=phi, slope=slope, intercept=intercept, **kwargs)


def monomial_coeffs(K: int) -> PolyCoeffMatrix:
    _check_degree(K)
    return _make("monomial", K, np.eye(K + 1))


def gpr_coeffs(K: int) -> PolyCoeffMatrix:
    """GPR 基底 (1−λ)^k: 引数 u = 1−λ の単項式なので Φ = I"""
    _check_degree(K)
    return _make("gpr", K, np.eye(K + 1))


def chebyshev_coeffs(K: int) -> PolyCoeffMatrix:
    """T_k(u) の単項式係数 (u = λ − 1、λ_max = 2 の正規化)"""
    _check_degree(K)
    phi = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        unit = np.zeros(k + 1)
        unit[k] = 1.0
        phi[k] = _pad(npcheb.cheb2poly(unit), K + 1)
    return _make("chebyshev", K, phi)


def bernstein_coeffs(K: int) -> PolyCoeffMatrix:
    """(1/2^K)·C(K,k)·(2−λ)^{K−k}·λ^k の λ に関する単項式係数"""
    _check_degree(K)
    phi = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        poly = nppoly.polymul(nppoly.polypow([2.0, -1.0], K - k), nppoly.polypow([0.0, 1.0], k))
        phi[k] = _pad(poly * (comb(K, k, exact=True) / 2.0 ** K), K + 1)
    return _make("bernstein", K, phi)


def _jacobi_in_z(K: int, a: float, b: float) -> List[np.ndarray]:
    """標準の三項漸化式による P_k^{a,b}(z) の係数"""
    polys = [np.array([1.0])]
    if K >= 1:
        polys.append(np.array([(a + 1.0) - (a + b + 2.0) / 2.0, (a + b + 2.0) / 2.0]))
    for k in range(2, K + 1):
        c = 2 * k + a + b
        denom = 2.0 * k * (k + a + b) * (c - 2.0)
        linear = nppoly.polymul([a * a - b * b, c * (c - 2.0)], polys[k - 1]) * (c - 1.0)
        previous = 2.0 * (k + a - 1.0) * (k + b - 1.0) * c * polys[k - 2]
        polys.append(nppoly.polysub(linear, previous) / denom)
    return polys


def jacobi_coeffs(K: int, a: float = 0.0, b: float = 0.0) -> PolyCoeffMatrix:
    """P_k^{a,b}(1−λ) の λ に関する単項式係数"""
    _check_degree(K)
    if a <= -1.0 or b <= -1.0:
        raise GraphValidationException(f"Jacobi パラメータは a, b > −1 が必要です (a={a}, b={b})",
                                       field="jacobi", value=[a, b])
    phi = np.zeros((K + 1, K + 1))
    substitution = np.polynomial.Polynomial([1.0, -1.0])
    for k, coef in enumerate(_jacobi_in_z(K, a, b)):
        phi[k] = _pad(np.polynomial.Polynomial(coef)(substitution).coef, K + 1)
    return _make("jacobi", K, phi, jacobi_a=float(a), jacobi_b=float(b))


def make_coeffs(kind: str, K: int, a: float = 0.0, b: float = 0.0) -> PolyCoeffMatrix:
    """基底名から係数行列を作る"""
    factories = {
        "monomial": monomial_coeffs,
        "gpr": gpr_coeffs,
        "chebyshev": chebyshev_coeffs,
        "bernstein": bernstein_coeffs,
    }
    if kind == "jacobi":
        return jacobi_coeffs(K, a, b)
    if kind not in factories:
        raise GraphValidationException(f"未知の基底です: {kind}", field="kind", value=kind)
    return factories[kind](K)


# === 重み変換 ===

def _check_weights(coeffs: PolyCoeffMatrix, w: Sequence[float]) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size != coeffs.degree + 1:
        raise GraphValidationException(
            f"重み長 {w.size} が K+1 = {coeffs.degree + 1} と一致しません",
            field="w",
            value=int(w.size)
        )
    return w


def monomial_weights(coeffs: PolyCoeffMatrix, w: Sequence[float]) -> np.ndarray:
    """Θ = Φ^T w (基底の引数 u に関する単項式係数)"""
    return coeffs.phi.T @ _check_weights(coeffs, w)


def krylov_weights(coeffs: PolyCoeffMatrix, w: Sequence[float]) -> np.ndarray:
    """Σ_i Θ_i (aP + bI)^i を P の冪の係数に展開する"""
    theta = monomial_weights(coeffs, w)
    a, b = coeffs.matrix_argument
    expanded = np.polynomial.Polynomial(theta)(np.polynomial.Polynomial([b, a])).coef
    return _pad(expanded, coeffs.degree + 1)


def eval_filter_response(coeffs: PolyCoeffMatrix, w: Sequence[float], lambdas: Sequence[float]) -> np.ndarray:
    """g_w(λ) を Θ = Φ^T w と Horner 法で評価する"""
    theta = monomial_weights(coeffs, w)
    u = coeffs.slope * np.asarray(lambdas, dtype=np.float64) + coeffs.intercept
    return nppoly.polyval(u, theta)


def eval_basis_rows(coeffs: PolyCoeffMatrix, u: Sequence[float]) -> np.ndarray:
    """各基底多項式を引数 u で評価した (K+1, len(u)) 配列"""
    u = np.asarray(u, dtype=np.float64)
    return np.stack([nppoly.polyval(u, row) for row in coeffs.phi])


def describe_domain(coeffs: PolyCoeffMatrix) -> Dict[str, object]:
    """λ ∈ [0, 2] に対応する基底引数の区間"""
    ends = sorted([coeffs.intercept, 2.0 * coeffs.slope + coeffs.intercept])
    return {
        "kind": coeffs.kind,
        "argument": f"u = {coeffs.slope:g}*lambda + {coeffs.intercept:g}",
        "lambda_domain": [0.0, 2.0],
        "argument_domain": ends,
    }


# === 行列上でのフィルター適用 ===

def apply_basis_filter(
    coeffs: PolyCoeffMatrix,
    w: Sequence[float],
    p: TauPropagator,
    x: np.ndarray
) -> np.ndarray:
    """Σ_k w_k B_k(M) x を各基底固有の漸化式で計算する (M は u に対応する行列)"""
    w = _check_weights(coeffs, w)
    x = np.asarray(x, dtype=np.float64)
    K = coeffs.degree
    kind = coeffs.kind

    if kind in ("monomial", "gpr"):
        matrix = laplacian_tau(p) if kind == "monomial" else p.matrix
        term = x.copy()
        out = w[0] * term
        for k in range(1, K + 1):
            term = matrix @ term
            out = out + w[k] * term
        return out

    if kind == "chebyshev":
        # M = L_τ − I = −P_τ
        previous, current = x, -(p.matrix @ x)
        out = w[0] * previous
        if K >= 1:
            out = out + w[1] * current
        for k in range(2, K + 1):
            previous, current = current, 2.0 * -(p.matrix @ current) - previous
            out = out + w[k] * current
        return out

    if kind == "bernstein":
        laplacian = laplacian_tau(p)
        powers = [x]
        for _ in range(K):
            powers.append(laplacian @ powers[-1])
        out = np.zeros_like(x)
        for k in range(K + 1):
            term = powers[k]
            # 2I − L_τ = I + P_τ
            for _ in range(K - k):
                term = term + p.matrix @ term
            out = out + w[k] * (comb(K, k, exact=True) / 2.0 ** K) * term
        return out

    if kind == "jacobi":
        a, b = coeffs.jacobi_a, coeffs.jacobi_b
        terms = [x]
        if K >= 1:
            pz = p.matrix @ x
            terms.append((a + 1.0 - (a + b + 2.0) / 2.0) * x + (a + b + 2.0) / 2.0 * pz)
        for k in range(2, K + 1):
            c = 2 * k + a + b
            denom = 2.0 * k * (k + a + b) * (c - 2.0)
            pz = p.matrix @ terms[k - 1]
            linear = (c - 1.0) * (c * (c - 2.0) * pz + (a * a - b * b) * terms[k - 1])
            previous = 2.0 * (k + a - 1.0) * (k + b - 1.0) * c * terms[k - 2]
            terms.append((linear - previous) / denom)
        out = np.zeros_like(x)
        for k in range(K + 1):
            out = out + w[k] * terms[k]
        return out

    raise GraphValidationException(f"未知の基底です: {kind}", field="kind", value=kind)


def apply_krylov_filter(theta_p: Sequence[float], p: TauPropagator, x: np.ndarray) -> np.ndarray:
    """Σ_j θ_j P_τ^j x"""
    theta_p = np.asarray(theta_p, dtype=np.float64)
    term = np.asarray(x, dtype=np.float64)
    out = theta_p[0] * term
    for coefficient in theta_p[1:]:
        term = p.matrix @ term
        out = out + coefficient * term
    return out


def export_coeffs_csv(coeffs: PolyCoeffMatrix, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["basis"] + [f"c{i}" for i in range(coeffs.degree + 1)])
        for k, row in enumerate(coeffs.phi):
            writer.writerow([f"{coeffs.kind}_{k}"] + [repr(float(v)) for v in row])
    LOGGER.info(f"💾 係数行列出力: {path}")
