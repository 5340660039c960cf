# src/spectral.py - 密固有分解オラクルと定理検証

"""
L_τ の密な固有分解を基準解として、スペクトル単調性・混合時間・
情報損失の各定理を検証する。周波数応答の CSV 出力もここで扱う。
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field

from .config import get_settings
from .error_handling import (
    BudgetExceededException,
    GraphValidationException,
    NumericalException,
    TheoremViolationException,
)
from .graph import Graph, is_bipartite
from .polybases import PolyCoeffMatrix, describe_domain, eval_filter_response
from .propagation import KrylovBasis, build_propagator, laplacian_tau

LOGGER = logging.getLogger(__name__)


@dataclass(eq=False)
class SpectrumReport:
    """L_τ の固有値 (昇順) と固有ベクトル (列)"""
    tau: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lambda_star: float
    reconstruction_error: float

    @property
    def propagation_eigenvalues(self) -> np.ndarray:
        """P_τ の固有値 (昇順)"""
        return np.sort(1.0 - self.eigenvalues)


class MonotonicityReport(BaseModel):
    theorem: str = "spectrum"
    graphs_tested: int = 1
    tau_grid: List[float]
    violations: List[Dict] = Field(default_factory=list)
    max_residual: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.violations

    def raise_on_violation(self) -> None:
        if self.violations:
            raise TheoremViolationException(
                f"スペクトル単調性の違反 {len(self.violations)} 件",
                theorem=self.theorem,
                violations=self.violations[:20]
            )


class MixingBound(BaseModel):
    k: int
    raw_bound: float
    lambda_star: float
    d_min: int
    m: int
    eps: float
    tau: float
    k_tau_degrees: int
    raw_bound_tau_degrees: float


class ConvergenceReport(BaseModel):
    tau: float
    K: int
    eps: float
    k_bound: int
    max_relative_distance: float
    passed: bool


class InformationLossReport(BaseModel):
    loss: float
    bound: float
    t: int
    K: int
    passed: bool


class FrequencyResponse(BaseModel):
    kind: str
    domain: Dict
    rows: List[List[float]]
    eigen_rows: List[List[float]] = Field(default_factory=list)


# === オラクル ===

def eig_oracle(g: Graph, tau: float) -> SpectrumReport:
    """L_τ = I − P_τ の完全な対称固有分解"""
    settings = get_settings()
    if g.n > settings.oracle_max_nodes:
        raise BudgetExceededException(
            f"密固有分解の上限を超えています (n={g.n} > {settings.oracle_max_nodes})",
            n=g.n,
            limit=settings.oracle_max_nodes
        )
    laplacian = laplacian_tau(build_propagator(g, tau, warn=False)).toarray()
    if not np.all(np.isfinite(laplacian)):
        raise NumericalException("L_τ に非有限値が含まれています", operation="eig_oracle", value=tau)

    eigenvalues, eigenvectors = scipy.linalg.eigh(laplacian)
    reconstruction = eigenvectors @ np.diag(eigenvalues) @ eigenvectors.T
    error = float(np.linalg.norm(reconstruction - laplacian))
    if error > 1e-8 * g.n:
        raise NumericalException(f"固有分解の再構成誤差が大きすぎます ({error:.3e})",
                                 operation="eig_oracle", value=error)

    mu = np.sort(1.0 - eigenvalues)
    star = float(max(-mu[0], mu[-2])) if g.n >= 2 else 0.0
    return SpectrumReport(
        tau=float(tau),
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        lambda_star=star,
        reconstruction_error=error,
    )


def lambda_star(report: SpectrumReport) -> float:
    """λ* = max(−λ_1(P), λ_{n−1}(P))"""
    return report.lambda_star


# === スペクトル単調性 ===

def check_spectrum_monotonicity(
    g: Graph,
    tau_grid: Sequence[float],
    tolerance: Optional[float] = None
) -> MonotonicityReport:
    """λ_i(τ) が τ について単調増加であり、τ=1 の値を境に ≤ / ≥ となるかを確認する"""
    tolerance = get_settings().spectral_tolerance if tolerance is None else tolerance
    grid = [float(t) for t in tau_grid]
    if not grid or any(t <= 0.0 for t in grid):
        raise GraphValidationException("τ グリッドは空でない正の値である必要があります", field="tau_grid", value=grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise GraphValidationException("τ グリッドは昇順である必要があります", field="tau_grid", value=grid)

    spectra = {tau: eig_oracle(g, tau).eigenvalues for tau in grid}
    baseline = spectra[1.0] if 1.0 in spectra else eig_oracle(g, 1.0).eigenvalues

    report = MonotonicityReport(tau_grid=grid)
    worst = 0.0
    for a_index, tau_a in enumerate(grid):
        for tau_b in grid[a_index + 1:]:
            excess = spectra[tau_a] - spectra[tau_b]
            worst = max(worst, float(excess.max()))
            for i in np.flatnonzero(excess > tolerance):
                report.violations.append({
                    "relation": "increasing",
                    "i": int(i),
                    "tau_a": tau_a,
                    "tau_b": tau_b,
                    "values": [float(spectra[tau_a][i]), float(spectra[tau_b][i])],
                })
        if tau_a <= 1.0:
            excess = spectra[tau_a] - baseline
            relation = "below_standard"
        else:
            excess = baseline - spectra[tau_a]
            relation = "above_standard"
        worst = max(worst, float(excess.max()))
        for i in np.flatnonzero(excess > tolerance):
            report.violations.append({
                "relation": relation,
                "i": int(i),
                "tau_a": tau_a,
                "tau_b": 1.0,
                "values": [float(spectra[tau_a][i]), float(baseline[i])],
            })

    report.max_residual = max(worst, 0.0)
    if report.violations:
        LOGGER.warning(f"❌ 単調性違反 {len(report.violations)} 件 (n={g.n})")
    return report


# === 混合時間 ===

def _bound(eps: float, d_min: float, total_degree: float, star: float) -> float:
    if star == 0.0:
        return 1.0
    return float(np.log(eps * d_min / total_degree) / np.log(star))


def mixing_bound(g: Graph, tau: float, eps: float) -> MixingBound:
    """K ≥ ln(ε d_min / 2m) / ln λ* の切り上げ (0 未満は 0)

    τ ≠ 1 向けに τ 次数 (τd_u + 1 − τ) を用いた変種も併せて返す。
    """
    if not 0.0 < eps < 1.0:
        raise GraphValidationException(f"ε は (0,1) である必要があります (ε={eps})", field="eps", value=eps)
    if g.m == 0:
        raise GraphValidationException("辺のないグラフです", field="m", value=0)
    star = eig_oracle(g, tau).lambda_star
    if star >= 1.0 - 1e-12:
        raise NumericalException(
            f"λ* = {star:.12f} ≥ 1 のため混合時間の上界は定義できません (τ={tau})",
            operation="mixing_bound",
            value=star
        )

    d_min = int(g.degrees.min())
    raw = _bound(eps, d_min, 2.0 * g.m, star)
    degrees_tau = tau * g.degrees + (1.0 - tau)
    raw_tau = _bound(eps, float(degrees_tau.min()), float(degrees_tau.sum()), star)
    return MixingBound(
        k=max(int(np.ceil(raw)), 0),
        raw_bound=raw,
        lambda_star=star,
        d_min=d_min,
        m=g.m,
        eps=eps,
        tau=float(tau),
        k_tau_degrees=max(int(np.ceil(raw_tau)), 0),
        raw_bound_tau_degrees=raw_tau,
    )


def stationary_matrix(g: Graph, tau: float = 1.0) -> np.ndarray:
    """P^K の極限行列

    τ = 1 は閉形式 √(d_u d_v)/2m、それ以外はオラクルの最上位固有ベクトル φφ^T。
    """
    if tau == 1.0:
        root = np.sqrt(g.degrees.astype(np.float64))
        return np.outer(root, root) / (2.0 * g.m)
    report = eig_oracle(g, tau)
    top = report.eigenvectors[:, 0]
    top = top if top.sum() >= 0 else -top
    return np.outer(top, top)


def verify_convergence(g: Graph, tau: float, K: int, eps: float) -> ConvergenceReport:
    """max_{u,v} |P^K[u,v] − P_π[u,v]| / P_π[u,v] を測る"""
    if is_bipartite(g):
        raise GraphValidationException("二部グラフでは P^K は収束しません (λ_1(P) = −1)", field="bipartite", value=True)
    bound = mixing_bound(g, tau, eps)
    k_bound = bound.k if tau == 1.0 else max(bound.k, bound.k_tau_degrees)

    power = np.linalg.matrix_power(build_propagator(g, tau, warn=False).matrix.toarray(), K)
    stationary = stationary_matrix(g, tau)
    distance = float(np.max(np.abs(power - stationary) / stationary))
    passed = distance <= eps
    return ConvergenceReport(
        tau=float(tau),
        K=int(K),
        eps=float(eps),
        k_bound=k_bound,
        max_relative_distance=distance,
        passed=bool(passed),
    )


# === 情報損失 ===

def information_loss(basis: KrylovBasis, grade_t: int, K: int) -> InformationLossReport:
    """B* = 先頭 t ブロック、B = 先頭 K ブロックとして (‖B*‖_F − ‖B‖_F)/‖B*‖_F と √((t−K)/t) を比較する"""
    if grade_t <= 0:
        raise GraphValidationException("グレード t は正である必要があります", field="t", value=grade_t)
    if not 1 <= K <= grade_t:
        raise GraphValidationException(f"1 ≤ K ≤ t が必要です (K={K}, t={grade_t})", field="K", value=K)
    if grade_t > basis.K + 1:
        raise GraphValidationException(
            f"基底のブロック数 ({basis.K + 1}) がグレード t={grade_t} に足りません",
            field="t",
            value=grade_t
        )
    full = float(np.linalg.norm(basis.blocks[:grade_t]))
    if full == 0.0:
        raise NumericalException("基底がゼロです", operation="information_loss")
    partial = float(np.linalg.norm(basis.blocks[:K]))
    loss = (full - partial) / full
    bound = float(np.sqrt((grade_t - K) / grade_t))
    return InformationLossReport(
        loss=loss,
        bound=bound,
        t=int(grade_t),
        K=int(K),
        passed=loss <= bound + 1e-10,
    )


# === 周波数応答 ===

def frequency_response_export(
    g: Optional[Graph],
    model_w: Sequence[float],
    coeffs: PolyCoeffMatrix,
    samples: int,
    path: Optional[Union[str, Path]] = None,
    tau: float = 1.0
) -> FrequencyResponse:
    """λ ∈ [0,2] の一様グリッドで g_w(λ) を評価し CSV "lambda,value" を書き出す

    g を渡した場合はその L_τ の固有値での応答も eigen_rows に含める。
    """
    if samples < 2:
        raise GraphValidationException("samples ≥ 2 が必要です", field="samples", value=samples)
    grid = np.linspace(0.0, 2.0, samples)
    values = eval_filter_response(coeffs, model_w, grid)
    response = FrequencyResponse(
        kind=coeffs.kind,
        domain=describe_domain(coeffs),
        rows=[[float(lam), float(val)] for lam, val in zip(grid, values)],
    )
    if g is not None and g.n <= get_settings().oracle_max_nodes:
        spectrum = eig_oracle(g, tau).eigenvalues
        at_spectrum = eval_filter_response(coeffs, model_w, spectrum)
        response.eigen_rows = [[float(lam), float(val)] for lam, val in zip(spectrum, at_spectrum)]

    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["lambda", "value"])
            writer.writerows(response.rows)
        LOGGER.info(f"💾 周波数応答出力: {path} ({samples} 点)")
    return response


def homophily_frequency_profile(g: Graph, taus: Sequence[float], class_a: int = 0, class_b: int = 1) -> List[Dict]:
    """±1 ラベル信号の平均周波数 y^T L_τ y / y^T y を τ ごとに返す"""
    present = set(np.unique(g.labels).tolist())
    if class_a not in present or class_b not in present:
        raise GraphValidationException("クラスが存在しません", field="class", value=[class_a, class_b])
    y = np.zeros(g.n)
    y[g.labels == class_a] = 1.0
    y[g.labels == class_b] = -1.0
    rows = []
    for tau in taus:
        laplacian = laplacian_tau(build_propagator(g, tau, warn=False))
        rows.append({"tau": float(tau), "frequency": float(y @ (laplacian @ y) / (y @ y))})
    return rows
