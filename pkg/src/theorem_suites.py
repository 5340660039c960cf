# src/theorem_suites.py - verify サブコマンドの検証スイート

"""
ランダムな連結・非二部グラフ上で理論的性質を確認する 5 つのスイート

- spectrum: λ_i(τ) の τ に関する単調性
- convergence: 混合時間の上界で P^K が定常行列に近づくこと
- information_loss: 先頭 K ブロックでの Frobenius ノルム損失の上界
- unification: Chebyshev / Bernstein / Jacobi フィルターが単項式 Krylov 空間に入ること
- merge: 統合基底の順伝播と基底ごとの和の一致
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field

from .config import get_settings
from .error_handling import GraphValidationException, TheoremViolationException
from .graph import Graph
from .model import FilterModel, forward, forward_basis_sum
from .polybases import apply_basis_filter, apply_krylov_filter, krylov_weights, make_coeffs
from .propagation import build_krylov_basis, build_merged_basis, build_propagator, estimate_grade
from .spectral import check_spectrum_monotonicity, information_loss, mixing_bound, verify_convergence

LOGGER = logging.getLogger(__name__)

SUITE_NAMES = ("spectrum", "convergence", "information_loss", "unification", "merge")
UNIFICATION_KINDS = (("chebyshev", 0.0, 0.0), ("bernstein", 0.0, 0.0), ("jacobi", 0.0, 0.0))
UNIFICATION_DEGREE = 8


class SuiteReport(BaseModel):
    """スイートごとの JSON レポート"""
    theorem: str
    graphs_tested: int = 0
    violations: List[Dict] = Field(default_factory=list)
    max_residual: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.violations


def random_test_graph(seed: int, n_min: int, n_max: int, edge_probability: float = 0.2) -> Graph:
    """ランダムな連結・非二部グラフ

    G(n, p) にランダムなハミルトン路を重ね、路の先頭 3 点で三角形を作る。
    """
    if n_min < 3 or n_max < n_min:
        raise GraphValidationException(f"3 ≤ n_min ≤ n_max が必要です ({n_min}, {n_max})", field="n")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    base = nx.gnp_random_graph(n, edge_probability, seed=int(rng.integers(2 ** 31 - 1)))
    order = rng.permutation(n)
    edges = list(base.edges())
    edges += [(int(order[i]), int(order[i + 1])) for i in range(n - 1)]
    edges.append((int(order[0]), int(order[2])))
    return Graph.from_edges(n, np.array(edges, dtype=np.int64))


def _fan_out(job: Callable[[int], SuiteReport], seeds: Sequence[int], workers: int) -> List[SuiteReport]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, seeds))
    return [job(seed) for seed in seeds]


def _merge_reports(theorem: str, parts: Sequence[SuiteReport]) -> SuiteReport:
    report = SuiteReport(theorem=theorem)
    for part in parts:
        report.graphs_tested += part.graphs_tested
        report.violations.extend(part.violations)
        report.max_residual = max(report.max_residual, part.max_residual)
    return report


# === 個別スイート ===

def spectrum_suite(graphs: int, max_n: int, tau_grid: Sequence[float], seed: int = 0, workers: int = 1) -> SuiteReport:
    def job(graph_seed: int) -> SuiteReport:
        g = random_test_graph(graph_seed, 3, max_n)
        result = check_spectrum_monotonicity(g, tau_grid)
        violations = [{**v, "seed": graph_seed, "n": g.n} for v in result.violations]
        return SuiteReport(theorem="spectrum", graphs_tested=1, violations=violations,
                           max_residual=result.max_residual)

    return _merge_reports("spectrum", _fan_out(job, range(seed, seed + graphs), workers))


def convergence_suite(graphs: int, max_n: int, eps_values: Sequence[float] = (0.1, 0.01),
                      seed: int = 0, workers: int = 1) -> SuiteReport:
    def job(graph_seed: int) -> SuiteReport:
        g = random_test_graph(graph_seed, 4, max_n)
        part = SuiteReport(theorem="convergence", graphs_tested=1)
        for eps in eps_values:
            K = mixing_bound(g, 1.0, eps).k
            result = verify_convergence(g, 1.0, K, eps)
            part.max_residual = max(part.max_residual, result.max_relative_distance / eps)
            if not result.passed:
                part.violations.append({"seed": graph_seed, "n": g.n, "eps": eps, "K": K,
                                        "distance": result.max_relative_distance})
        return part

    return _merge_reports("convergence", _fan_out(job, range(seed, seed + graphs), workers))


def information_loss_suite(triples: int, max_n: int = 25, seed: int = 0, workers: int = 1) -> SuiteReport:
    def job(triple_seed: int) -> SuiteReport:
        rng = np.random.default_rng(triple_seed)
        g = random_test_graph(triple_seed, 4, max_n)
        p = build_propagator(g, 1.0)
        x = rng.standard_normal(g.n)
        t = estimate_grade(p, x, g.n)
        K = int(rng.integers(1, t + 1))
        basis = build_krylov_basis(p, x, t)
        result = information_loss(basis, t, K)
        part = SuiteReport(theorem="information_loss", graphs_tested=1,
                           max_residual=max(result.loss - result.bound, 0.0))
        if not result.passed:
            part.violations.append({"seed": triple_seed, "t": t, "K": K, "loss": result.loss, "bound": result.bound})
        return part

    return _merge_reports("information_loss", _fan_out(job, range(seed, seed + triples), workers))


def unification_suite(weights_per_kind: int, max_n: int = 40, seed: int = 0) -> SuiteReport:
    """フィルター出力の単項式 Krylov 空間への最小二乗残差と Φ^T w 変換の再現誤差"""
    report = SuiteReport(theorem="unification")
    K = UNIFICATION_DEGREE
    for kind, a, b in UNIFICATION_KINDS:
        coeffs = make_coeffs(kind, K, a, b)
        for trial in range(weights_per_kind):
            trial_seed = seed + trial
            rng = np.random.default_rng(trial_seed)
            g = random_test_graph(trial_seed, K + 4, max(max_n, K + 4))
            p = build_propagator(g, float(rng.uniform(0.5, 1.0)))
            x = rng.standard_normal(g.n)
            w = rng.standard_normal(K + 1)

            filtered = apply_basis_filter(coeffs, w, p, x)
            scale = max(np.linalg.norm(filtered), 1e-300)
            span = build_krylov_basis(p, x, K).blocks[:, :, 0].T
            solution = np.linalg.lstsq(span, filtered, rcond=None)[0]
            residual = float(np.linalg.norm(span @ solution - filtered) / scale)
            converted = apply_krylov_filter(krylov_weights(coeffs, w), p, x)
            conversion_error = float(np.linalg.norm(converted - filtered) / scale)

            report.graphs_tested += 1
            report.max_residual = max(report.max_residual, residual, conversion_error)
            if residual >= 1e-8 or conversion_error >= 1e-8:
                report.violations.append({"kind": kind, "seed": trial_seed, "residual": residual,
                                          "conversion_error": conversion_error})
    return report


def merge_suite(seeds: int, max_n: int = 30, seed: int = 0) -> SuiteReport:
    """r ∈ {2, 3} 個の τ について統合基底の順伝播と基底ごとの和を比較する"""
    report = SuiteReport(theorem="merge")
    for r in (2, 3):
        for offset in range(seeds):
            trial_seed = seed + offset
            rng = np.random.default_rng(trial_seed)
            g = random_test_graph(trial_seed, 5, max_n)
            taus = sorted(float(t) for t in rng.uniform(0.3, 1.0, size=r))
            x = rng.standard_normal((g.n, 3))
            K = int(rng.integers(1, 6))
            merged = build_merged_basis(g, taus, x, K)
            singles = [build_krylov_basis(build_propagator(g, tau), x, K) for tau in taus]

            model = FilterModel(K=K, d=3, num_classes=3, hidden=8, dropout=0.0, seed=trial_seed)
            model.params["w"] = rng.standard_normal(K + 1)
            nodes = np.arange(g.n)
            difference = float(np.max(np.abs(forward(model, merged, nodes) - forward_basis_sum(model, singles, nodes))))

            report.graphs_tested += 1
            report.max_residual = max(report.max_residual, difference)
            if difference > 1e-10:
                report.violations.append({"r": r, "seed": trial_seed, "taus": taus, "difference": difference})
    return report


# === まとめて実行 ===

def run_suites(
    theorems: Optional[Sequence[str]] = None,
    graphs: Optional[int] = None,
    max_n: Optional[int] = None,
    tau_grid: Optional[Sequence[float]] = None,
    seed: int = 0,
    workers: int = 1
) -> List[SuiteReport]:
    """指定したスイートを実行する (既定は全 5 スイート)"""
    config = get_settings().get_verify_config()
    graphs = config["graphs"] if graphs is None else graphs
    max_n = config["max_n"] if max_n is None else max_n
    tau_grid = config["tau_grid"] if tau_grid is None else list(tau_grid)
    selected = list(theorems) if theorems else list(SUITE_NAMES)
    unknown = [name for name in selected if name not in SUITE_NAMES]
    if unknown:
        raise GraphValidationException(f"未知の定理スイートです: {unknown}", field="theorem", value=unknown)
    if graphs < 1 or max_n < 4:
        raise GraphValidationException(f"graphs ≥ 1, max_n ≥ 4 が必要です ({graphs}, {max_n})", field="graphs")

    runners = {
        "spectrum": lambda: spectrum_suite(graphs, max_n, tau_grid, seed, workers),
        "convergence": lambda: convergence_suite(graphs, max_n, seed=seed, workers=workers),
        "information_loss": lambda: information_loss_suite(2 * graphs, min(max_n, 25), seed, workers),
        "unification": lambda: unification_suite(min(graphs, 20), max_n, seed),
        "merge": lambda: merge_suite(min(graphs, 10), max_n, seed),
    }
    reports = []
    for name in SUITE_NAMES:
        if name not in selected:
            continue
        report = runners[name]()
        status = "✅" if report.passed else "❌"
        LOGGER.info(f"{status} {name}: {report.graphs_tested} 件, 違反 {len(report.violations)}, "
                    f"最大残差 {report.max_residual:.3e}")
        reports.append(report)
    return reports


def raise_on_failure(reports: Sequence[SuiteReport]) -> None:
    """最初に失敗したスイート名で TheoremViolationException を送出する"""
    for report in reports:
        if not report.passed:
            raise TheoremViolationException(
                f"定理スイート '{report.theorem}' で違反 {len(report.violations)} 件",
                theorem=report.theorem,
                violations=report.violations[:20]
            )
