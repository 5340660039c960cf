# src/datagen.py - 合成植え込み分割グラフ生成

"""
ホモフィリー比を制御した確率的ブロックモデルと、クラス平均の周りのガウス特徴
"""

import json
import logging
from pathlib import Path
from typing import Dict, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field

from .config import get_settings
from .error_handling import GraphValidationException, NumericalException
from .graph import FeatureMatrix, Graph, homophily_ratio, is_bipartite, largest_component, save_graph_files

LOGGER = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    """合成グラフの生成パラメータ"""
    n: int = Field(ge=2)
    num_classes: int = Field(default=2, ge=2)
    homophily: float = Field(gt=0.0, le=1.0)
    mean_degree: float = Field(default=10.0, gt=0.0)
    feature_dim: int = Field(default=16, ge=1)
    separation: float = Field(default=4.0, ge=0.0)
    noise: float = Field(default=1.0, gt=0.0)
    seed: int = 0


class EdgeProbabilities(BaseModel):
    p_in: float
    p_out: float
    class_sizes: list
    expected_edges: float


def class_sizes(n: int, num_classes: int) -> list:
    sizes = [n // num_classes] * num_classes
    for i in range(n % num_classes):
        sizes[i] += 1
    return sizes


def solve_edge_probabilities(spec: SyntheticSpec) -> EdgeProbabilities:
    """期待辺数 n·deg/2 とホモフィリー比 h* から p_in, p_out を解く

    h* = p_in·S_in / (p_in·S_in + p_out·S_out) (S_in, S_out はクラス内・クラス間のノード対数)
    """
    sizes = class_sizes(spec.n, spec.num_classes)
    pairs_in = sum(s * (s - 1) / 2.0 for s in sizes)
    pairs_out = spec.n * (spec.n - 1) / 2.0 - pairs_in
    expected_edges = spec.n * spec.mean_degree / 2.0
    p_in = spec.homophily * expected_edges / pairs_in if pairs_in > 0 else float("inf")
    p_out = (1.0 - spec.homophily) * expected_edges / pairs_out

    for name, value in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= value <= 1.0:
            raise GraphValidationException(
                f"{name} = {value:.4f} が [0,1] の範囲外です (n={spec.n}, C={spec.num_classes}, "
                f"平均次数={spec.mean_degree}, h*={spec.homophily})",
                field=name,
                value=value
            )
    return EdgeProbabilities(p_in=p_in, p_out=p_out, class_sizes=sizes, expected_edges=expected_edges)


def _class_means(spec: SyntheticSpec) -> np.ndarray:
    """‖μ_a − μ_b‖ = s となる座標軸上のクラス平均"""
    if spec.feature_dim < spec.num_classes and spec.separation > 0.0:
        raise GraphValidationException(
            f"特徴次元 d={spec.feature_dim} はクラス数 C={spec.num_classes} 以上が必要です",
            field="feature_dim",
            value=spec.feature_dim
        )
    means = np.zeros((spec.num_classes, spec.feature_dim))
    for c in range(spec.num_classes):
        if spec.separation > 0.0:
            means[c, c] = spec.separation / np.sqrt(2.0)
    return means


def generate(spec: SyntheticSpec) -> Tuple[Graph, FeatureMatrix]:
    """SBM を生成し最大連結成分に絞る。二部グラフは上限回数まで再サンプルする"""
    probabilities = solve_edge_probabilities(spec)
    sizes = probabilities.class_sizes
    block_matrix = np.full((spec.num_classes, spec.num_classes), probabilities.p_out)
    np.fill_diagonal(block_matrix, probabilities.p_in)
    labels = np.repeat(np.arange(spec.num_classes), sizes)
    means = _class_means(spec)
    rng = np.random.default_rng(spec.seed)
    max_resamples = get_settings().max_resamples

    for attempt in range(max_resamples + 1):
        graph_seed = int(rng.integers(2 ** 31 - 1))
        sbm = nx.stochastic_block_model(sizes, block_matrix.tolist(), seed=graph_seed)
        edges = np.array(list(sbm.edges()), dtype=np.int64).reshape(-1, 2)
        full = Graph.from_edges(spec.n, edges, labels=labels, num_classes=spec.num_classes)
        features = means[labels] + spec.noise * rng.standard_normal((spec.n, spec.feature_dim))
        g, x, _ = largest_component(full, FeatureMatrix(features))
        if g.m > 0 and not is_bipartite(g):
            LOGGER.info(
                f"✅ 合成グラフ生成: n={g.n}/{spec.n}, m={g.m}, h={homophily_ratio(g):.3f} "
                f"(目標 {spec.homophily}), 試行 {attempt + 1}"
            )
            return g, x
        LOGGER.warning(f"⚠️ 二部グラフまたは辺なし (試行 {attempt + 1})、再サンプルします")

    raise NumericalException(
        f"{max_resamples} 回の再サンプルで非二部グラフが得られませんでした",
        operation="generate",
        value=max_resamples
    )


def write_dataset(spec: SyntheticSpec, out_dir: Union[str, Path], prefix: str = "") -> Dict[str, str]:
    """生成したグラフを load_graph と同じファイル形式で書き出す"""
    g, x = generate(spec)
    paths = save_graph_files(g, x, out_dir, prefix=prefix)
    spec_path = Path(out_dir) / f"{prefix}synthetic_spec.json"
    with open(spec_path, "w", encoding="utf-8") as fp:
        json.dump({**spec.model_dump(), "achieved_homophily": homophily_ratio(g), "n_kept": g.n}, fp, indent=2)
    paths["spec"] = str(spec_path)
    LOGGER.info(f"💾 合成データ出力: {out_dir}")
    return paths
