# src/graph.py - グラフ表現とファイル読み込み

"""
無向グラフ (CSR)、特徴行列、ラベル、分割管理
ホモフィリー統計とラベル差分エネルギー
"""

import csv
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from pydantic import BaseModel, Field

from .error_handling import DataSourceException, GraphValidationException

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class Graph:
    """不変の無向グラフ

    各無向辺は CSR に両方向で格納される。自己ループは持たない。
    """
    n: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    labels: np.ndarray
    num_classes: int

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets).astype(np.int64)

    @property
    def m(self) -> int:
        return int(self.csr_targets.shape[0] // 2)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """隣接行列 A (float64, CSR)"""
        data = np.ones(self.csr_targets.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, self.csr_targets, self.csr_offsets), shape=(self.n, self.n))

    def edge_array(self) -> np.ndarray:
        """u < v の無向辺を (m, 2) 配列で返す"""
        sources = np.repeat(np.arange(self.n), self.degrees)
        mask = sources < self.csr_targets
        return np.stack([sources[mask], self.csr_targets[mask]], axis=1)

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: np.ndarray,
        labels: Optional[np.ndarray] = None,
        num_classes: Optional[int] = None
    ) -> "Graph":
        """辺リストから対称化・重複除去してグラフを構築する"""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            bad = edges[(edges < 0).any(axis=1) | (edges >= n).any(axis=1)][0]
            raise GraphValidationException(
                f"ノード ID が範囲外です: {tuple(bad)} (n={n})",
                field="edges",
                value=[int(v) for v in bad]
            )
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]], axis=0)
        data = np.ones(both.shape[0], dtype=np.float64)
        adj = sp.coo_matrix((data, (both[:, 0], both[:, 1])), shape=(n, n)).tocsr()
        adj.sum_duplicates()
        adj.sort_indices()

        if labels is None:
            labels = np.zeros(n, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0

        return cls(
            n=int(n),
            csr_offsets=adj.indptr.astype(np.int64),
            csr_targets=adj.indices.astype(np.int64),
            labels=labels,
            num_classes=int(num_classes),
        )

    def with_labels(self, labels: np.ndarray, num_classes: Optional[int] = None) -> "Graph":
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        return Graph(self.n, self.csr_offsets, self.csr_targets, labels, int(num_classes))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """n × d の密な特徴行列 (ノード順の行優先)"""
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise GraphValidationException("特徴行列は 2 次元である必要があります", field="features")
        if not np.all(np.isfinite(values)):
            raise GraphValidationException("特徴行列に非有限値が含まれています", field="features")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])


class SplitSet(BaseModel):
    """学習/検証/テストの分割 (60/20/20)"""
    seed: int
    index: int = 0
    train: List[int]
    val: List[int]
    test: List[int]


class GraphValidationReport(BaseModel):
    """グラフ検証結果"""
    symmetric: bool
    no_self_loops: bool
    degree_sum_ok: bool
    connected: bool
    bipartite: bool
    num_components: int
    spectral_ready: bool = Field(default=False)


# === ファイル読み込み ===

def _read_edges(edge_path: Path) -> np.ndarray:
    pairs: List[Tuple[int, int]] = []
    with open(edge_path, "r", encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 2:
                raise GraphValidationException(
                    f"辺ファイル {line_no} 行目の形式が不正です: {stripped!r}",
                    field="edges"
                )
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError as e:
                raise GraphValidationException(
                    f"辺ファイル {line_no} 行目に整数でない ID があります: {stripped!r}",
                    field="edges"
                ) from e
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _read_features(feature_path: Path) -> np.ndarray:
    rows: List[List[float]] = []
    with open(feature_path, "r", encoding="utf-8", newline="") as fp:
        for row_no, row in enumerate(csv.reader(fp), start=1):
            if not row:
                continue
            try:
                rows.append([float(value) for value in row])
            except ValueError as e:
                raise GraphValidationException(
                    f"特徴ファイル {row_no} 行目に数値でない値があります",
                    field="features",
                    value=row_no
                ) from e
    if not rows:
        raise GraphValidationException("特徴ファイルが空です", field="features")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise GraphValidationException(f"特徴ファイルの列数が不揃いです: {sorted(widths)}", field="features")
    return np.array(rows, dtype=np.float64)


def _read_labels(label_path: Path) -> np.ndarray:
    labels: List[int] = []
    with open(label_path, "r", encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                value = int(stripped)
            except ValueError as e:
                raise GraphValidationException(
                    f"ラベルファイル {line_no} 行目が整数ではありません: {stripped!r}",
                    field="labels"
                ) from e
            if value < 0:
                raise GraphValidationException(f"ラベルは非負である必要があります ({line_no} 行目)", field="labels")
            labels.append(value)
    return np.array(labels, dtype=np.int64)


def load_graph(edge_path: PathLike, feature_path: PathLike, label_path: PathLike) -> Tuple[Graph, FeatureMatrix]:
    """TSV 辺 / CSV 特徴 / ラベルファイルからグラフを読み込む"""
    paths = {"edges": Path(edge_path), "features": Path(feature_path), "labels": Path(label_path)}
    for kind, path in paths.items():
        if not path.exists():
            raise DataSourceException(f"ファイルが見つかりません: {path}", source_type=kind, path=str(path))

    labels = _read_labels(paths["labels"])
    features = _read_features(paths["features"])
    edges = _read_edges(paths["edges"])

    n = labels.shape[0]
    if features.shape[0] != n:
        raise GraphValidationException(
            f"特徴行数 ({features.shape[0]}) とラベル数 ({n}) が一致しません",
            field="features",
            value=int(features.shape[0])
        )

    self_loops = int(np.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0
    if self_loops:
        LOGGER.warning(f"⚠️ 自己ループ {self_loops} 本を除去しました ({paths['edges']})")

    graph = Graph.from_edges(n, edges, labels)
    LOGGER.info(
        f"✅ グラフ読み込み完了: n={graph.n}, m={graph.m}, d={features.shape[1]}, C={graph.num_classes}"
    )
    return graph, FeatureMatrix(features)


def save_graph_files(g: Graph, x: FeatureMatrix, out_dir: PathLike, prefix: str = "") -> Dict[str, str]:
    """load_graph が読める形式でファイルを書き出す"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": out / f"{prefix}edges.tsv",
        "features": out / f"{prefix}features.csv",
        "labels": out / f"{prefix}labels.txt",
    }
    with open(paths["edges"], "w", encoding="utf-8") as fp:
        fp.write("# u\tv\n")
        for u, v in g.edge_array():
            fp.write(f"{u}\t{v}\n")
    with open(paths["features"], "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        for row in x.values:
            writer.writerow([repr(float(value)) for value in row])
    with open(paths["labels"], "w", encoding="utf-8") as fp:
        for label in g.labels:
            fp.write(f"{int(label)}\n")
    return {kind: str(path) for kind, path in paths.items()}


# === 構造検証 ===

def connected_components(g: Graph) -> Tuple[int, np.ndarray]:
    return csgraph.connected_components(g.adjacency, directed=False)


def is_bipartite(g: Graph) -> bool:
    """BFS の深さの偶奇による 2 彩色で二部グラフ判定"""
    depth = np.full(g.n, -1, dtype=np.int64)
    for start in range(g.n):
        if depth[start] >= 0:
            continue
        order, predecessors = csgraph.breadth_first_order(
            g.adjacency, start, directed=False, return_predecessors=True
        )
        depth[start] = 0
        for v in order[1:]:
            depth[v] = depth[predecessors[v]] + 1
    edges = g.edge_array()
    if edges.size == 0:
        return True
    return bool(np.all((depth[edges[:, 0]] - depth[edges[:, 1]]) % 2 != 0))


def validate(g: Graph) -> GraphValidationReport:
    """グラフの不変条件を全走査で確認する"""
    adj = g.adjacency
    symmetric = (adj != adj.T).nnz == 0
    no_self_loops = bool(np.all(adj.diagonal() == 0))
    degree_sum_ok = int(g.degrees.sum()) == 2 * g.m
    num_components, _ = connected_components(g)
    bipartite = is_bipartite(g)
    report = GraphValidationReport(
        symmetric=symmetric,
        no_self_loops=no_self_loops,
        degree_sum_ok=degree_sum_ok,
        connected=num_components == 1,
        bipartite=bipartite,
        num_components=int(num_components),
    )
    report.spectral_ready = all([symmetric, no_self_loops, degree_sum_ok, report.connected, not bipartite])
    return report


def require_spectral_ready(g: Graph) -> None:
    """スペクトル演算の前提 (連結・非二部) を満たさなければ例外"""
    report = validate(g)
    if not report.connected:
        raise GraphValidationException(
            f"グラフが連結ではありません (成分数 {report.num_components})",
            field="connected",
            value=report.num_components
        )
    if report.bipartite:
        raise GraphValidationException("グラフが二部グラフです (λ_1(P) = -1)", field="bipartite", value=True)


def largest_component(g: Graph, x: Optional[FeatureMatrix] = None) -> Tuple[Graph, Optional[FeatureMatrix], np.ndarray]:
    """最大連結成分を抽出し、ノード番号を詰め直す"""
    _, component = connected_components(g)
    counts = np.bincount(component)
    keep = np.flatnonzero(component == int(np.argmax(counts)))
    sub = g.adjacency[keep][:, keep].tocsr()
    sub.sort_indices()
    graph = Graph(
        n=int(keep.size),
        csr_offsets=sub.indptr.astype(np.int64),
        csr_targets=sub.indices.astype(np.int64),
        labels=g.labels[keep],
        num_classes=g.num_classes,
    )
    features = FeatureMatrix(x.values[keep]) if x is not None else None
    return graph, features, keep


# === ホモフィリー統計 ===

def homophily_ratio(g: Graph) -> float:
    """辺ホモフィリー比 h: 両端が同じクラスの辺の割合"""
    if g.m == 0:
        raise GraphValidationException("辺のないグラフではホモフィリー比を定義できません", field="m", value=0)
    edges = g.edge_array()
    same = np.count_nonzero(g.labels[edges[:, 0]] == g.labels[edges[:, 1]])
    return same / g.m


def node_homophily(g: Graph) -> float:
    """ノードごとの同クラス近傍割合の平均 (孤立ノードは除外)"""
    sources = np.repeat(np.arange(g.n), g.degrees)
    same = (g.labels[sources] == g.labels[g.csr_targets]).astype(np.float64)
    per_node = np.bincount(sources, weights=same, minlength=g.n)
    mask = g.degrees > 0
    if not mask.any():
        raise GraphValidationException("辺のないグラフではホモフィリーを定義できません", field="m", value=0)
    return float(np.mean(per_node[mask] / g.degrees[mask]))


def _binary_signal(g: Graph, class_a: int, class_b: int) -> np.ndarray:
    present = set(np.unique(g.labels).tolist())
    missing = [c for c in (class_a, class_b) if c not in present]
    if missing:
        raise GraphValidationException(f"クラスが存在しません: {missing}", field="class", value=missing)
    y = np.zeros(g.n, dtype=np.int64)
    y[g.labels == class_a] = 1
    y[g.labels == class_b] = -1
    return y


def label_difference_energy(g: Graph, class_a: int, class_b: int) -> int:
    """Σ_{(i,j)∈E} (y_i − y_j)² を ±1 ラベル (class_a=+1, class_b=−1) で計算する

    両端が対象クラスに属する辺のみを数える。整数演算で厳密。
    """
    y = _binary_signal(g, class_a, class_b)
    edges = g.edge_array()
    considered = (y[edges[:, 0]] != 0) & (y[edges[:, 1]] != 0)
    diff = y[edges[considered, 0]] - y[edges[considered, 1]]
    return int(np.sum(diff * diff))


def rayleigh_label_quotient(g: Graph, class_a: int, class_b: int) -> float:
    """Σ(y_i − y_j)² / Σ d_i y_i² の実測値"""
    y = _binary_signal(g, class_a, class_b)
    denominator = float(np.sum(g.degrees * y * y))
    if denominator == 0.0:
        raise GraphValidationException("対象クラスのノードに辺がありません", field="degrees")
    return label_difference_energy(g, class_a, class_b) / denominator


# === 分割 ===

def make_splits(g: Graph, seed: int, count: int) -> List[SplitSet]:
    """60/20/20 のランダム分割を count 個生成する (seed で再現可能)"""
    if g.n < 5:
        raise GraphValidationException(f"分割には n ≥ 5 が必要です (n={g.n})", field="n", value=g.n)
    n_train = int(np.floor(0.6 * g.n))
    n_val = int(np.floor(0.2 * g.n))
    rng = np.random.default_rng(seed)
    splits = []
    for index in range(count):
        perm = rng.permutation(g.n)
        splits.append(SplitSet(
            seed=seed,
            index=index,
            train=sorted(perm[:n_train].tolist()),
            val=sorted(perm[n_train:n_train + n_val].tolist()),
            test=sorted(perm[n_train + n_val:].tolist()),
        ))
    return splits


def save_splits(splits: List[SplitSet], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump([s.model_dump() for s in splits], fp)


def load_splits(path: PathLike) -> List[SplitSet]:
    p = Path(path)
    if not p.exists():
        raise DataSourceException(f"分割ファイルが見つかりません: {p}", source_type="splits", path=str(p))
    with open(p, "r", encoding="utf-8") as fp:
        data = json.load(fp)
    if isinstance(data, dict):
        data = [data]
    return [SplitSet(**item) for item in data]
