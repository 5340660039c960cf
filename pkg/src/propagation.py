# src/propagation.py - 適応 Krylov 基底の構築

"""
伝播行列 P_τ = D_τ^{-1/2} A_τ D_τ^{-1/2} と Krylov 基底
複数 τ の統合基底、三項漸化式 (Lanczos) による直交化、グレード推定、基底の永続化
"""

import hashlib
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .config import get_settings
from .error_handling import DataSourceException, GraphValidationException, NumericalException
from .graph import FeatureMatrix, Graph

LOGGER = logging.getLogger(__name__)

_HEADER_LENGTH = struct.Struct("<Q")


@dataclass(frozen=True, eq=False)
class TauPropagator:
    """P_τ の疎行列表現 (CSR、対称)"""
    tau: float
    matrix: sp.csr_matrix
    inv_sqrt_degrees: np.ndarray

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values


@dataclass(eq=False)
class KrylovBasis:
    """積み重ねた Krylov ブロック [X | P_τX | … | P_τ^K X]

    blocks の形状は (K+1, n, d)。merged のとき各ブロックは Σ_i P_{τ_i}^ℓ X。
    """
    K: int
    blocks: np.ndarray
    taus: List[float]
    merged: bool = False
    orthogonal: bool = False
    propagator: Optional[TauPropagator] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.blocks.shape[1])

    @property
    def d(self) -> int:
        return int(self.blocks.shape[2])

    def block(self, hop: int) -> np.ndarray:
        return self.blocks[hop]


@dataclass(eq=False)
class LanczosResult:
    """三項漸化式による正規直交列と係数"""
    vectors: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    grade: int
    breakdown: bool


# === P_τ ===

def build_propagator(g: Graph, tau: float, warn: bool = True) -> TauPropagator:
    """A_τ = τA + (1−τ)I, D_τ = τD + (1−τ)I から P_τ を構築する"""
    if tau <= 0.0:
        raise GraphValidationException(f"τ は正である必要があります (τ={tau})", field="tau", value=tau)

    degrees_tau = tau * g.degrees.astype(np.float64) + (1.0 - tau)
    if np.any(degrees_tau <= 0.0):
        bad = int(np.flatnonzero(degrees_tau <= 0.0)[0])
        raise GraphValidationException(
            f"正規化項 τd_u + 1 − τ が非正です (u={bad}, d_u={int(g.degrees[bad])}, τ={tau})",
            field="tau",
            value=tau
        )
    if warn and tau > get_settings().tau_divergence_warning:
        LOGGER.warning(f"⚠️ τ={tau} > 1: 高次の基底が発散する可能性があります")

    scale = 1.0 / np.sqrt(degrees_tau)
    # 対角も常に格納するので行パターンは隣接 + 対角
    a_tau = (tau * g.adjacency + sp.diags(np.full(g.n, 1.0 - tau))).tocsr()
    scaling = sp.diags(scale)
    matrix = (scaling @ a_tau @ scaling).tocsr()
    matrix.sort_indices()

    LOGGER.debug(f"P_τ 構築: τ={tau}, nnz={matrix.nnz}")
    return TauPropagator(tau=float(tau), matrix=matrix, inv_sqrt_degrees=scale)


def laplacian_tau(p: TauPropagator) -> sp.csr_matrix:
    """L_τ = I − P_τ"""
    return (sp.identity(p.n, format="csr") - p.matrix).tocsr()


def dense_matrix(p: TauPropagator) -> np.ndarray:
    return p.matrix.toarray()


# === Krylov 基底 ===

def _as_array(x: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.values
    values = np.asarray(x, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def _propagate_columns(p: TauPropagator, x: np.ndarray, K: int) -> np.ndarray:
    blocks = np.empty((K + 1, x.shape[0], x.shape[1]), dtype=np.float64)
    blocks[0] = x
    for hop in range(1, K + 1):
        blocks[hop] = p.apply(blocks[hop - 1])
    return blocks


def build_krylov_basis(
    p: TauPropagator,
    x: Union[FeatureMatrix, np.ndarray],
    K: int,
    workers: int = 1
) -> KrylovBasis:
    """F^(ℓ) = P_τ · F^(ℓ−1) を K 回繰り返す

    workers > 1 のとき特徴列を分割して並列に伝播する。CSR 行列積は列ごとに
    同じ順序で加算するため結果は逐次版とビット単位で一致する。
    """
    values = _as_array(x)
    if K < 0:
        raise GraphValidationException(f"K は非負である必要があります (K={K})", field="K", value=K)
    if values.shape[0] != p.n:
        raise GraphValidationException(
            f"特徴行数 ({values.shape[0]}) がノード数 ({p.n}) と一致しません",
            field="features",
            value=int(values.shape[0])
        )

    if workers > 1 and values.shape[1] > 1:
        chunks = np.array_split(np.arange(values.shape[1]), min(workers, values.shape[1]))
        blocks = np.empty((K + 1, values.shape[0], values.shape[1]), dtype=np.float64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(lambda cols: (cols, _propagate_columns(p, values[:, cols], K)), chunks)
            for cols, part in results:
                blocks[:, :, cols] = part
    else:
        blocks = _propagate_columns(p, values, K)

    LOGGER.info(f"✅ Krylov 基底構築: τ={p.tau}, K={K}, n={values.shape[0]}, d={values.shape[1]}")
    return KrylovBasis(K=K, blocks=blocks, taus=[p.tau], merged=False, propagator=p)


def build_merged_basis(
    g: Graph,
    taus: Sequence[float],
    x: Union[FeatureMatrix, np.ndarray],
    K: int,
    workers: int = 1
) -> KrylovBasis:
    """ブロック ℓ = Σ_i P_{τ_i}^ℓ X の統合基底を構築する"""
    if not taus:
        raise GraphValidationException("τ の集合が空です", field="taus")
    if len(taus) == 1:
        return build_krylov_basis(build_propagator(g, taus[0]), x, K, workers=workers)

    total = None
    for tau in taus:
        single = build_krylov_basis(build_propagator(g, tau), x, K, workers=workers)
        total = single.blocks.copy() if total is None else total + single.blocks

    LOGGER.info(f"✅ 統合基底構築: τ={list(taus)} (r={len(taus)})")
    return KrylovBasis(K=K, blocks=total, taus=[float(t) for t in taus], merged=True)


def concat_blocks(basis: KrylovBasis) -> np.ndarray:
    """(n, (K+1)·d) の連結行列 Z を返す"""
    return np.concatenate(list(basis.blocks), axis=1)


def basis_checksum(basis: KrylovBasis) -> str:
    return hashlib.sha256(np.ascontiguousarray(basis.blocks).tobytes()).hexdigest()


# === 直交化とグレード ===

def lanczos(
    p: TauPropagator,
    x: np.ndarray,
    K: int,
    tolerance: Optional[float] = None
) -> LanczosResult:
    """q_{j+1} ∝ P q_j − α_j q_j − β_j q_{j−1} (完全再直交化付き)"""
    tolerance = get_settings().breakdown_tolerance if tolerance is None else tolerance
    x = np.asarray(x, dtype=np.float64).ravel()
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise NumericalException("ゼロベクトルは直交化できません", operation="lanczos")

    vectors = np.zeros((x.size, K + 1), dtype=np.float64)
    alphas: List[float] = []
    betas: List[float] = []
    vectors[:, 0] = x / norm
    dim = 1
    beta = 0.0
    breakdown = False

    for j in range(K):
        w = p.apply(vectors[:, j])
        alpha = float(vectors[:, j] @ w)
        w = w - alpha * vectors[:, j]
        if j > 0:
            w = w - beta * vectors[:, j - 1]
        # 2 回の Gram-Schmidt で直交性を保つ
        for _ in range(2):
            w = w - vectors[:, :dim] @ (vectors[:, :dim].T @ w)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if beta < tolerance:
            breakdown = True
            LOGGER.debug(f"Lanczos 破綻: j={j}, 残差={beta:.3e}, グレード={dim}")
            break
        betas.append(beta)
        vectors[:, j + 1] = w / beta
        dim += 1

    return LanczosResult(
        vectors=vectors[:, :dim],
        alphas=np.array(alphas),
        betas=np.array(betas),
        grade=dim,
        breakdown=breakdown,
    )


def orthogonalize_basis(
    b: KrylovBasis,
    column: int,
    p: Optional[TauPropagator] = None
) -> LanczosResult:
    """単一 τ 基底の特徴列 column を三項漸化式で正規直交化する"""
    if b.merged or len(b.taus) != 1:
        raise GraphValidationException("直交化は単一 τ の基底のみ対応しています", field="taus", value=b.taus)
    if not 0 <= column < b.d:
        raise GraphValidationException(f"列 {column} が範囲外です (d={b.d})", field="column", value=column)
    propagator = p or b.propagator
    if propagator is None:
        raise GraphValidationException("直交化には P_τ が必要です (読み込んだ基底には propagator を渡してください)",
                                       field="propagator")
    result = lanczos(propagator, b.block(0)[:, column], b.K)
    if result.breakdown:
        LOGGER.warning(f"⚠️ 列 {column}: 次元 {result.grade} で Lanczos が破綻しました")
    return result


def build_orthogonal_basis(p: TauPropagator, x: Union[FeatureMatrix, np.ndarray], K: int) -> KrylovBasis:
    """全特徴列を Lanczos で直交化した基底

    各列の q_ℓ を ‖x_j‖ 倍して格納するので F^(0) = X を保つ。破綻後のブロックはゼロ。
    """
    values = _as_array(x)
    if values.shape[0] != p.n:
        raise GraphValidationException("特徴行数がノード数と一致しません", field="features")
    blocks = np.zeros((K + 1, values.shape[0], values.shape[1]), dtype=np.float64)
    blocks[0] = values
    for column in range(values.shape[1]):
        norm = np.linalg.norm(values[:, column])
        if norm == 0.0:
            continue
        result = lanczos(p, values[:, column], K)
        for hop in range(1, result.grade):
            blocks[hop][:, column] = norm * result.vectors[:, hop]
    LOGGER.info(f"✅ 直交基底構築: τ={p.tau}, K={K}, d={values.shape[1]}")
    return KrylovBasis(K=K, blocks=blocks, taus=[p.tau], merged=False, orthogonal=True, propagator=p)


def estimate_grade(
    p: TauPropagator,
    x: np.ndarray,
    max_k: int,
    tolerance: Optional[float] = None
) -> int:
    """P^t x が {x, …, P^{t−1}x} に線形従属となる最小の t

    max_k までに従属にならなければ max_k + 1 (「少なくとも」) を返す。
    """
    tolerance = get_settings().grade_tolerance if tolerance is None else tolerance
    if max_k < 1:
        raise GraphValidationException(f"max_k ≥ 1 が必要です (max_k={max_k})", field="max_k", value=max_k)
    x = np.asarray(x, dtype=np.float64).ravel()
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise NumericalException("ゼロベクトルのグレードは定義できません", operation="estimate_grade")

    basis = np.zeros((x.size, max_k + 1), dtype=np.float64)
    basis[:, 0] = x / norm
    for t in range(1, max_k + 1):
        w = p.apply(basis[:, t - 1])
        w_norm = np.linalg.norm(w)
        for _ in range(2):
            w = w - basis[:, :t] @ (basis[:, :t].T @ w)
        residual = np.linalg.norm(w)
        if w_norm == 0.0 or residual <= tolerance * w_norm:
            return t
        basis[:, t] = w / residual
    return max_k + 1


# === 永続化 ===

def save_basis(basis: KrylovBasis, path: Union[str, Path]) -> str:
    """JSON ヘッダ + (K+1) 個の行優先 float64 (LE) ブロックとして保存する"""
    header = {
        "n": basis.n,
        "d": basis.d,
        "K": basis.K,
        "taus": basis.taus,
        "merged": basis.merged,
        "orthogonal": basis.orthogonal,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fp:
            fp.write(_HEADER_LENGTH.pack(len(encoded)))
            fp.write(encoded)
            fp.write(np.ascontiguousarray(basis.blocks, dtype="<f8").tobytes())
    except OSError as e:
        raise DataSourceException(f"基底ファイルの書き込みに失敗しました: {e}", source_type="basis", path=str(path)) from e
    LOGGER.info(f"💾 基底保存: {path}")
    return basis_checksum(basis)


def load_basis(path: Union[str, Path]) -> KrylovBasis:
    p = Path(path)
    if not p.exists():
        raise DataSourceException(f"基底ファイルが見つかりません: {p}", source_type="basis", path=str(p))
    raw = p.read_bytes()
    try:
        (length,) = _HEADER_LENGTH.unpack_from(raw, 0)
        offset = _HEADER_LENGTH.size
        header = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise DataSourceException(f"基底ファイルのヘッダが不正です: {p}", source_type="basis", path=str(p)) from e

    shape = (header["K"] + 1, header["n"], header["d"])
    payload = raw[offset + length:]
    if len(payload) != 8 * int(np.prod(shape)):
        raise DataSourceException(f"基底ファイルのサイズがヘッダと一致しません: {p}", source_type="basis", path=str(p))
    blocks = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return KrylovBasis(
        K=int(header["K"]),
        blocks=blocks,
        taus=[float(t) for t in header["taus"]],
        merged=bool(header["merged"]),
        orthogonal=bool(header.get("orthogonal", False)),
    )
