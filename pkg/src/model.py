# src/model.py - 分離型学習 (基底重み w + MLP)

"""
Krylov ブロックの連結 Z に要素ごとの重み w を掛け、2 層 MLP で分類する。
伝播は学習前に一度だけ行い、学習中は基底を読むだけ。
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import get_settings
from .error_handling import DataSourceException, GraphValidationException, NumericalException
from .graph import FeatureMatrix, Graph, SplitSet
from .propagation import (
    KrylovBasis,
    build_krylov_basis,
    build_merged_basis,
    build_orthogonal_basis,
    build_propagator,
    concat_blocks,
)

LOGGER = logging.getLogger(__name__)

_HEADER_LENGTH = struct.Struct("<Q")
PARAMETER_ORDER = ("w", "W1", "b1", "W2", "b2")


class TrainConfig(BaseModel):
    """学習ハイパーパラメータ"""
    learning_rate: float = Field(gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    epochs: int = Field(ge=1)
    patience: int = Field(ge=1)
    hidden: int = Field(ge=1)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    seed: int = 0
    per_column_w: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 50

    @classmethod
    def from_settings(cls, **overrides) -> "TrainConfig":
        """Settings の既定値に overrides (None は無視) を重ねる"""
        settings = get_settings()
        values = {**settings.get_train_config(), **settings.get_optimizer_config(),
                  "log_every": settings.log_every}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_acc: float


class SplitSummary(BaseModel):
    """分割ごとのテスト精度と平均 ± 標準偏差"""
    accuracies: List[float]
    mean: float
    std: float
    best_epochs: List[int] = Field(default_factory=list)


class SweepRow(BaseModel):
    tau: Union[float, List[float]]
    K: int
    mean: float
    std: float
    accuracies: List[float]


class BasisAngles(BaseModel):
    angles: List[float]
    skipped_columns: int


class Adam:
    """各パラメータ独立の一次・二次モーメント推定による最適化"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        for key in params:
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(params[key])
                self.v[key] = np.zeros_like(params[key])
            self.m[key] *= self.beta1
            self.m[key] += (1.0 - self.beta1) * g
            self.v[key] *= self.beta2
            self.v[key] += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(self.v[key] * (1.0 / bc2)) + self.epsilon
            params[key] -= step_size * self.m[key] / denom


@dataclass(eq=False)
class FilterModel:
    """w ⊙ [F^(0) | … | F^(K)] → Linear → ReLU → Dropout → Linear"""
    K: int
    d: int
    num_classes: int
    hidden: int
    dropout: float = 0.5
    seed: int = 0
    per_column_w: bool = False
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            self.params = self._initial_parameters()
        self._rng = np.random.default_rng(self.seed + 1)

    def _initial_parameters(self) -> Dict[str, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        width = (self.K + 1) * self.d
        w_shape = (self.K + 1, self.d) if self.per_column_w else (self.K + 1,)
        limit1 = np.sqrt(6.0 / (width + self.hidden))
        limit2 = np.sqrt(6.0 / (self.hidden + self.num_classes))
        return {
            "w": np.full(w_shape, 1.0 / (self.K + 1)),
            "W1": rng.uniform(-limit1, limit1, size=(width, self.hidden)),
            "b1": np.zeros(self.hidden),
            "W2": rng.uniform(-limit2, limit2, size=(self.hidden, self.num_classes)),
            "b2": np.zeros(self.num_classes),
        }

    @property
    def input_width(self) -> int:
        return (self.K + 1) * self.d

    def expanded_w(self) -> np.ndarray:
        """連結列 (ブロック優先) に合わせて展開した重み"""
        w = self.params["w"]
        return w.ravel() if self.per_column_w else np.repeat(w, self.d)

    def copy_parameters(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


# === 順伝播と逆伝播 ===

def _check_width(model: FilterModel, basis: KrylovBasis) -> None:
    if basis.K != model.K or basis.d != model.d:
        raise GraphValidationException(
            f"基底 (K={basis.K}, d={basis.d}) とモデル (K={model.K}, d={model.d}) の幅が一致しません",
            field="width",
            value=[basis.K, basis.d]
        )


def _node_index(nodes: Sequence[int]) -> np.ndarray:
    index = np.asarray(nodes, dtype=np.int64)
    if index.size == 0:
        raise GraphValidationException("ノードリストが空です", field="nodes")
    return index


def _forward(model: FilterModel, z: np.ndarray, training: bool) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    p = model.params
    zw = z * model.expanded_w()
    pre = zw @ p["W1"] + p["b1"]
    hidden = np.maximum(pre, 0.0)
    mask = None
    if training and model.dropout > 0.0:
        keep = 1.0 - model.dropout
        mask = (model._rng.random(hidden.shape) < keep) / keep
        hidden = hidden * mask
    scores = hidden @ p["W2"] + p["b2"]
    return scores, {"z": z, "zw": zw, "pre": pre, "hidden": hidden, "mask": mask}


def _softmax_loss(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """平均交差エントロピーとスコアに関する勾配"""
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / labels.size


def _backward(model: FilterModel, cache: Dict[str, np.ndarray], grad_scores: np.ndarray,
              weight_decay: float) -> Dict[str, np.ndarray]:
    p = model.params
    grads = {
        "W2": cache["hidden"].T @ grad_scores + weight_decay * p["W2"],
        "b2": grad_scores.sum(axis=0),
    }
    grad_hidden = grad_scores @ p["W2"].T
    if cache["mask"] is not None:
        grad_hidden = grad_hidden * cache["mask"]
    grad_pre = grad_hidden * (cache["pre"] > 0.0)
    grads["W1"] = cache["zw"].T @ grad_pre + weight_decay * p["W1"]
    grads["b1"] = grad_pre.sum(axis=0)
    grad_w = ((grad_pre @ p["W1"].T) * cache["z"]).sum(axis=0).reshape(model.K + 1, model.d)
    grads["w"] = grad_w if model.per_column_w else grad_w.sum(axis=1)
    return grads


def _objective(model: FilterModel, z: np.ndarray, labels: np.ndarray, weight_decay: float,
               training: bool) -> Tuple[float, np.ndarray, Dict[str, np.ndarray]]:
    scores, cache = _forward(model, z, training)
    loss, grad_scores = _softmax_loss(scores, labels)
    penalty = 0.5 * weight_decay * (np.sum(model.params["W1"] ** 2) + np.sum(model.params["W2"] ** 2))
    return loss + float(penalty), grad_scores, cache


def forward(model: FilterModel, basis: KrylovBasis, nodes: Sequence[int]) -> np.ndarray:
    """MLP(Z ⊙ w) の推論スコア (|nodes| × C)"""
    _check_width(model, basis)
    index = _node_index(nodes)
    z = concat_blocks(basis)[index]
    scores, _ = _forward(model, z, training=False)
    if not np.all(np.isfinite(scores)):
        raise NumericalException("スコアに非有限値が含まれています", operation="forward")
    return scores


def forward_basis_sum(model: FilterModel, bases: Sequence[KrylovBasis], nodes: Sequence[int]) -> np.ndarray:
    """Σ_i (Z_i ⊙ w) を MLP に通す (各基底に同じ w を使う場合の統合基底と比較用)"""
    if not bases:
        raise GraphValidationException("基底がありません", field="bases")
    index = _node_index(nodes)
    total = None
    for basis in bases:
        _check_width(model, basis)
        part = concat_blocks(basis)[index] * model.expanded_w()
        total = part if total is None else total + part
    p = model.params
    hidden = np.maximum(total @ p["W1"] + p["b1"], 0.0)
    return hidden @ p["W2"] + p["b2"]


def evaluate(model: FilterModel, basis: KrylovBasis, nodes: Sequence[int], labels: np.ndarray) -> float:
    index = _node_index(nodes)
    predictions = forward(model, basis, index).argmax(axis=1)
    return float(np.mean(predictions == np.asarray(labels)[index]))


# === 学習 ===

def new_model(basis: KrylovBasis, g: Graph, cfg: TrainConfig) -> FilterModel:
    return FilterModel(
        K=basis.K,
        d=basis.d,
        num_classes=g.num_classes,
        hidden=cfg.hidden,
        dropout=cfg.dropout,
        seed=cfg.seed,
        per_column_w=cfg.per_column_w,
    )


def train(
    model: FilterModel,
    basis: KrylovBasis,
    g: Graph,
    split: SplitSet,
    cfg: TrainConfig
) -> Tuple[FilterModel, List[EpochRecord]]:
    """Adam による全バッチ学習。検証精度で早期終了し、最良の重みを復元する"""
    _check_width(model, basis)
    if not split.train or not split.val:
        raise GraphValidationException("学習・検証ノードが必要です", field="split")

    z_all = concat_blocks(basis)
    train_index = np.asarray(split.train, dtype=np.int64)
    z_train = z_all[train_index]
    y_train = g.labels[train_index]
    optimizer = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    history: List[EpochRecord] = []
    best_acc = -1.0
    best_params = model.copy_parameters()
    best_epoch = 0
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        loss, grad_scores, cache = _objective(model, z_train, y_train, cfg.weight_decay, training=True)
        if not np.isfinite(loss):
            raise NumericalException(f"損失が NaN になりました (epoch={epoch})", operation="train", value=epoch)
        optimizer.step(model.params, _backward(model, cache, grad_scores, cfg.weight_decay))

        val_acc = evaluate(model, basis, split.val, g.labels)
        history.append(EpochRecord(epoch=epoch, train_loss=loss, val_acc=val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = model.copy_parameters()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1

        if cfg.log_every and epoch % cfg.log_every == 0:
            LOGGER.info(f"epoch {epoch}: loss={loss:.4f}, val_acc={val_acc:.4f}")
        if stale >= cfg.patience:
            LOGGER.info(f"早期終了: epoch={epoch} (最良 epoch={best_epoch})")
            break

    model.params = best_params
    LOGGER.info(f"✅ 学習完了: 最良検証精度={best_acc:.4f} (epoch {best_epoch})")
    return model, history


def run_splits(
    basis: KrylovBasis,
    g: Graph,
    splits: Sequence[SplitSet],
    cfg: TrainConfig
) -> Tuple[SplitSummary, List[FilterModel], List[List[EpochRecord]]]:
    """分割ごとに新しいモデルを学習し、テスト精度を集計する"""
    if not splits:
        raise GraphValidationException("分割がありません", field="splits")
    accuracies, models, histories, best_epochs = [], [], [], []
    for split in sorted(splits, key=lambda s: s.index):
        model, history = train(new_model(basis, g, cfg), basis, g, split, cfg)
        accuracies.append(evaluate(model, basis, split.test, g.labels))
        models.append(model)
        histories.append(history)
        best_epochs.append(int(max(history, key=lambda r: r.val_acc).epoch))
    summary = SplitSummary(
        accuracies=accuracies,
        mean=float(np.mean(accuracies)),
        std=float(np.std(accuracies)),
        best_epochs=best_epochs,
    )
    return summary, models, histories


def tau_sweep(
    g: Graph,
    x: FeatureMatrix,
    K: int,
    tau_grid: Sequence[Union[float, Sequence[float]]],
    cfg: TrainConfig,
    splits: Sequence[SplitSet],
    orthogonal: bool = False
) -> List[SweepRow]:
    """τ ごとに基底を作り直し、同じ分割で精度を比較する (要素が列なら統合基底)"""
    if not tau_grid:
        raise GraphValidationException("τ グリッドが空です", field="tau_grid")
    rows = []
    for tau in tau_grid:
        if isinstance(tau, (list, tuple)):
            basis = build_merged_basis(g, list(tau), x, K)
        elif orthogonal:
            basis = build_orthogonal_basis(build_propagator(g, tau), x, K)
        else:
            basis = build_krylov_basis(build_propagator(g, tau), x, K)
        summary, _, _ = run_splits(basis, g, splits, cfg)
        rows.append(SweepRow(tau=tau, K=K, mean=summary.mean, std=summary.std, accuracies=summary.accuracies))
        LOGGER.info(f"τ={tau}: {summary.mean:.4f} ± {summary.std:.4f}")
    return sorted(rows, key=lambda r: r.tau if isinstance(r.tau, float) else min(r.tau))


def hop_sweep(
    g: Graph,
    x: FeatureMatrix,
    tau: float,
    hop_grid: Sequence[int],
    cfg: TrainConfig,
    splits: Sequence[SplitSet],
    orthogonal: bool = True
) -> List[SweepRow]:
    """K を変えて精度を比較する (既定は直交化基底)"""
    if not hop_grid:
        raise GraphValidationException("K グリッドが空です", field="hop_grid")
    p = build_propagator(g, tau)
    rows = []
    for K in sorted(hop_grid):
        basis = build_orthogonal_basis(p, x, K) if orthogonal else build_krylov_basis(p, x, K)
        summary, _, _ = run_splits(basis, g, splits, cfg)
        rows.append(SweepRow(tau=float(tau), K=K, mean=summary.mean, std=summary.std, accuracies=summary.accuracies))
        LOGGER.info(f"K={K}: {summary.mean:.4f} ± {summary.std:.4f}")
    return rows


# === 診断 ===

def basis_angles(basis: KrylovBasis) -> BasisAngles:
    """連続するホップ間の列ごとの角度 (度) の平均"""
    angles = []
    skipped = 0
    for hop in range(1, basis.K + 1):
        previous, current = basis.block(hop - 1), basis.block(hop)
        norms = np.linalg.norm(previous, axis=0) * np.linalg.norm(current, axis=0)
        valid = norms > 0.0
        if not np.any(valid):
            raise NumericalException(f"ホップ {hop} で全列がゼロです", operation="basis_angles", value=hop)
        skipped += int((~valid).sum())
        cosine = np.clip((previous * current).sum(axis=0)[valid] / norms[valid], -1.0, 1.0)
        angles.append(float(np.degrees(np.arccos(cosine)).mean()))
    if skipped:
        LOGGER.warning(f"⚠️ ゼロノルム列を {skipped} 件スキップしました")
    return BasisAngles(angles=angles, skipped_columns=skipped)


def gradient_check(
    model: FilterModel,
    basis: KrylovBasis,
    labels: np.ndarray,
    nodes: Sequence[int],
    weight_decay: float = 0.0,
    step: float = 1e-5
) -> Dict[str, float]:
    """解析勾配と中心差分の相対誤差 ‖a − n‖ / (‖a‖ + ‖n‖) をパラメータごとに返す"""
    _check_width(model, basis)
    index = _node_index(nodes)
    z = concat_blocks(basis)[index]
    y = np.asarray(labels)[index]

    _, grad_scores, cache = _objective(model, z, y, weight_decay, training=False)
    analytic = _backward(model, cache, grad_scores, weight_decay)

    errors = {}
    for key in PARAMETER_ORDER:
        values = model.params[key]
        numeric = np.zeros_like(values)
        for position in np.ndindex(values.shape):
            original = values[position]
            values[position] = original + step
            plus = _objective(model, z, y, weight_decay, training=False)[0]
            values[position] = original - step
            minus = _objective(model, z, y, weight_decay, training=False)[0]
            values[position] = original
            numeric[position] = (plus - minus) / (2.0 * step)
        scale = np.linalg.norm(analytic[key]) + np.linalg.norm(numeric)
        errors[key] = float(np.linalg.norm(analytic[key] - numeric) / scale) if scale > 0.0 else 0.0
    return errors


# === 永続化 ===

def save_checkpoint(model: FilterModel, path: Union[str, Path], cfg: Optional[TrainConfig] = None) -> None:
    """JSON ヘッダ (形状・設定・seed) + float64 (LE) 重み列"""
    header = {
        "K": model.K,
        "d": model.d,
        "num_classes": model.num_classes,
        "hidden": model.hidden,
        "dropout": model.dropout,
        "seed": model.seed,
        "per_column_w": model.per_column_w,
        "shapes": {key: list(model.params[key].shape) for key in PARAMETER_ORDER},
        "config": cfg.model_dump() if cfg is not None else {},
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fp:
            fp.write(_HEADER_LENGTH.pack(len(encoded)))
            fp.write(encoded)
            for key in PARAMETER_ORDER:
                fp.write(np.ascontiguousarray(model.params[key], dtype="<f8").tobytes())
    except OSError as e:
        raise DataSourceException(f"チェックポイントの書き込みに失敗しました: {e}",
                                  source_type="checkpoint", path=str(path)) from e
    LOGGER.info(f"💾 チェックポイント保存: {path}")


def load_checkpoint(path: Union[str, Path]) -> FilterModel:
    p = Path(path)
    if not p.exists():
        raise DataSourceException(f"チェックポイントが見つかりません: {p}", source_type="checkpoint", path=str(p))
    raw = p.read_bytes()
    try:
        (length,) = _HEADER_LENGTH.unpack_from(raw, 0)
        offset = _HEADER_LENGTH.size
        header = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise DataSourceException(f"チェックポイントのヘッダが不正です: {p}",
                                  source_type="checkpoint", path=str(p)) from e

    params = {}
    cursor = offset + length
    for key in PARAMETER_ORDER:
        shape = tuple(header["shapes"][key])
        size = 8 * int(np.prod(shape))
        chunk = raw[cursor:cursor + size]
        if len(chunk) != size:
            raise DataSourceException(f"チェックポイントが途中で切れています: {p}",
                                      source_type="checkpoint", path=str(p))
        params[key] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        cursor += size

    return FilterModel(
        K=int(header["K"]),
        d=int(header["d"]),
        num_classes=int(header["num_classes"]),
        hidden=int(header["hidden"]),
        dropout=float(header["dropout"]),
        seed=int(header["seed"]),
        per_column_w=bool(header["per_column_w"]),
        params=params,
    )


def write_history_csv(history: Sequence[EpochRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "train_loss", "val_acc"])
        for record in history:
            writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_acc)])
