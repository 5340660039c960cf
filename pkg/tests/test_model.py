# tests/test_model.py - 分離型学習モデルのテスト

"""
順伝播・学習・勾配・チェックポイント・基底角度・スイープのテスト
"""

import os
import sys
from pathlib import Path

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np
import pytest

from src.datagen import SyntheticSpec, generate
from src.error_handling import DataSourceException, GraphValidationException, NumericalException
from src.graph import FeatureMatrix, Graph, SplitSet, load_graph, make_splits
from src.model import (
    FilterModel,
    TrainConfig,
    basis_angles,
    evaluate,
    forward,
    forward_basis_sum,
    gradient_check,
    hop_sweep,
    load_checkpoint,
    new_model,
    run_splits,
    save_checkpoint,
    tau_sweep,
    train,
    write_history_csv,
)
from src.propagation import (
    basis_checksum,
    build_krylov_basis,
    build_merged_basis,
    build_propagator,
)
from src.theorem_suites import random_test_graph


def _ring(n: int, labels: np.ndarray) -> Graph:
    edges = np.array([(i, (i + 1) % n) for i in range(n)] + [(0, 2)])
    return Graph.from_edges(n, edges, labels=labels)


def _separable_problem(n: int = 20):
    labels = np.arange(n) % 2
    g = _ring(n, labels)
    x = FeatureMatrix(np.eye(2)[labels])
    return g, x


def _config(**overrides) -> TrainConfig:
    values = dict(learning_rate=0.05, weight_decay=0.0, epochs=150, patience=150,
                  hidden=16, dropout=0.0, seed=0, log_every=0)
    values.update(overrides)
    return TrainConfig(**values)


def _small_basis(seed: int = 0, K: int = 2, d: int = 3):
    rng = np.random.default_rng(seed)
    g = random_test_graph(seed, 10, 14)
    g = g.with_labels(rng.integers(0, 3, size=g.n), num_classes=3)
    basis = build_krylov_basis(build_propagator(g, 0.9), rng.standard_normal((g.n, d)), K)
    return g, basis


def test_forward_shape_and_determinism():
    g, basis = _small_basis()
    model = FilterModel(K=2, d=3, num_classes=3, hidden=8, seed=1)
    nodes = np.arange(g.n)
    scores = forward(model, basis, nodes)
    assert scores.shape == (g.n, 3)
    np.testing.assert_array_equal(scores, forward(model, basis, nodes))


def test_initial_weights():
    """w は 1/(K+1) で初期化、列ごとモードでは (K+1) × d"""
    model = FilterModel(K=3, d=2, num_classes=2, hidden=4)
    np.testing.assert_array_equal(model.params["w"], np.full(4, 0.25))
    per_column = FilterModel(K=3, d=2, num_classes=2, hidden=4, per_column_w=True)
    assert per_column.params["w"].shape == (4, 2)
    assert per_column.expanded_w().shape == (8,)
    assert model.input_width == 8


def test_zero_weights_give_identical_rows():
    """w = 0 なら入力に依らず全行が同じスコア"""
    g, basis = _small_basis()
    model = FilterModel(K=2, d=3, num_classes=3, hidden=8)
    model.params["w"] = np.zeros(3)
    scores = forward(model, basis, np.arange(g.n))
    np.testing.assert_allclose(scores, np.tile(scores[0], (g.n, 1)))


def test_hop_zero_is_plain_mlp():
    """K=0 は特徴そのものを入力とする MLP"""
    rng = np.random.default_rng(4)
    g = random_test_graph(4, 8, 8)
    x = rng.standard_normal((g.n, 3))
    basis = build_krylov_basis(build_propagator(g, 1.0), x, 0)
    model = FilterModel(K=0, d=3, num_classes=2, hidden=5, seed=2)
    p = model.params
    expected = np.maximum(x @ p["W1"] + p["b1"], 0.0) @ p["W2"] + p["b2"]
    np.testing.assert_allclose(forward(model, basis, np.arange(g.n)), expected)


def test_forward_width_mismatch():
    _, basis = _small_basis()
    with pytest.raises(GraphValidationException):
        forward(FilterModel(K=3, d=3, num_classes=3, hidden=4), basis, [0])


def test_forward_empty_nodes():
    _, basis = _small_basis()
    with pytest.raises(GraphValidationException):
        forward(FilterModel(K=2, d=3, num_classes=3, hidden=4), basis, [])


def test_train_separable_reaches_full_accuracy():
    """クラスが特徴で完全に分離できれば学習精度 1.0"""
    g, x = _separable_problem()
    basis = build_krylov_basis(build_propagator(g, 1.0), x, 0)
    nodes = list(range(g.n))
    split = SplitSet(seed=0, train=nodes, val=nodes, test=nodes)
    model, history = train(new_model(basis, g, _config()), basis, g, split, _config())
    assert evaluate(model, basis, nodes, g.labels) == 1.0
    assert history[0].epoch == 1
    assert max(record.val_acc for record in history) == 1.0


def test_train_early_stopping_restores_best():
    g, x = _separable_problem()
    basis = build_krylov_basis(build_propagator(g, 1.0), x, 1)
    nodes = list(range(g.n))
    split = SplitSet(seed=0, train=nodes, val=nodes, test=nodes)
    cfg = _config(epochs=500, patience=5)
    model, history = train(new_model(basis, g, cfg), basis, g, split, cfg)
    assert len(history) < 500
    best = max(record.val_acc for record in history)
    assert evaluate(model, basis, nodes, g.labels) == best


def test_train_nan_raises():
    g, x = _separable_problem()
    basis = build_krylov_basis(build_propagator(g, 1.0), x, 0)
    nodes = list(range(g.n))
    model = new_model(basis, g, _config())
    model.params["W1"][:] = np.nan
    with pytest.raises(NumericalException) as exc_info:
        train(model, basis, g, SplitSet(seed=0, train=nodes, val=nodes, test=nodes), _config())
    assert exc_info.value.details["value"] == 1


def test_train_leaves_basis_untouched_and_is_deterministic():
    g, basis = _small_basis(seed=3)
    split = make_splits(g, seed=0, count=1)[0]
    cfg = _config(epochs=20, dropout=0.5)
    before = basis_checksum(basis)
    first, _ = train(new_model(basis, g, cfg), basis, g, split, cfg)
    second, _ = train(new_model(basis, g, cfg), basis, g, split, cfg)
    assert basis_checksum(basis) == before
    for key in first.params:
        np.testing.assert_array_equal(first.params[key], second.params[key])


def test_run_splits_summary():
    g, basis = _small_basis(seed=5)
    splits = make_splits(g, seed=1, count=3)
    summary, models, histories = run_splits(basis, g, splits, _config(epochs=10))
    assert len(summary.accuracies) == 3
    assert len(models) == 3 and len(histories) == 3
    assert summary.mean == pytest.approx(np.mean(summary.accuracies))
    assert all(0.0 <= acc <= 1.0 for acc in summary.accuracies)


@pytest.mark.parametrize("weight_decay,per_column", [(0.0, False), (5e-4, False), (0.0, True)])
def test_gradient_check(weight_decay, per_column):
    """解析勾配と中心差分の相対誤差 ≤ 1e-4"""
    g, basis = _small_basis(seed=6)
    model = FilterModel(K=2, d=3, num_classes=3, hidden=5, seed=7, per_column_w=per_column)
    errors = gradient_check(model, basis, g.labels, np.arange(g.n), weight_decay=weight_decay)
    assert set(errors) == {"w", "W1", "b1", "W2", "b2"}
    assert max(errors.values()) <= 1e-4, errors


def test_checkpoint_round_trip(tmp_path):
    g, basis = _small_basis()
    cfg = _config(epochs=5)
    model, _ = train(new_model(basis, g, cfg), basis, g, make_splits(g, 0, 1)[0], cfg)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, cfg)
    loaded = load_checkpoint(path)
    for key in model.params:
        np.testing.assert_array_equal(loaded.params[key], model.params[key])
    nodes = np.arange(g.n)
    np.testing.assert_array_equal(forward(loaded, basis, nodes), forward(model, basis, nodes))


def test_checkpoint_truncated(tmp_path):
    model = FilterModel(K=1, d=2, num_classes=2, hidden=3)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataSourceException) as exc_info:
        load_checkpoint(path)
    assert exc_info.value.exit_code == 2


def test_write_history_csv(tmp_path):
    g, x = _separable_problem()
    basis = build_krylov_basis(build_propagator(g, 1.0), x, 0)
    nodes = list(range(g.n))
    _, history = train(new_model(basis, g, _config(epochs=3)), basis, g,
                       SplitSet(seed=0, train=nodes, val=nodes, test=nodes), _config(epochs=3))
    path = tmp_path / "history.csv"
    write_history_csv(history, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,train_loss,val_acc"
    assert len(lines) == 4


def test_basis_angles_on_eigenvectors():
    """K3 の固有ベクトル: 定数ベクトルは 0°、λ(P) = −1/2 の固有ベクトルは 180°"""
    g = Graph.from_edges(3, np.array([(0, 1), (1, 2), (0, 2)]))
    x = np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 0.0]])
    angles = basis_angles(build_krylov_basis(build_propagator(g, 1.0), x, 3))
    assert angles.skipped_columns == 0
    assert angles.angles == pytest.approx([90.0, 90.0, 90.0], abs=1e-6)

    constant = basis_angles(build_krylov_basis(build_propagator(g, 1.0), np.ones(3), 2))
    assert constant.angles == pytest.approx([0.0, 0.0], abs=1e-6)
    alternating = basis_angles(build_krylov_basis(build_propagator(g, 1.0), np.array([1.0, -1.0, 0.0]), 2))
    assert alternating.angles == pytest.approx([180.0, 180.0], abs=1e-6)


def test_basis_angles_zero_columns():
    g = Graph.from_edges(3, np.array([(0, 1), (1, 2), (0, 2)]))
    x = np.array([[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]])
    angles = basis_angles(build_krylov_basis(build_propagator(g, 1.0), x, 2))
    assert angles.skipped_columns == 2
    with pytest.raises(NumericalException):
        basis_angles(build_krylov_basis(build_propagator(g, 1.0), np.zeros(3), 1))


def test_forward_basis_sum_matches_merged():
    rng = np.random.default_rng(8)
    g = random_test_graph(8, 12, 20)
    x = rng.standard_normal((g.n, 3))
    taus = [0.4, 0.7, 1.0]
    merged = build_merged_basis(g, taus, x, 3)
    singles = [build_krylov_basis(build_propagator(g, tau), x, 3) for tau in taus]
    model = FilterModel(K=3, d=3, num_classes=2, hidden=6, dropout=0.0)
    model.params["w"] = rng.standard_normal(4)
    nodes = np.arange(g.n)
    difference = np.max(np.abs(forward(model, merged, nodes) - forward_basis_sum(model, singles, nodes)))
    assert difference <= 1e-10


def test_tau_sweep_and_hop_sweep():
    g, x = _separable_problem()
    splits = make_splits(g, seed=0, count=2)
    cfg = _config(epochs=10)
    rows = tau_sweep(g, x, 2, [1.0, 0.5, [0.5, 1.0]], cfg, splits)
    assert [row.tau for row in rows] == [0.5, [0.5, 1.0], 1.0]
    assert all(len(row.accuracies) == 2 for row in rows)

    hops = hop_sweep(g, x, 0.9, [2, 0], cfg, splits)
    assert [row.K for row in hops] == [0, 2]
    with pytest.raises(GraphValidationException):
        tau_sweep(g, x, 2, [], cfg, splits)


def test_train_config_validation():
    with pytest.raises(Exception):
        TrainConfig(learning_rate=0.0, epochs=1, patience=1, hidden=1)
    with pytest.raises(Exception):
        TrainConfig(learning_rate=0.01, epochs=1, patience=1, hidden=1, dropout=1.0)


@pytest.mark.slow
def test_homophilous_synthetic_end_to_end():
    """n=600, h*=0.9, s=4, σ=1 の合成グラフで平均テスト精度 ≥ 0.95"""
    g, x = generate(SyntheticSpec(n=600, homophily=0.9, separation=4.0, noise=1.0, feature_dim=16, seed=0))
    basis = build_krylov_basis(build_propagator(g, 0.9), x, 10)
    cfg = TrainConfig(learning_rate=0.01, weight_decay=5e-4, epochs=300, patience=100,
                      hidden=64, dropout=0.5, seed=0, log_every=0)
    summary, _, _ = run_splits(basis, g, make_splits(g, seed=0, count=5), cfg)
    assert summary.mean >= 0.95


@pytest.mark.slow
@pytest.mark.skipif(not os.getenv("ADAPTKRY_CORA_DIR"), reason="ADAPTKRY_CORA_DIR が未設定")
def test_cora_reference_accuracy():
    """Cora で τ=0.9, K=10, lr=0.10, hidden=256 の 10 分割平均精度が 88.0〜91.9%"""
    root = Path(os.environ["ADAPTKRY_CORA_DIR"])
    g, x = load_graph(root / "edges.tsv", root / "features.csv", root / "labels.txt")
    basis = build_krylov_basis(build_propagator(g, 0.9), x, 10)
    cfg = TrainConfig.from_settings(learning_rate=0.10, hidden=256, seed=0, log_every=0)
    summary, _, _ = run_splits(basis, g, make_splits(g, seed=0, count=10), cfg)
    assert 0.880 <= summary.mean <= 0.919


def test_tau_sweep_single_point_matches_plain_run():
    """τ グリッドが 1 点なら通常の学習と同じ結果"""
    g, x = _separable_problem()
    splits = make_splits(g, seed=2, count=2)
    cfg = _config(epochs=15)
    rows = tau_sweep(g, x, 2, [0.8], cfg, splits)
    summary, _, _ = run_splits(build_krylov_basis(build_propagator(g, 0.8), x, 2), g, splits, cfg)
    assert len(rows) == 1
    assert rows[0].accuracies == summary.accuracies


def test_basis_angles_lazy_propagation_is_smoother():
    """τ=0.5 の連続ホップ間角度は τ=1.0 より小さい"""
    g = random_test_graph(0, 100, 100)
    x = np.random.default_rng(0).standard_normal((g.n, 8))
    lazy = basis_angles(build_krylov_basis(build_propagator(g, 0.5), x, 10)).angles
    plain = basis_angles(build_krylov_basis(build_propagator(g, 1.0), x, 10)).angles
    assert len(lazy) == len(plain) == 10
    assert lazy[0] < plain[0]
    assert np.mean(lazy) < np.mean(plain)
    assert lazy[-1] < lazy[0] and plain[-1] < plain[0]


def test_basis_angles_diverge_above_one():
    """5 点サイクル: τ=1.5 では P_τ の固有値 −1.171 が支配し角度は 180° に近づく"""
    g = Graph.from_edges(5, np.array([(i, (i + 1) % 5) for i in range(5)]))
    x = np.eye(5)[0]
    diverging = basis_angles(build_krylov_basis(build_propagator(g, 1.5, warn=False), x, 20)).angles
    assert diverging[0] == pytest.approx(np.degrees(np.arccos(-0.2 / np.sqrt(0.76))), abs=1e-6)
    assert diverging[-1] > 170.0
    assert diverging[-1] > diverging[0]

    settling = basis_angles(build_krylov_basis(build_propagator(g, 0.5), x, 20)).angles
    assert settling[-1] < 1.0


@pytest.mark.slow
def test_tau_sweep_synthetic_homophily_and_heterophily():
    """h*=0.9 では τ による差は 5 ポイント以内、h*=0.1 では最良の τ が τ=0.1 を 5 ポイント以上上回る"""
    grid = [0.1, 0.5, 0.9, 1.0, 1.2]
    cfg = TrainConfig.from_settings(seed=0, log_every=0)

    g, x = generate(SyntheticSpec(n=600, homophily=0.9, separation=4.0, noise=1.0, seed=0))
    rows = tau_sweep(g, x, 10, grid, cfg, make_splits(g, seed=0, count=3))
    means = [row.mean for row in rows]
    assert max(means) - min(means) <= 0.05

    g, x = generate(SyntheticSpec(n=600, homophily=0.1, separation=1.0, noise=1.0, seed=0))
    rows = tau_sweep(g, x, 10, grid, cfg, make_splits(g, seed=0, count=3))
    by_tau = {row.tau: row.mean for row in rows}
    assert max(by_tau.values()) - by_tau[0.1] >= 0.05
