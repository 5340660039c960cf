# src/cli.py - コマンドラインエントリポイント

"""
AdaptKry パイプライン CLI

    python -m src.cli prep     --edges g.tsv --features x.csv --labels y.txt --tau 0.8 --hops 10 --out b.bin
    python -m src.cli train    --basis b.bin --edges g.tsv --features x.csv --labels y.txt --splits 10 --seed 0
    python -m src.cli verify   [--theorem spectrum] [--graphs 5 --max-n 20]
    python -m src.cli spectrum --edges g.tsv --features x.csv --labels y.txt --tau 0.5 --eigen-out eig.csv
    python -m src.cli generate --n 600 --homophily 0.9 --seed 0 --out-dir data/
    python -m src.cli sweep    --edges g.tsv --features x.csv --labels y.txt --tau-grid 0.1,0.5,0.9 --seed 0

終了コード: 0 正常, 2 入出力, 3 検証, 4 数値, 5 定理違反
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import get_settings, load_override_file, merge_options
from .datagen import SyntheticSpec, write_dataset
from .error_handling import EXIT_OK, GraphValidationException, create_error_report, exit_code_for
from .graph import load_graph, make_splits, require_spectral_ready, save_splits, load_splits
from .model import (
    TrainConfig,
    basis_angles,
    hop_sweep,
    run_splits,
    save_checkpoint,
    tau_sweep,
    write_history_csv,
)
from .polybases import make_coeffs
from .propagation import (
    build_krylov_basis,
    build_merged_basis,
    build_orthogonal_basis,
    build_propagator,
    load_basis,
    save_basis,
)
from .run_manifest import RunManifest, manifest_path_for, write_json_atomic, write_manifest
from .spectral import eig_oracle, frequency_response_export, homophily_frequency_profile, mixing_bound
from .theorem_suites import raise_on_failure, run_suites

LOGGER = logging.getLogger(__name__)

TRAIN_FLAGS = {
    "learning_rate": "lr",
    "weight_decay": "weight_decay",
    "epochs": "epochs",
    "patience": "patience",
    "hidden": "hidden",
    "dropout": "dropout",
    "per_column_w": "per_column_w",
}


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"カンマ区切りの数値が必要です: {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"カンマ区切りの整数が必要です: {text!r}") from e


def _emit(payload: Any) -> None:
    print(json.dumps(payload, ensure_ascii=False, sort_keys=True, default=str))


def _options(args: argparse.Namespace, cli: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    """CLI > --config ファイル > Settings の順で統合する"""
    file_options = load_override_file(args.config)
    relevant = {k: v for k, v in file_options.items() if k in defaults}
    return merge_options(cli, relevant, defaults)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    settings = get_settings()
    defaults = {**settings.get_train_config(), **settings.get_optimizer_config(), "log_every": settings.log_every}
    cli = {key: getattr(args, flag, None) for key, flag in TRAIN_FLAGS.items()}
    if not cli["per_column_w"]:
        cli["per_column_w"] = None
    merged = _options(args, cli, defaults)
    return TrainConfig(**merged, seed=args.seed)


def _add_graph_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--edges", required=True, help="TSV 辺ファイル")
    parser.add_argument("--features", required=True, help="CSV 特徴ファイル")
    parser.add_argument("--labels", required=True, help="ラベルファイル (1 行 1 整数)")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--weight-decay", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--hidden", type=int, default=None)
    parser.add_argument("--dropout", type=float, default=None)
    parser.add_argument("--per-column-w", action="store_true")
    parser.add_argument("--splits", type=int, default=10, help="ランダム分割の数")
    parser.add_argument("--splits-file", default=None, help="既存の分割 JSON")
    parser.add_argument("--seed", type=int, required=True)


def _graph_manifest(manifest: RunManifest, args: argparse.Namespace) -> None:
    for kind in ("edges", "features", "labels"):
        manifest.add_input(kind, getattr(args, kind))


# === サブコマンド ===


def cmd_prep(args: argparse.Namespace) -> int:
    settings = get_settings()
    options = _options(args, {"tau": args.tau, "hops": args.hops},
                       {"tau": [settings.default_tau], "hops": settings.default_hops})
    taus = options["tau"] if isinstance(options["tau"], list) else [options["tau"]]
    hops = int(options["hops"])

    manifest = RunManifest(command="prep", config={"taus": taus, "hops": hops, "r": len(taus),
                                                   "ortho": args.ortho, "workers": args.workers})
    with manifest.timed("load"):
        g, x = load_graph(args.edges, args.features, args.labels)
    _graph_manifest(manifest, args)
    with manifest.timed("propagate"):
        if args.ortho:
            if len(taus) != 1:
                raise GraphValidationException("--ortho は単一の --tau のみ対応しています", field="tau", value=taus)
            basis = build_orthogonal_basis(build_propagator(g, taus[0]), x, hops)
        else:
            basis = build_merged_basis(g, taus, x, hops, workers=args.workers)
    checksum = save_basis(basis, args.out)
    manifest.add_output("basis", args.out)
    manifest.config["basis_sha256"] = checksum

    if args.spectral:
        require_spectral_ready(g)
        for tau in taus:
            bound = mixing_bound(g, tau, args.eps)
            _emit({"tau": tau, "lambda_star": bound.lambda_star, "mixing_bound": bound.k,
                   "mixing_bound_tau_degrees": bound.k_tau_degrees, "d_min": bound.d_min, "eps": args.eps})

    write_manifest(manifest, manifest_path_for(args.out))
    _emit({"basis": str(args.out), "K": hops, "taus": taus, "sha256": checksum})
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="train", config=cfg.model_dump(), seed=args.seed)
    g, _ = load_graph(args.edges, args.features, args.labels)
    basis = load_basis(args.basis)
    manifest.add_input("basis", args.basis)
    _graph_manifest(manifest, args)
    if basis.n != g.n:
        raise GraphValidationException(f"基底のノード数 ({basis.n}) とグラフ ({g.n}) が一致しません",
                                       field="basis", value=basis.n)
    if args.splits_file:
        splits = load_splits(args.splits_file)
        manifest.add_input("splits", args.splits_file)
    else:
        splits = make_splits(g, args.seed, args.splits)
        save_splits(splits, out_dir / "splits.json")
        manifest.add_output("splits", out_dir / "splits.json")

    with manifest.timed("train"):
        summary, models, histories = run_splits(basis, g, splits, cfg)

    save_checkpoint(models[0], out_dir / "model.ckpt", cfg)
    manifest.add_output("checkpoint", out_dir / "model.ckpt")
    for index, history in enumerate(histories):
        path = out_dir / f"history_{index}.csv"
        write_history_csv(history, path)
        manifest.add_output(f"history_{index}", path)
    write_json_atomic(out_dir / "summary.json", summary.model_dump())
    manifest.add_output("summary", out_dir / "summary.json")
    write_manifest(manifest, manifest_path_for(out_dir))

    print(f"test accuracy: {100 * summary.mean:.2f} ± {100 * summary.std:.2f} over {len(summary.accuracies)} splits")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    config = get_settings().get_verify_config()
    options = _options(args, {"graphs": args.graphs, "max_n": args.max_n, "tau_grid": args.tau_grid},
                       {"graphs": config["graphs"], "max_n": config["max_n"], "tau_grid": config["tau_grid"]})
    manifest = RunManifest(command="verify", config={**options, "theorems": args.theorem}, seed=args.seed)
    with manifest.timed("suites"):
        reports = run_suites(
            theorems=args.theorem,
            graphs=int(options["graphs"]),
            max_n=int(options["max_n"]),
            tau_grid=options["tau_grid"],
            seed=args.seed,
            workers=args.workers,
        )
    for report in reports:
        _emit(report.model_dump())
    if args.out:
        write_json_atomic(Path(args.out), {"reports": [r.model_dump() for r in reports]})
        manifest.add_output("reports", args.out)
        write_manifest(manifest, manifest_path_for(args.out))
    raise_on_failure(reports)
    return EXIT_OK


def cmd_spectrum(args: argparse.Namespace) -> int:
    settings = get_settings()
    taus = args.tau or [settings.default_tau]
    g, x = load_graph(args.edges, args.features, args.labels)
    manifest = RunManifest(command="spectrum", config={"taus": taus, "hops": args.hops, "kind": args.kind})
    _graph_manifest(manifest, args)

    if args.eigen_out:
        with open(args.eigen_out, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["tau", "i", "lambda"])
            for tau in taus:
                for i, value in enumerate(eig_oracle(g, tau).eigenvalues):
                    writer.writerow([tau, i, repr(float(value))])
        manifest.add_output("eigenvalues", args.eigen_out)

    if args.response_out:
        coeffs = make_coeffs(args.kind, len(args.weights) - 1, args.jacobi_a, args.jacobi_b)
        response = frequency_response_export(None, args.weights, coeffs, args.samples, args.response_out)
        manifest.config["domain"] = response.domain
        manifest.add_output("response", args.response_out)

    if args.angles_out:
        with open(args.angles_out, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["tau", "hop", "angle"])
            for tau in taus:
                angles = basis_angles(build_krylov_basis(build_propagator(g, tau), x, args.hops))
                for hop, angle in enumerate(angles.angles, start=1):
                    writer.writerow([tau, hop, repr(angle)])
        manifest.add_output("angles", args.angles_out)

    if args.homophily_out:
        rows = homophily_frequency_profile(g, taus, args.class_a, args.class_b)
        with open(args.homophily_out, "w", encoding="utf-8", newline="") as fp:
            writer = csv.DictWriter(fp, fieldnames=["tau", "frequency"])
            writer.writeheader()
            writer.writerows(rows)
        manifest.add_output("homophily", args.homophily_out)

    if not manifest.outputs:
        raise GraphValidationException("出力が指定されていません (--eigen-out / --response-out / --angles-out / "
                                       "--homophily-out)", field="outputs")
    first = next(iter(manifest.outputs.values()))
    write_manifest(manifest, manifest_path_for(first))
    _emit(manifest.outputs)
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        n=args.n,
        num_classes=args.classes,
        homophily=args.homophily,
        mean_degree=args.degree,
        feature_dim=args.dim,
        separation=args.separation,
        noise=args.noise,
        seed=args.seed,
    )
    manifest = RunManifest(command="generate", config=spec.model_dump(), seed=args.seed)
    with manifest.timed("generate"):
        paths = write_dataset(spec, args.out_dir)
    for kind, path in paths.items():
        manifest.add_output(kind, path)
    write_manifest(manifest, manifest_path_for(Path(args.out_dir)))
    _emit(paths)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    g, x = load_graph(args.edges, args.features, args.labels)
    splits = load_splits(args.splits_file) if args.splits_file else make_splits(g, args.seed, args.splits)
    manifest = RunManifest(command="sweep", config={**cfg.model_dump(), "ortho": args.ortho}, seed=args.seed)
    _graph_manifest(manifest, args)

    with manifest.timed("sweep"):
        if args.ortho:
            tau = args.tau_grid[0] if args.tau_grid else get_settings().default_tau
            rows = hop_sweep(g, x, tau, args.hop_grid, cfg, splits, orthogonal=True)
        else:
            grid = args.tau_grid or [get_settings().default_tau]
            hops = args.hops if args.hops is not None else get_settings().default_hops
            rows = tau_sweep(g, x, hops, grid, cfg, splits)

    with open(args.out, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["tau", "K", "mean", "std"])
        for row in rows:
            writer.writerow([row.tau, row.K, repr(row.mean), repr(row.std)])
    manifest.add_output("sweep", args.out)
    write_manifest(manifest, manifest_path_for(args.out))
    for row in rows:
        print(f"tau={row.tau} K={row.K}: {100 * row.mean:.2f} ± {100 * row.std:.2f}")
    return EXIT_OK


# === パーサー ===


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptkry", description="適応 Krylov 基底による多項式グラフフィルター")
    parser.add_argument("--config", default=None, help="上書き用 JSON 設定ファイル")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prep", help="Krylov 基底を構築して保存")
    _add_graph_inputs(prep)
    prep.add_argument("--tau", type=float, action="append", default=None, help="複数指定で統合基底")
    prep.add_argument("--hops", type=int, default=None)
    prep.add_argument("--out", required=True)
    prep.add_argument("--ortho", action="store_true", help="Lanczos で直交化した基底")
    prep.add_argument("--spectral", action="store_true", help="λ* と混合時間の上界を表示")
    prep.add_argument("--eps", type=float, default=0.1)
    prep.add_argument("--workers", type=int, default=1)
    prep.set_defaults(handler=cmd_prep)

    train = sub.add_parser("train", help="基底から分類器を学習")
    train.add_argument("--basis", required=True)
    _add_graph_inputs(train)
    _add_train_flags(train)
    train.add_argument("--out-dir", default="runs/train")
    train.set_defaults(handler=cmd_train)

    verify = sub.add_parser("verify", help="理論的性質の検証スイート")
    verify.add_argument("--theorem", action="append", default=None,
                        choices=["spectrum", "convergence", "information_loss", "unification", "merge"])
    verify.add_argument("--graphs", type=int, default=None)
    verify.add_argument("--max-n", type=int, default=None)
    verify.add_argument("--tau-grid", type=_float_list, default=None)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--workers", type=int, default=1)
    verify.add_argument("--out", default=None, help="JSON レポートの出力先")
    verify.set_defaults(handler=cmd_verify)

    spectrum = sub.add_parser("spectrum", help="固有値・周波数応答・基底角度の CSV 出力")
    _add_graph_inputs(spectrum)
    spectrum.add_argument("--tau", type=float, action="append", default=None)
    spectrum.add_argument("--eigen-out", default=None)
    spectrum.add_argument("--response-out", default=None)
    spectrum.add_argument("--kind", default="gpr", choices=["monomial", "gpr", "chebyshev", "bernstein", "jacobi"])
    spectrum.add_argument("--weights", type=_float_list, default=[1.0])
    spectrum.add_argument("--jacobi-a", type=float, default=0.0)
    spectrum.add_argument("--jacobi-b", type=float, default=0.0)
    spectrum.add_argument("--samples", type=int, default=201)
    spectrum.add_argument("--angles-out", default=None)
    spectrum.add_argument("--hops", type=int, default=10)
    spectrum.add_argument("--homophily-out", default=None)
    spectrum.add_argument("--class-a", type=int, default=0)
    spectrum.add_argument("--class-b", type=int, default=1)
    spectrum.set_defaults(handler=cmd_spectrum)

    generate = sub.add_parser("generate", help="合成グラフを生成")
    generate.add_argument("--n", type=int, required=True)
    generate.add_argument("--classes", type=int, default=2)
    generate.add_argument("--homophily", type=float, required=True)
    generate.add_argument("--degree", type=float, default=10.0)
    generate.add_argument("--dim", type=int, default=16)
    generate.add_argument("--separation", type=float, default=4.0)
    generate.add_argument("--noise", type=float, default=1.0)
    generate.add_argument("--seed", type=int, required=True)
    generate.add_argument("--out-dir", required=True)
    generate.set_defaults(handler=cmd_generate)

    sweep = sub.add_parser("sweep", help="τ (または --ortho で K) を変えて精度を比較")
    _add_graph_inputs(sweep)
    _add_train_flags(sweep)
    sweep.add_argument("--tau-grid", type=_float_list, default=None)
    sweep.add_argument("--hops", type=int, default=None)
    sweep.add_argument("--ortho", action="store_true")
    sweep.add_argument("--hop-grid", type=_int_list, default=[2, 4, 6, 8, 10])
    sweep.add_argument("--out", default="sweep.csv")
    sweep.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or get_settings().log_level).upper())
    try:
        return args.handler(args)
    except Exception as e:
        report = create_error_report(e, {"command": args.command})
        print(json.dumps(report, ensure_ascii=False, default=str), file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    raise SystemExit(main())
