# src/config.py - 設定管理

"""
AdaptKry グラフフィルターの設定管理
環境変数 / .env / --config JSON の順で上書きされる
"""

import os
import json
import logging
from pathlib import Path
from typing import Optional, List, Dict, Any
from pydantic import Field
from pydantic_settings import BaseSettings

from .error_handling import DataSourceException, GraphValidationException

LOGGER = logging.getLogger(__name__)


class Settings(BaseSettings):
    """環境変数から読み込まれるアプリケーション設定"""

    # アプリケーション基本設定
    app_name: str = Field(default="AdaptKry Graph Filters", alias="APP_NAME")
    app_version: str = Field(default="1.0.0", alias="APP_VERSION")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")

    # 伝播設定
    default_hops: int = Field(default=10, alias="DEFAULT_HOPS")
    default_tau: float = Field(default=0.9, alias="DEFAULT_TAU")
    tau_divergence_warning: float = Field(default=1.0, alias="TAU_DIVERGENCE_WARNING")

    # 学習設定
    learning_rate: float = Field(default=0.01, alias="LEARNING_RATE")
    weight_decay: float = Field(default=5e-4, alias="WEIGHT_DECAY")
    hidden_dim: int = Field(default=64, alias="HIDDEN_DIM")
    dropout: float = Field(default=0.5, alias="DROPOUT")
    max_epochs: int = Field(default=1000, alias="MAX_EPOCHS")
    patience: int = Field(default=200, alias="PATIENCE")
    adam_beta1: float = Field(default=0.9, alias="ADAM_BETA1")
    adam_beta2: float = Field(default=0.999, alias="ADAM_BETA2")
    adam_eps: float = Field(default=1e-8, alias="ADAM_EPS")
    per_column_w: bool = Field(default=False, alias="PER_COLUMN_W")
    log_every: int = Field(default=50, alias="LOG_EVERY")

    # 数値許容誤差
    grade_tolerance: float = Field(default=1e-10, alias="GRADE_TOLERANCE")
    breakdown_tolerance: float = Field(default=1e-12, alias="BREAKDOWN_TOLERANCE")
    spectral_tolerance: float = Field(default=1e-8, alias="SPECTRAL_TOLERANCE")
    oracle_max_nodes: int = Field(default=2000, alias="ORACLE_MAX_NODES")

    # 検証スイート設定
    verify_graphs: int = Field(default=50, alias="VERIFY_GRAPHS")
    verify_max_n: int = Field(default=50, alias="VERIFY_MAX_N")
    verify_tau_grid: List[float] = Field(
        default=[0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
        alias="VERIFY_TAU_GRID"
    )

    # 合成データ設定
    max_resamples: int = Field(default=20, alias="MAX_RESAMPLES")

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False
        extra = "ignore"

    def get_train_config(self) -> Dict[str, Any]:
        """学習設定を取得"""
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.max_epochs,
            "patience": self.patience,
            "hidden": self.hidden_dim,
            "dropout": self.dropout,
            "per_column_w": self.per_column_w,
        }

    def get_optimizer_config(self) -> Dict[str, float]:
        """Adam のハイパーパラメータを取得"""
        return {
            "beta1": self.adam_beta1,
            "beta2": self.adam_beta2,
            "eps": self.adam_eps,
        }

    def get_verify_config(self) -> Dict[str, Any]:
        """検証スイートの設定を取得"""
        return {
            "graphs": self.verify_graphs,
            "max_n": self.verify_max_n,
            "tau_grid": list(self.verify_tau_grid),
            "tolerance": self.spectral_tolerance,
        }

    def validate_configuration(self) -> Dict[str, bool]:
        """設定の妥当性をチェック"""
        validation_results = {
            "hops_valid": self.default_hops >= 0,
            "tau_valid": self.default_tau > 0.0,
            "learning_rate_valid": self.learning_rate > 0.0,
            "epochs_valid": self.max_epochs >= 1,
            "dropout_valid": 0.0 <= self.dropout < 1.0,
            "tolerances_valid": (
                0.0 < self.breakdown_tolerance <= self.grade_tolerance
                and self.spectral_tolerance > 0.0
            ),
            "tau_grid_valid": all(t > 0.0 for t in self.verify_tau_grid),
        }

        validation_results["fully_operational"] = all(validation_results.values())

        return validation_results


# グローバル設定インスタンス
settings = Settings()


def get_settings() -> Settings:
    """アプリケーション設定を取得"""
    return settings


def load_override_file(path: Optional[str]) -> Dict[str, Any]:
    """--config で指定された JSON 上書きファイルを読み込む"""
    if not path:
        return {}

    config_path = Path(path)
    if not config_path.exists():
        raise DataSourceException(f"設定ファイルが見つかりません: {path}", source_type="config")

    try:
        with open(config_path, "r", encoding="utf-8") as fp:
            data = json.load(fp)
    except json.JSONDecodeError as e:
        raise GraphValidationException(
            f"設定ファイルの JSON 解析エラー: {e}",
            field="config"
        ) from e

    if not isinstance(data, dict):
        raise GraphValidationException("設定ファイルは JSON オブジェクトである必要があります", field="config")

    LOGGER.info(f"✅ 設定ファイル読み込み: {path} ({len(data)} 項目)")
    return data


def merge_options(
    cli_options: Dict[str, Any],
    file_options: Dict[str, Any],
    defaults: Dict[str, Any]
) -> Dict[str, Any]:
    """優先順位 CLI > ファイル > デフォルト で設定を統合する

    CLI 側の値が None のものは未指定とみなす。
    """
    merged = dict(defaults)
    for key, value in file_options.items():
        merged[key] = value
    for key, value in cli_options.items():
        if value is not None:
            merged[key] = value
    return merged


def debug_settings():
    """設定値デバッグ"""
    print("=== 設定値デバッグ ===")
    print(f"current directory: {os.getcwd()}")

    print("\n【基本設定】")
    print(f"app_name: {settings.app_name}")
    print(f"app_version: {settings.app_version}")
    print(f"log_level: {settings.log_level}")

    print("\n【伝播設定】")
    print(f"default_hops: {settings.default_hops}")
    print(f"default_tau: {settings.default_tau}")

    print("\n【学習設定】")
    for key, value in settings.get_train_config().items():
        print(f"{key}: {value}")

    print("\n【設定検証結果】")
    for key, value in settings.validate_configuration().items():
        status = "✅" if value else "❌"
        print(f"  {status} {key}: {value}")


if __name__ == "__main__":
    debug_settings()
