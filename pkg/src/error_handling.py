# src/error_handling.py - エラーハンドリング実装

"""
AdaptKry エラーハンドリング
例外階層と CLI 終了コードの対応付け
"""

import logging
import traceback
import uuid
from typing import Dict, Any, Optional
from datetime import datetime

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4
EXIT_THEOREM = 5


class AdaptKryException(Exception):
    """AdaptKry 基底例外"""
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, error_code: str = "GENERAL_ERROR", details: Optional[Dict] = None):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        self.timestamp = datetime.now()
        super().__init__(message)


class DataSourceException(AdaptKryException):
    """ファイル入出力関連例外"""
    exit_code = EXIT_IO

    def __init__(self, message: str, source_type: str = "unknown", path: str = ""):
        super().__init__(
            message=message,
            error_code="DATA_SOURCE_ERROR",
            details={"source_type": source_type, "path": path}
        )


class GraphValidationException(AdaptKryException):
    """入力・グラフ検証関連例外"""
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, field: str = "", value: Any = None):
        super().__init__(
            message=message,
            error_code="VALIDATION_ERROR",
            details={"field": field, "value": value}
        )


class BudgetExceededException(AdaptKryException):
    """密行列オラクルの規模上限超過"""
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, n: int = 0, limit: int = 0):
        super().__init__(
            message=message,
            error_code="BUDGET_EXCEEDED",
            details={"n": n, "limit": limit}
        )


class NumericalException(AdaptKryException):
    """数値計算関連例外 (NaN 損失、λ* ≥ 1 など)"""
    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, operation: str = "", value: Any = None):
        super().__init__(
            message=message,
            error_code="NUMERIC_ERROR",
            details={"operation": operation, "value": value}
        )


class TheoremViolationException(AdaptKryException):
    """定理検証スイートの違反"""
    exit_code = EXIT_THEOREM

    def __init__(self, message: str, theorem: str = "", violations: Optional[list] = None):
        super().__init__(
            message=message,
            error_code="THEOREM_VIOLATION",
            details={"theorem": theorem, "violations": violations or []}
        )


def exit_code_for(error: Exception) -> int:
    """例外から CLI 終了コードを決定する"""
    if isinstance(error, AdaptKryException):
        return error.exit_code
    if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return EXIT_IO
    if isinstance(error, (ValueError, TypeError)):
        return EXIT_VALIDATION
    if isinstance(error, (FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_VALIDATION


def log_error_with_context(
    error: Exception,
    context: Dict[str, Any] = None,
    user_friendly_message: str = None
) -> str:
    """
    エラーを詳細ログに記録し、ユーザー向けメッセージを返す
    """
    error_id = f"ERR_{uuid.uuid4().hex[:8]}"

    log_data = {
        "error_id": error_id,
        "error_type": type(error).__name__,
        "error_message": str(error),
        "context": context or {},
        "traceback": traceback.format_exc()
    }

    LOGGER.error(f"🚨 エラー発生 [ID: {error_id}]: {error}")
    LOGGER.debug(f"詳細情報: {log_data}")

    if user_friendly_message:
        return user_friendly_message
    elif isinstance(error, AdaptKryException):
        return error.message
    else:
        return f"予期しないエラーが発生しました: {error}"


def create_error_report(
    error: Exception,
    context: Dict[str, Any] = None
) -> Dict[str, Any]:
    """
    CLI の JSON 出力用エラー辞書を作成
    """
    user_message = log_error_with_context(error, context)

    report = {
        "error": user_message,
        "error_type": type(error).__name__,
        "exit_code": exit_code_for(error),
        "timestamp": datetime.now().isoformat(),
    }
    if isinstance(error, AdaptKryException):
        report["error_code"] = error.error_code
        report["details"] = error.details
    return report
