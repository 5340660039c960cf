# src/run_manifest.py - 実行記録

"""
各サブコマンドの実行内容 (設定・入力チェックサム・出力・所要時間・seed) を JSON で残す
"""

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

from pydantic import BaseModel, Field

from .config import get_settings
from .error_handling import DataSourceException

LOGGER = logging.getLogger(__name__)


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    input_checksums: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    app_version: str = Field(default_factory=lambda: get_settings().app_version)

    def add_input(self, name: str, path: Union[str, Path]) -> None:
        self.input_checksums[name] = file_checksum(path, source_type=name)

    def add_output(self, name: str, path: Union[str, Path]) -> None:
        self.outputs[name] = str(path)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = round(time.perf_counter() - start, 6)


def file_checksum(path: Union[str, Path], source_type: str = "input") -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fp:
            for chunk in iter(lambda: fp.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as e:
        raise DataSourceException(f"チェックサムを計算できません: {path} ({e})", source_type=source_type,
                                  path=str(path)) from e
    return digest.hexdigest()


def write_json_atomic(path: Union[str, Path], payload: Dict[str, Any]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n",
                   encoding="utf-8")
    tmp.replace(target)


def write_manifest(manifest: RunManifest, path: Union[str, Path]) -> Path:
    target = Path(path)
    write_json_atomic(target, manifest.model_dump())
    LOGGER.info(f"💾 実行記録: {target}")
    return target


def manifest_path_for(output: Union[str, Path]) -> Path:
    """出力ファイル b.bin に対して b.bin.manifest.json、ディレクトリならその直下"""
    out = Path(output)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")
