"""
設定サービス
実験・生成のデフォルト値を config/settings.json で管理する。
.env と環境変数（SCENREP_*）で上書きできる。
"""

import json
import os
from pathlib import Path

from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).resolve().parent.parent

# プロジェクトルートの .env を確実に読み込む
load_dotenv(PROJECT_ROOT / ".env")

DEFAULT_SETTINGS_PATH = PROJECT_ROOT / "config" / "settings.json"

# 実験のデフォルト（N_w と repeats は卓上規模に縮小）
DEFAULT_SETTINGS = {
    "n_t": 50,
    "p": 1.0,
    "beta": 0.25,
    "repeats": 50,
    "test_fraction": 0.2,
    "n_w": 2000,
    "seed": 0,
    "d": 4,
    "method": "svd+kde+dep",
    "d_range": [1, 2, 3, 4, 5, 6, 7, 8],
    "beta_grid": [round(0.05 * i, 2) for i in range(21)],
    "n_large": 10000,
    "bootstrap_b": 1000,
    "interpolation": "cubic_spline",
    "zero_variance_floor": False,
    "svd_solver": "full",
    "threads": None,
    "max_iterations": 10,
}


def get_settings_path() -> Path:
    """設定ファイルのパスを返す。SCENREP_SETTINGS_PATH があればそれを使用。"""
    env_path = os.environ.get("SCENREP_SETTINGS_PATH")
    if env_path:
        return Path(env_path).resolve()
    return DEFAULT_SETTINGS_PATH


def _load_raw() -> dict:
    """生のJSONを読み込む。読めない場合は空の辞書。"""
    path = get_settings_path()
    if path.exists():
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if isinstance(data, dict):
                return data
        except (json.JSONDecodeError, IOError):
            pass
    return {}


def _save_raw(data: dict) -> None:
    """生のJSONを保存する。"""
    path = get_settings_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2)


def get_settings() -> dict:
    """デフォルトに設定ファイルの値を重ねた設定を返す。"""
    return {**DEFAULT_SETTINGS, **_load_raw()}


def get_setting(key: str):
    """設定値を1件取得する。未知のキーは KeyError。"""
    settings = get_settings()
    if key not in settings:
        raise KeyError(f"未知の設定キー: {key}")
    return settings[key]


def save_settings(updates: dict) -> None:
    """
    設定を部分的に更新して保存する。

    Args:
        updates: 上書きするキーと値（未知のキーは ValueError）
    """
    unknown = set(updates) - set(DEFAULT_SETTINGS)
    if unknown:
        raise ValueError(f"未知の設定キー: {sorted(unknown)}")
    data = _load_raw()
    data.update(updates)
    _save_raw(data)


def get_thread_limit() -> int:
    """
    並列実行のスレッド上限を返す。
    SCENREP_THREADS を優先し、未設定時は設定ファイル、最後にCPU数にフォールバック。
    """
    env_value = os.environ.get("SCENREP_THREADS")
    if env_value:
        try:
            value = int(env_value)
        except ValueError:
            raise ValueError(f"SCENREP_THREADS が整数ではありません: {env_value}")
        if value < 1:
            raise ValueError(f"SCENREP_THREADS は1以上が必要です: {value}")
        return value
    configured = get_settings().get("threads")
    if configured:
        return max(1, int(configured))
    return os.cpu_count() or 1


def get_log_level() -> str:
    """ログレベル名を返す（SCENREP_LOG_LEVEL、デフォルト WARNING）。"""
    return os.environ.get("SCENREP_LOG_LEVEL", "WARNING").upper()
