"""
pytest 共通設定
受け入れ規模の遅いテストは --runslow を付けたときだけ実行する。
"""

import pytest

collect_ignore = ["examples"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="受け入れ規模の遅いテストも実行する")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 受け入れ規模の遅いテスト（--runslow で実行）")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="--runslow を指定したときのみ実行")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
