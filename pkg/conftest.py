from __future__ import annotations

import pytest
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from _pytest.config import Parser


def pytest_addoption(parser: "Parser") -> None:
    """Add custom command line options to pytest."""

    group = parser.getgroup("bigat")
    group.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run slow tests that train models to convergence",
    )
    group.addoption(
        "--only-slow",
        action="store_true",
        default=False,
        help="run only the slow training tests",
    )


def pytest_configure(config: pytest.Config) -> None:
    """Register custom markers."""
    config.addinivalue_line(
        "markers",
        "slow: mark test as a slow training run (minutes, not seconds)",
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--only-slow"):
        # only slow tests -> skip everything else
        skip_marker = pytest.mark.skip(reason="only running slow tests; skipping fast ones")
        for item in items:
            if "slow" not in item.keywords:
                item.add_marker(skip_marker)
        return

    if config.getoption("--run-slow"):
        return

    skip_marker = pytest.mark.skip(reason="slow tests are skipped by default; use --run-slow to run them")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_marker)
