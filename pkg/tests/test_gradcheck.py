"""The built-in gradient suite should pass on the toy network it ships with."""

from __future__ import annotations

import pytest

from bigat.gradcheck import run_suite, results_table


@pytest.fixture(scope="module")
def results():
    return run_suite(seed=0, coordinates=2)


def test_suite_covers_layers_losses_and_every_network(results):
    names = [r.name for r in results]
    for layer in ("mlp", "lstm", "gat", "physical-attention", "grid-cnn"):
        assert f"layer:{layer}" in names
    assert "loss:trajectory-l2" in names
    for prefix in ("generator-objective:gen.", "generator-objective:enc.", "discriminator-loss:disc.local."):
        assert any(name.startswith(prefix) for name in names), prefix


def test_suite_passes(results):
    failed = [(r.name, r.report.max_relative_error) for r in results if not r.passed]
    assert not failed


def test_results_table(results):
    table = results_table(results)
    assert list(table.columns) == ["check", "max_relative_error", "tolerance", "passed"]
    assert len(table) == len(results)
    assert table["passed"].all()
