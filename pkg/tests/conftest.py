from __future__ import annotations

import pytest

from xdrive.catalog import CATALOG_NAMES, get_scenario
from xdrive.harness import RunConfig, run_episode

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def episode_cache(tmp_path_factory):
    """Run (scenario, policy) episodes once per session."""
    root = tmp_path_factory.mktemp("episodes")
    cache = {}

    def get(scenario: str, policy: str = "oracle"):
        key = (scenario, policy)
        if key not in cache:
            cache[key] = run_episode(RunConfig(scenario, policy, out_dir=str(root / policy)))
        return cache[key]

    return get


@pytest.fixture
def catalog_names():
    return CATALOG_NAMES


@pytest.fixture
def spec_of():
    return get_scenario
