from importlib import resources
from pathlib import Path

import pytest

from beatsynth.config import load_config
from beatsynth.pipeline import run_pipeline

ACCEPTANCE_LINES: list[str] = []


def toy_config_path() -> Path:
    return Path(str(resources.files("beatsynth") / "fixtures" / "toy_config.json"))


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """Run the bundled toy config once per output name and reuse the directory across tests."""
    done: dict[str, Path] = {}

    def get(name: str = "a") -> Path:
        if name not in done:
            out = tmp_path_factory.mktemp(f"run_{name}")
            cfg_path = toy_config_path()
            run_pipeline(load_config(cfg_path), out, cfg_path.parent)
            done[name] = out
        return done[name]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
