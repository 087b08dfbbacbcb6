import json
import os
from pathlib import Path

import pytest

from incidentlab import synth

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(status: str, name: str, detail: str = "") -> None:
    line = f"{status:<4} {name}" + (f" :: {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def real_data_dir() -> Path | None:
    root = os.environ.get("INCIDENTLAB_DATA_DIR")
    if not root:
        return None
    p = Path(root)
    if (p / "incidents.csv").is_file() and (p / "zones.csv").is_file():
        return p
    return None


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """A 1,500-row synthetic dataset written to CSV once per session."""
    d = tmp_path_factory.mktemp("synth")
    records, zones = synth.generate(synth.SynthConfig(n_rows=1500, seed=3, n_zones=60))
    synth.write_incidents(records, d / "incidents.csv")
    synth.write_zones(zones, d / "zones.csv")
    return d


def write_config(directory: Path, **overrides) -> Path:
    cfg = {
        "paths": {"incidents": "incidents.csv", "zones": "zones.csv", "output_dir": "out"},
        "seed": 5,
        "hyperparameters": {"n_rounds": 15, "max_depth": 3},
        "shap_sample_size": 60,
    }
    cfg.update(overrides)
    path = directory / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path
