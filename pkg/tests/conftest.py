from pathlib import Path

import pytest

from motionpref import config, toy2d
from motionpref.models import Denoiser, init_params

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.json"


@pytest.fixture(scope="session")
def desk_cfg():
    return config.load(DESK)


@pytest.fixture(scope="session")
def toy_base():
    cfg = toy2d.mlp_config()
    model = Denoiser(cfg, init_params(cfg, 0))
    curve = toy2d.train_flow(model, 3000, seed=0)
    return model, curve



def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])
