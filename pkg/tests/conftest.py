import time

import numpy as np
import pytest

from eccfm.codes import load_code
from eccfm.trainer import Trainer, desk_config

# name -> overrides of the desk config; every run shares seed and budget
DESK_RUNS = {
    "eccfm_soft": {},
    "eccfm_hard": {"condition_kind": "hard"},
    "eccfm_nosyn": {"lambda_syn": 0.0},
    "vanilla_cm": {"objective": "vanilla_cm"},
    "ddecc": {"objective": "ddecc"},
}


class DeskModels:
    """Lazily trained desk-scale models with their per-epoch logs and wall times."""

    def __init__(self):
        self.code = load_code("hamming74")
        self._cache = {}

    def get(self, name: str):
        if name not in self._cache:
            tr = Trainer(self.code, desk_config(self.code, seed=0, **DESK_RUNS[name]))
            log = []
            spe = tr.cfg.steps_per_epoch

            def on_epoch(st):
                recent = list(st.history)[-spe:]
                log.append({"step": st.global_step,
                            "loss": float(np.mean([h["loss"] for h in recent])),
                            "consistency": float(np.mean([h["consistency"] for h in recent]))})

            t0 = time.perf_counter()
            tr.run(on_epoch)
            self._cache[name] = (tr, log, time.perf_counter() - t0)
        return self._cache[name]


@pytest.fixture(scope="session")
def desk():
    return DeskModels()


@pytest.fixture(scope="session")
def hamming():
    return load_code("hamming74")


@pytest.fixture(scope="session")
def rep2():
    return load_code("rep2")


# --- acceptance reporting ------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    outcome = "PASS" if call.excinfo is None else "FAIL"
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE[number] = (title, outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[number]
        line = f"[{outcome}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
