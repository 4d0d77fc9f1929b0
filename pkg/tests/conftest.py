import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jointser.data import SynthConfig, synth_generate  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

_criteria = []
_setup_secs = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "setup":
        _setup_secs[item.nodeid] = rep.duration
    # shared fixtures do their work at setup, so report setup + call time
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        secs = rep.duration + (_setup_secs.get(item.nodeid, 0.0) if rep.when == "call" else 0.0)
        _criteria.append((marker.args[0], rep.passed, secs))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, secs in _criteria:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f}s)")


@pytest.fixture(scope="session")
def tiny_corpus():
    """Five utterances per class (one per session), short sequences."""
    cfg = SynthConfig(n_per_class=5, d_mfcc=6, d_hidden=5, d_text=4, vocab_size=4,
                      length_range={e: (2, 4) for e in ("ang", "hap", "neu", "sad")})
    return synth_generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
