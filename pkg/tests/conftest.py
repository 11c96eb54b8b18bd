import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from poisonlab.codec import Codec, build_corpus, pretrain  # noqa: E402
from poisonlab.gridworld import GridSpec  # noqa: E402

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def spec():
    return GridSpec()


@pytest.fixture(scope="session")
def small_codec(spec, tmp_path_factory):
    """A briefly trained codec, enough for plumbing tests."""
    rng = np.random.default_rng(5)
    corpus = build_corpus(spec, rng, n_victim=200, n_random=50)
    codec, _ = pretrain(Codec.create(spec, rng), corpus, epochs=2, rng=rng)
    out = tmp_path_factory.mktemp("small_codec")
    codec.save(out)
    return codec, out


@pytest.fixture(scope="session")
def pretrained_codec(tmp_path_factory):
    """The codec produced by the default pretraining protocol."""
    from poisonlab.harness.config import ExperimentConfig
    from poisonlab.harness.runner import pretrain_codec

    out = tmp_path_factory.mktemp("codec")
    t0 = time.monotonic()
    codec = pretrain_codec(ExperimentConfig(), out)
    (out / "pretrain_seconds.txt").write_text(f"{time.monotonic() - t0}\n")
    return codec, out


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (name, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {name}")
