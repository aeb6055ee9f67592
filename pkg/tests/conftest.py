import re

import numpy as np
import pytest

from chronomt.corpus import LabelSet
from chronomt.synthetic import SyntheticConfig, gen_synthetic

_ACCEPTANCE = {}
_ACCEPTANCE_TITLES = {
    "a1": "numeric correctness (gradient checks, tied embeddings)",
    "a2": "oracle equivalences (beam, bleu, rerank)",
    "a3": "analytic anchors (uniform logits, normalization invariants)",
    "a4": "synthetic end-to-end (bleu, chronology accuracy, rerank no-harm)",
    "a5": "ablation direction (+lm(m) wins; composite loss bit-equality)",
    "a6": "evaluation-report fidelity",
    "a7": "determinism (byte-identical reports)",
}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = re.search(r"test_acceptance\.py::test_(a\d)", report.nodeid)
    if m:
        _ACCEPTANCE[m.group(1)] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[key]
        word = "PASS" if outcome == "passed" else "FAIL"
        title = _ACCEPTANCE_TITLES.get(key, "")
        terminalreporter.write_line(f"{key.upper()} {word} - {title}")


@pytest.fixture(scope="session")
def label_set():
    return LabelSet()


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small synthetic world shared by tests that just need realistic data."""
    cfg = SyntheticConfig(
        vocab_size=12, len_min=3, len_max=7, n_parallel=60, n_mono_a=30, n_mono_m=30
    )
    parallel, mono_a, mono_m = gen_synthetic(cfg, 5)
    return parallel, mono_a, mono_m


@pytest.fixture
def rng():
    return np.random.default_rng(0)
