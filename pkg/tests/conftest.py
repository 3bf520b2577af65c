import numpy as np
import pytest

from zmprune.dataset import load_corpus, split, write_synthetic_corpus
from zmprune.features import extract_table
from zmprune.index import build_index_from_table
from zmprune.zernike import DEFAULT_INDICES


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """10 categories x 20 images, 32x32 PNGs, folder layout."""
    return write_synthetic_corpus(tmp_path_factory.mktemp("synth") / "corpus", 10, 20, size=32, seed=7)


@pytest.fixture(scope="session")
def synthetic(synthetic_root):
    corpus = load_corpus(synthetic_root)
    sp = split(corpus, seed=3)
    table = extract_table(corpus, corpus.image_ids, DEFAULT_INDICES)
    index = build_index_from_table(table.subset(sp.train_ids), sp.seed)
    return corpus, sp, table, index


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or rep.outcome != "passed":
        key = marker.args[0]
        title = marker.args[1]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        prev = _CRITERIA.get(key, (title, "SKIP"))[1]
        # several tests may share a criterion: any failure wins, then any pass
        _CRITERIA[key] = (title, max(prev, status, key=("SKIP", "PASS", "FAIL").index))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA):
        title, status = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {status:4}  {title}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
