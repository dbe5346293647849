import numpy as np
import pytest

from kgaction.lexicon import EmbeddingTable, normalize_phrase, parse_action_phrase
from kgaction.synthetic import write_toy_dataset

# filled by test_acceptance; repeated in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    write_toy_dataset(d)
    return d


def stub_embeddings(manifest, dim=6, seed=0, with_parts=True):
    """Random vectors for every phrase a manifest's graphs look up."""
    rng = np.random.default_rng(seed)
    keys = [manifest.embedding_key(c) for c in manifest.dataset_classes] + list(manifest.auxiliary_classes)
    if with_parts:
        for k in list(keys):
            p = parse_action_phrase(k)
            keys += [p.verb, p.noun]
    entries = {}
    for k in keys:
        nk = normalize_phrase(k)
        if nk not in entries:
            entries[nk] = rng.normal(size=dim)
    return EmbeddingTable(dim, entries)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        terminalreporter.write_line(ACCEPTANCE_LINES.get(number, f"acceptance {number:>2} NOT RUN"))
