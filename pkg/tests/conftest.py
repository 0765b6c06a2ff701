import os

import pytest
from hypothesis import settings

from spatialq.corpus import CorpusSpec, build_corpus

settings.register_profile("default", deadline=None, max_examples=50)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one recipe, both scenes, three variants: 6 contents, 2 train / 2 val / 2 test
SMALL_SPEC = CorpusSpec(recipes=("speech",), duration=0.3, n_heads=2, seed=7)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_corpus")
    return build_corpus(SMALL_SPEC, out)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
