import pytest

from vgskws.synthetic import SyntheticSpec, generate_synthetic_corpus

TINY_SPEC = SyntheticSpec(n_keywords=5, n_train=24, n_dev=6, n_test=6, min_duration=2.0, max_duration=3.0)

# acceptance verdicts, echoed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    return generate_synthetic_corpus(TINY_SPEC, seed=3, out_dir=tmp_path_factory.mktemp("tiny"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
