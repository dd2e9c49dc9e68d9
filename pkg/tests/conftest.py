import numpy as np
import pytest

from cltrsim.letor import DatasetSplit, make_toy_dataset, normalize_features


@pytest.fixture(scope="session")
def toy() -> DatasetSplit:
    raw = make_toy_dataset(seed=0)
    train, scaler = normalize_features(raw.train)
    return DatasetSplit(train, scaler.transform(raw.valid), scaler.transform(raw.test), raw.feature_dim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool | None, detail: str = "") -> None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"[{status}] {number}. {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
