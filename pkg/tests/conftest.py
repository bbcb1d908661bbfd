import numpy as np
import pytest

from skyfuse.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_cfg():
    """A model small enough for finite-difference checks."""
    return ModelConfig(feature_dim=4, target_seq_len=6, d_model=8, num_heads=2, num_layers=1,
                       dim_feedforward=16, dropout=0.0, num_classes=3, head_hidden=8)


@pytest.fixture(scope="session")
def synthetic_splits():
    """Preprocessed (train, val, test) from a small synthetic dataset."""
    from skyfuse.pipeline import SplitSpec, run_pipeline, synth_dataset

    res = run_pipeline(synth_dataset(per_class=4, seed=0), target=20, split=SplitSpec(seed=0))
    return res.splits


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" | {detail}" if detail else "")
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
