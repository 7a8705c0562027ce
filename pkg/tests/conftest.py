import numpy as np
import pytest

from stgrounding.model import GroundingModel, ModelConfig


def micro_config(**kw) -> ModelConfig:
    """Micro model used by gradient and invariance checks (T=4 videos of 8x8 px, P=4 -> HW=4)."""
    base = dict(d=8, heads=2, ffn_dim=16, dropout=0.0, enc_layers=1, dec_layers=2, k=2,
                patch=4, vocab_size=10, max_text_len=6, temporal_head_dropout=0.0, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def micro_inputs(rng, B=1, T=4, L=3, px=8, vocab=10):
    frames = rng.random((B, T, 3, px, px))
    ids = rng.integers(2, vocab, size=(B, L))
    return frames, ids


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_model():
    return GroundingModel(micro_config()).eval()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance line; all of them are printed in the run summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
