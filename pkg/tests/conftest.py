import numpy as np
import pytest

from toat.config import Dims, TrainingConfig
from toat.data import synth_generate

TINY_DIMS = Dims(
    d_model=8,
    text_layers=1,
    text_heads=2,
    frame_dim=8,
    d_audio=8,
    audio_layers=1,
    audio_heads=2,
    pos_kernel=3,
)


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def tiny_config():
    return TrainingConfig(dims=TINY_DIMS, epochs=2, dropout=0.0)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_generate(dict(n_samples=24, n_topics=4, signal_topic_index=2, missing_rate=0.2, class_ratio=0.5, seed=3))


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
