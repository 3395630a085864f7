import numpy as np
import pytest

from privmotion import tensor as tc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grads(loss_fn, store: tc.ParamStore, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of ``loss_fn(store) -> float`` for every parameter entry."""
    out = {}
    for name, value in store.values.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            up = loss_fn(store)
            value[idx] = orig - h
            down = loss_fn(store)
            value[idx] = orig
            grad[idx] = (up - down) / (2 * h)
        out[name] = grad
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-relative discrepancy between two gradient tensors."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# criterion number -> (title, passed, detail); printed after the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        passed = passed and prev[1]
        detail = "; ".join(d for d in (prev[2], detail) if d)
    ACCEPTANCE[number] = (title, passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
