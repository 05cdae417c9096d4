import numpy as np
import pytest

from spikegate.tensor import SpikeTensor, backward, float64_mode

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")


def gradcheck(fn, arrays, h=1e-3, tol=1e-2, seed=0):
    """Compare tape gradients of ``sum(fn(*tensors) * R)`` with central differences.

    ``R`` is a fixed random projection so every output element matters.
    Returns the worst relative error |ad - fd| / (|fd| + 1e-6).
    """
    rng = np.random.default_rng(seed)
    with float64_mode():
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        leaves = [SpikeTensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(*leaves)
        proj = rng.normal(size=out.shape)

        def scalar(arrs):
            return float((fn(*[SpikeTensor(a) for a in arrs]).data * proj).sum())

        from spikegate.tensor import ops

        loss = ops.sum(ops.mul(out, SpikeTensor(proj)))
        backward(loss)
        worst = 0.0
        for i, a in enumerate(arrays):
            ad = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
            fd = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                plus = [x.copy() for x in arrays]
                minus = [x.copy() for x in arrays]
                plus[i][idx] += h
                minus[i][idx] -= h
                fd[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
            rel = np.abs(ad - fd) / (np.abs(fd) + 1e-6)
            worst = max(worst, float(rel.max()) if rel.size else 0.0)
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3g}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
