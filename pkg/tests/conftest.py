import contextlib

import numpy as np
import pytest

from rcgan_lab import gan_training, nn_core, scoring_eval

FD_STEP = 1e-5
REL_FLOOR = 1e-6


@contextlib.contextmanager
def record_kinks():
    """Record the sign pattern of every leaky-relu pre-activation computed."""
    signs = []
    real_forward = nn_core.forward

    def spy(net, batch):
        trace = real_forward(net, batch)
        for layer, a in zip(net.layers, trace.pre):
            if layer.activation == "leaky_relu":
                signs.append(a > 0)
        return trace

    targets = (nn_core, gan_training, scoring_eval)
    saved = [m.forward for m in targets]
    for m in targets:
        m.forward = spy
    try:
        yield signs
    finally:
        for m, f in zip(targets, saved):
            m.forward = f


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(loss_fn, params, analytic, h=FD_STEP):
    """Largest relative error between ``analytic`` and central differences.

    ``loss_fn()`` reads the arrays in ``params`` (mutated in place). Entries
    whose +/-h perturbation flips a leaky-relu sign straddle a kink, where
    the derivative does not exist; they are skipped and counted.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    with record_kinks() as base:
        loss_fn()
    base = list(base)
    worst, skipped = 0.0, 0
    for p, g in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            with record_kinks() as up:
                f_up = loss_fn()
            p[idx] = old - h
            with record_kinks() as down:
                f_down = loss_fn()
            p[idx] = old
            if not (_same(base, up) and _same(base, down)):
                skipped += 1
                continue
            num = (f_up - f_down) / (2 * h)
            err = abs(num - g[idx]) / max(abs(num), abs(g[idx]), REL_FLOOR)
            worst = max(worst, err)
    return worst, skipped


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def acceptance_line(number: int, ok: bool, detail: str) -> str:
    """Record and print the one-line verdict for an acceptance criterion."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
