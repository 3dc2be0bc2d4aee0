import numpy as np
import pytest
import torch


def fd_grad(fn, x, h=1e-4):
    """Central finite-difference gradient of scalar ``fn`` at float64 tensor ``x``."""
    x = x.detach().clone().double()
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def analytic_grad(fn, x):
    x = x.detach().clone().double().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach()


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def assert_grad_matches(fn, x, tol=1e-3, h=1e-4, floor=1e-6):
    ga = analytic_grad(fn, x)
    gn = fd_grad(lambda t: fn(t).detach(), x, h)
    err = rel_err(ga, gn, floor)
    assert err < tol, f"gradient rel. error {err:.3e} >= {tol}"
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
