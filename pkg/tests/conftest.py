import numpy as np
import pytest
import torch


def fd_grad(fn, params, h=1e-4):
    """Central finite differences of scalar ``fn()`` w.r.t. each tensor in ``params``."""
    out = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                fp = float(fn())
                flat[i] = old - h
                fm = float(fn())
                flat[i] = old
                gflat[i] = (fp - fm) / (2 * h)
            out.append(g)
    return out


def rel_error(a, b):
    a = torch.cat([t.reshape(-1) for t in a])
    b = torch.cat([t.reshape(-1) for t in b])
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_CRITERIA = {}


def report(n, ok, detail):
    """Record one acceptance verdict; printed in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    _CRITERIA[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
