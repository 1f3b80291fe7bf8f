import numpy as np
import pytest

from pathhjb.model import ModelSpec


def make_spec(beta=None, sigma=None, f=None, G=None, controls=(-1.0, 1.0), d=1, m=1, L=1.0, T=1.0, **kw):
    """Spec from pointwise rules ``g(x_now (n, d), v (n, mbar))``; zeros where omitted."""

    def wrap(rule, shape):
        def coef(t, x, v, ctx):
            n = x.shape[0]
            if rule is None:
                return np.zeros((n,) + shape)
            return np.broadcast_to(np.asarray(rule(x[:, -1, :], v), dtype=float), (n,) + shape).copy()
        return coef

    def terminal(x, ctx):
        if G is None:
            return np.zeros(x.shape[0])
        return np.asarray(G(x), dtype=float)

    return ModelSpec(d=d, m=m, beta=wrap(beta, (d,)), sigma=wrap(sigma, (d, m)), f=wrap(f, ()), G=terminal,
                     control_grid=list(controls), L=L, T=T, **kw)


@pytest.fixture
def spec_factory():
    return make_spec


# criterion number -> list of (label, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        rows = ACCEPTANCE[n]
        ok = all(r[1] for r in rows)
        detail = "; ".join(f"{label}: {text}" if label else text for label, _, text in rows)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
