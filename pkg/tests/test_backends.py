"""The compiled and pure-Python kernels must agree bit for bit."""

import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binom

from neurofield._engine_py import PyEngine
from neurofield._layout import REFRACTORY, binomial_pmf, build_layout
from neurofield.model import GridSpec, preset
from neurofield.rng import init_generator, kernel_state
from neurofield.simulator import available_backends, default_backend

compiled = pytest.importorskip("neurofield._engine")


def _engines(cfg, seed):
    lay = build_layout(cfg)
    rng = init_generator(seed)
    v = rng.integers(-20, 100, lay.n_neurons)
    v[rng.random(lay.n_neurons) < 0.1] = REFRACTORY
    st = kernel_state(seed)
    return PyEngine(lay, v, st), compiled.Engine(lay, v, st)


def _assert_same(a, b):
    ta, ga = a.spikes()
    tb, gb = b.spikes()
    assert np.array_equal(ta, tb)
    assert np.array_equal(ga, gb)
    A, B = a.arrays(), b.arrays()
    for k in A:
        assert np.array_equal(A[k], B[k]), k
    for s in range(4):
        assert np.array_equal(a.bag(s), b.bag(s))
    for q in range(2):
        assert np.array_equal(a.refractory_list(q), b.refractory_list(q))
    assert a.clock == b.clock
    assert a.rng_state() == b.rng_state()


@pytest.mark.parametrize("name,grid,t_end,seed,chunks,self_kick", [
    ("REG2", (1, 2), 30.0, 1, 1, True),
    ("SYN", (2, 2), 15.0, 2, 3, False),
    ("HOM", (1, 1), 40.0, 3, 7, True),
])
def test_parity(name, grid, t_end, seed, chunks, self_kick):
    cfg = replace(preset(name, 6000, GridSpec(*grid)), allow_self_kick=self_kick)
    a, b = _engines(cfg, seed)
    for t in np.linspace(0, t_end, chunks + 1)[1:]:
        a.advance(t)
        b.advance(t)
    assert a.spikes()[0].size > 0
    _assert_same(a, b)


def test_step_parity():
    cfg = preset("REG1", 6000, GridSpec(1, 2))
    a, b = _engines(cfg, 9)
    for _ in range(20_000):
        assert a.step(50.0) == b.step(50.0)
    _assert_same(a, b)


def test_chunked_advance_matches_single():
    cfg = preset("REG2", 6000, GridSpec(2, 2))
    _, one = _engines(cfg, 4)
    _, many = _engines(cfg, 4)
    one.advance(60.0)
    for t in np.arange(1.0, 60.0 + 1e-9, 1.0):
        many.advance(float(t))
    _assert_same(one, many)


@pytest.mark.parametrize("n, p", [(300, 0.15), (99, 0.5), (100, 1 - 1e-6), (1, 0.3)])
def test_binomial_pmf_matches_scipy(n, p):
    np.testing.assert_allclose(binomial_pmf(n, p), binom.pmf(np.arange(n + 1), n, p), rtol=1e-9, atol=1e-15)


def test_binomial_pmf_subnormal_p():
    pmf = binomial_pmf(2, 1.1e-308)
    assert np.all(np.isfinite(pmf)) and pmf[0] == 1.0


def test_backend_selection_env():
    assert default_backend() in available_backends()
    assert "cython" in available_backends() and "python" in available_backends()
    env = dict(os.environ, NEUROFIELD_BACKEND="python")
    out = subprocess.run([sys.executable, "-c",
                          "from neurofield.simulator import default_backend; print(default_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
