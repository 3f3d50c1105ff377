import numpy as np
import pytest

from dmfevo.hemodynamics import HemoConstants, bold_transform


def test_rest_input_gives_zero_bold():
    neural = np.zeros((6000, 3))
    bold = bold_transform(neural, 10.0, 720.0)
    assert np.max(np.abs(bold)) < 1e-12


def test_constant_input_settles():
    neural = np.full((6000, 2), 0.3)  # 60 s at 10 ms
    bold = bold_transform(neural, 10.0, 720.0)
    tail = bold[int(0.9 * len(bold)):]
    assert np.max(np.abs(np.diff(tail, axis=0))) < 1e-6


def test_output_sample_count():
    neural = np.zeros((6000, 2))  # 60 s at 10 ms
    assert bold_transform(neural, 10.0, 720.0).shape == (83, 2)


@pytest.mark.parametrize("steps,dt_n,tr,expected", [
    (6000, 10.0, 720.0, 83),
    (1000, 1.0, 100.0, 10),
    (999, 1.0, 100.0, 9),
    (500, 2.0, 333.0, 3),
    (100, 10.0, 10.0, 100),
])
def test_output_length_rule(steps, dt_n, tr, expected):
    neural = np.zeros((steps, 1))
    assert bold_transform(neural, dt_n, tr).shape[0] == expected


def test_bold_linear_in_v0():
    rng = np.random.default_rng(1)
    neural = 0.2 + 0.05 * rng.standard_normal((3000, 4))
    b1 = bold_transform(neural, 10.0, 720.0, HemoConstants())
    b2 = bold_transform(neural, 10.0, 720.0, HemoConstants(V0=0.04))
    assert np.allclose(b2, 2.0 * b1, rtol=1e-12, atol=0.0)


def test_rejects_bad_grid():
    with pytest.raises(ValueError):
        bold_transform(np.zeros((100, 2)), 10.0, 5.0)
    with pytest.raises(ValueError):
        bold_transform(np.zeros((0, 2)), 10.0, 720.0)


def test_derivative_form_against_reference_euler():
    # independent straight-line Euler implementation as the oracle
    rng = np.random.default_rng(2)
    neural = 0.1 + 0.02 * rng.standard_normal((400, 2))
    dt_n, tr = 10.0, 100.0
    c = HemoConstants()
    s = np.zeros(2)
    f = np.ones(2)
    v = np.ones(2)
    q = np.ones(2)
    dt = dt_n * 1e-3
    oracle = []
    for t in range(neural.shape[0]):
        z = neural[t]
        ds = z - c.kappa * s - c.gamma_h * (f - 1.0)
        df = s.copy()
        dv = (f - v ** (1.0 / c.alpha)) / c.tau_h
        dq = (f * (1.0 - (1.0 - c.rho) ** (1.0 / f)) / c.rho
              - v ** (1.0 / c.alpha) * q / v) / c.tau_h
        s = s + dt * ds
        f = f + dt * df
        v = v + dt * dv
        q = q + dt * dq
        if (t + 1) % 10 == 0:
            oracle.append(c.V0 * (c.k1 * (1 - q) + c.k2 * (1 - q / v)
                                  + c.k3 * (1 - v)))
    got = bold_transform(neural, dt_n, tr)
    assert np.allclose(got, np.array(oracle), rtol=1e-12, atol=1e-15)
