import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmid.ssm import (Dataset, FunctionModel, ModelError, NoiseSpec, ParameterSpace,
                       read_dataset_csv, rk4_step, simulate, write_dataset_csv)


def decay(x, u, theta):
    return -x


def test_rk4_zero_dynamics_keeps_state():
    x = np.array([1.0, -2.0, 3.5])
    out = rk4_step(lambda x, u, t: np.zeros_like(x), x, None, None, 0.3)
    assert np.array_equal(out, x)


def test_rk4_single_step_matches_exponential():
    out = rk4_step(decay, np.array([1.0]), None, None, 0.1)
    assert abs(out[0] - np.exp(-0.1)) < 1e-7


def _global_error(h):
    x = np.array([1.0])
    for _ in range(int(round(1.0 / h))):
        x = rk4_step(decay, x, None, None, h)
    return abs(x[0] - np.exp(-1.0))


def test_rk4_convergence_order():
    e1, e2 = _global_error(0.1), _global_error(0.05)
    ratio = e1 / e2
    assert 12 <= ratio <= 20
    assert 3.8 <= np.log2(ratio) <= 4.2


def test_rk4_nonfinite_derivative_names_component():
    def bad(x, u, t):
        d = np.zeros_like(x)
        d[2] = np.nan
        return d

    with pytest.raises(ModelError, match="component 2"):
        rk4_step(bad, np.zeros(4), None, None, 1.0)


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        rk4_step(decay, np.ones(1), None, None, 0.0)


def halving_model():
    return FunctionModel(lambda x, u, t: 0.5 * x, lambda x, u, t: x, 1, 1, 1)


def test_simulate_linear_recursion():
    states, meas = simulate(halving_model(), [1.0], np.zeros((3, 1)), None)
    assert np.allclose(states.ravel(), [0.5, 0.25, 0.125])
    assert np.array_equal(states, meas)


def test_simulate_seeded_noise_is_reproducible():
    m = halving_model()
    noise = NoiseSpec.diagonal(0.1, 0.2)
    a = simulate(m, [1.0], np.zeros((50, 1)), None, noise, seed=3)
    b = simulate(m, [1.0], np.zeros((50, 1)), None, noise, seed=3)
    c = simulate(m, [1.0], np.zeros((50, 1)), None, noise, seed=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def test_simulate_reports_time_index_of_blowup():
    m = FunctionModel(lambda x, u, t: x * 1e200, lambda x, u, t: x, 1, 1, 1)
    with pytest.raises(ModelError, match="time index 1"), np.errstate(over="ignore"):
        simulate(m, [1.0], np.zeros((5, 1)), None)


def test_simulate_measurement_composition():
    m = FunctionModel(lambda x, u, t: np.sin(x) + u[0], lambda x, u, t: x ** 2 + u[0], 1, 1, 1)
    u = np.linspace(0, 1, 20)[:, None]
    states, meas = simulate(m, [0.3], u, None)
    for k in range(len(u)):
        assert np.array_equal(meas[k], m.measurement(states[k], u[k], None))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(np.eye(2), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        NoiseSpec(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(1))
    with pytest.raises(ValueError):
        NoiseSpec(-np.eye(2), np.eye(1))
    ns = NoiseSpec(np.zeros((3, 3)), np.eye(2))  # semidefinite Q is fine
    assert ns.Q.shape == (3, 3)


def test_dataset_validation_and_readonly():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros((3, 1)), 0.0)
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 1)), np.zeros((0, 1)), 1.0)
    d = Dataset(np.zeros(4), np.ones(4), 0.5)
    assert d.T == 4 and d.inputs.shape == (4, 1)
    with pytest.raises(ValueError):
        d.inputs[0, 0] = 1.0


def test_parameter_space():
    sp = ParameterSpace(["a", "b"], [0, -1], [2, 1], ["m", "s"])
    assert sp.dim == 2
    assert np.allclose(sp.to_unit([1, 0]), [0.5, 0.5])
    assert np.allclose(sp.from_unit([1, 0]), [2, -1])
    assert sp.contains([0, 1]) and not sp.contains([3, 0])
    assert sp.as_dict([1, 0]) == {"a": 1.0, "b": 0.0}
    with pytest.raises(ValueError):
        ParameterSpace(["a"], [1], [1])
    with pytest.raises(ValueError):
        ParameterSpace(["a", "a"], [0, 0], [1, 1])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
       st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_unit_mapping_roundtrip(lo, v):
    lo = np.array(lo)
    sp = ParameterSpace(["a", "b"], lo, lo + 1.5)
    assert np.allclose(sp.to_unit(sp.from_unit(v)), v, atol=1e-9)


def test_csv_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.standard_normal((7, 2)), rng.standard_normal((7, 2)), 0.25, "x")
    p = tmp_path / "d.csv"
    write_dataset_csv(p, d, ["I", "T_amb"], ["V", "T_surf"])
    assert p.read_text().splitlines()[0] == "t,I,T_amb,V,T_surf"
    back = read_dataset_csv(p, 2)
    assert np.array_equal(back.inputs, d.inputs)
    assert np.array_equal(back.measurements, d.measurements)
    assert back.dt == 0.25 and back.label == "d"


def test_csv_generic_header(tmp_path):
    d = Dataset(np.zeros((2, 1)), np.zeros((2, 1)), 1.0)
    p = tmp_path / "g.csv"
    write_dataset_csv(p, d)
    assert p.read_text().splitlines()[0] == "t,u1,z1"


def test_csv_rejects_nonuniform_time(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,u1,z1\n1,0,0\n2,0,0\n4,0,0\n")
    with pytest.raises(ValueError, match="uniform"):
        read_dataset_csv(p, 1)
