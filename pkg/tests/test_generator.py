import numpy as np
import pytest

from fmplug import autodiff as ad
from fmplug.errors import ConfigError, ContractError, DivergenceError
from fmplug.flow import GaussianPrior
from fmplug.generator import Generator, generate, invert, sample, steps_from_nfe
from fmplug.priors import bundle, lowrank_gaussian


class Field:
    """Small velocity fields with a ``dim`` attribute, written in graph ops."""

    def __init__(self, fn, dim):
        self.fn, self.dim = fn, dim

    def __call__(self, z, t):
        return self.fn(ad.as_node(z), ad.as_node(t))


def const_field(c):
    c = np.asarray(c, dtype=float)
    return Field(lambda z, t: z * 0.0 + c, c.size)


def test_constant_field_euler_exact():
    c = np.array([1.0, -2.0, 0.5])
    z = np.array([0.3, 0.1, -4.0])
    for steps in (1, 3, 7):
        g = Generator(const_field(c), "euler", steps, t_end=1.0)
        out = generate(g, z, 0.25).value
        assert np.allclose(out, z + 0.75 * c, rtol=0, atol=1e-14)


def test_heun_exact_on_linear_in_time_field():
    a, b = np.array([0.5, -1.0]), np.array([2.0, 3.0])
    f = Field(lambda z, t: z * 0.0 + a + t * b, 2)
    g = Generator(f, "heun2", 1, t_end=1.0)
    z = np.array([1.0, 1.0])
    # integral of a + b t over [0.2, 1]
    exact = z + 0.8 * a + 0.5 * (1.0 - 0.04) * b
    assert np.allclose(generate(g, z, 0.2).value, exact, rtol=0, atol=1e-14)


def _exp_errors(solver, steps_list):
    f = Field(lambda z, t: z, 1)
    z = np.array([1.0])
    return np.array([abs(generate(Generator(f, solver, n, 1.0), z, 0.0).value[0] - np.e)
                     for n in steps_list])


def test_heun_error_ratio_on_exponential():
    err = _exp_errors("heun2", [4, 8, 16])
    ratios = err[:-1] / err[1:]
    assert np.all((ratios >= 3.5) & (ratios <= 4.5)), ratios


@pytest.mark.parametrize("solver,order", [("euler", 1.0), ("heun2", 2.0)])
def test_convergence_order(solver, order):
    steps = np.array([8, 16, 32, 64, 128])
    err = _exp_errors(solver, steps)
    slope = -np.polyfit(np.log(steps), np.log(err), 1)[0]
    assert abs(slope - order) <= 0.2


def _round_trip_error(g, x):
    return np.linalg.norm(generate(g, invert(g, x), 0.0).value - x) / np.linalg.norm(x)


def test_round_trip_affine_gaussian():
    rng = np.random.default_rng(0)
    q = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    field = bundle("g", GaussianPrior([0.5, -1.0], q @ np.diag([0.5, 2.0]) @ q.T)).field
    for _ in range(5):
        x = rng.standard_normal(2)
        # 8 steps leave a few 1e-3 of round-trip error; 32 steps are well inside 1e-3
        assert _round_trip_error(Generator(field, "heun2", 8), x) < 1e-2
        assert _round_trip_error(Generator(field, "heun2", 32), x) < 1e-3


def test_heun_matches_reference_ode_solution():
    from scipy.integrate import solve_ivp

    p = GaussianPrior([0.5, -1.0], np.diag([0.5, 2.0]))
    g = Generator(bundle("g", p).field, "heun2", 64)
    z = np.array([0.8, -0.4])
    rhs = lambda t, y: (bundle("g", p).field(y, t)).value
    ref = solve_ivp(rhs, (0.0, g.t_end), z, rtol=1e-12, atol=1e-12).y[:, -1]
    assert np.allclose(generate(g, z, 0.0).value, ref, rtol=0, atol=1e-4)


def test_round_trip_constant_field_one_euler_step():
    g = Generator(const_field([2.0, -1.0]), "euler", 1)
    x = np.array([0.7, 0.2])
    assert np.allclose(generate(g, invert(g, x), 0.0).value, x, rtol=0, atol=1e-15)


def test_zero_field_inverts_to_itself():
    g = Generator(const_field([0.0, 0.0, 0.0]), "heun2", 4)
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(invert(g, x), x)


def test_gaussian_generator_is_affine():
    prior = lowrank_gaussian(6, 2, seed=3)
    g = Generator(bundle("g", prior).field)
    rng = np.random.default_rng(1)
    z1, z2 = rng.standard_normal(6), rng.standard_normal(6)
    G = lambda z: generate(g, z, 0.0).value
    lhs = G(2.0 * z1 - 0.5 * z2)
    rhs = 2.0 * G(z1) - 0.5 * G(z2) - 0.5 * G(np.zeros(6))
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-8)


def test_t_start_gradient():
    prior = lowrank_gaussian(5, 2, seed=4)
    g = Generator(bundle("g", prior).field)
    z = np.random.default_rng(2).standard_normal(5)
    w = np.arange(5.0)
    for t0 in (0.0, 0.3, 0.8):
        err = ad.grad_check(lambda t: ad.sum(generate(g, z, t) * w), np.array(t0 + 0.01))
        assert err < 1e-4


def test_bad_arguments():
    with pytest.raises(ConfigError):
        Generator(const_field([1.0]), "rk4")
    with pytest.raises(ConfigError):
        Generator(const_field([1.0]), "euler", 0)
    with pytest.raises(ConfigError):
        Generator(const_field([1.0]), "euler", 1, t_end=1.5)
    g = Generator(const_field([1.0]))
    with pytest.raises(ContractError):
        generate(g, [0.0], 1.0)
    with pytest.raises(ContractError):
        invert(g, [np.nan])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    # blows up on the second step only
    f = Field(lambda z, t: z * 0.0 + ad.exp(ad.as_node(3000.0) * t), 1)
    with pytest.raises(DivergenceError) as info:
        generate(Generator(f, "euler", 4, 1.0), [0.0], 0.0)
    assert info.value.step == 1


def test_nfe_counting():
    assert steps_from_nfe(3, "heun2") == 3
    assert steps_from_nfe(3, "heun2", "evaluations") == 1
    assert steps_from_nfe(6, "euler", "evaluations") == 6
    with pytest.raises(ConfigError):
        steps_from_nfe(3, "heun2", "both")


def test_sample_shape_and_seed():
    g = Generator(bundle("g", lowrank_gaussian(4, 2)).field)
    a = sample(g, 5, np.random.default_rng(9))
    b = sample(g, 5, np.random.default_rng(9))
    assert a.shape == (5, 4) and np.array_equal(a, b)
