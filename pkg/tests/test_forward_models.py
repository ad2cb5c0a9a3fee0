import numpy as np
import pytest

from fmplug import forward_models as fm
from fmplug.errors import ConfigError, DimensionError


def all_models():
    return [
        fm.identity((4, 4)),
        fm.random_inpaint((4, 4), 0.3, seed=1),
        fm.gaussian_blur(8, 5, 1.5),
        fm.downsample(8, 4),
        fm.subsampled_dft((8, 8), 0.25, 0.5, seed=2),
        fm.subsampled_dft(16, 0.25, 0.5, seed=3),
        fm.random_gaussian(6, 12, seed=4),
    ]


@pytest.mark.parametrize("m", all_models(), ids=lambda m: m.kind)
def test_linearity(m):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.standard_normal((2, m.in_dim))
        a, b = rng.standard_normal(2)
        lhs = fm.apply(m, a * x + b * y).value
        rhs = a * fm.apply(m, x).value + b * fm.apply(m, y).value
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-10)


@pytest.mark.parametrize("m", all_models(), ids=lambda m: m.kind)
def test_adjoint_dot_product(m):
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, u = rng.standard_normal(m.in_dim), rng.standard_normal(m.out_dim)
        assert abs(fm.apply(m, x).value @ u - x @ fm.adjoint(m, u)) < 1e-10


def test_examples():
    x = np.array([5.0, 6.0, 7.0, 8.0])
    assert np.array_equal(fm.apply(fm.identity(4), x).value, x)
    mask = fm.inpaint_mask([True, False, True, False])
    assert np.array_equal(fm.apply(mask, x).value, [5.0, 7.0])
    assert np.array_equal(fm.adjoint(mask, [1.0, 2.0]), [1.0, 0.0, 2.0, 0.0])
    u = np.array([0.1, -0.3, 2.0, 4.0])
    assert np.array_equal(fm.adjoint(fm.identity(4), u), u)
    blur = fm.gaussian_blur(6, 5, 1.5)
    assert np.allclose(fm.apply(blur, np.full(36, 0.37)).value, 0.37, rtol=0, atol=1e-14)


def test_blur_matches_scipy_reflect_convolution():
    from scipy import ndimage

    rng = np.random.default_rng(2)
    img = rng.standard_normal((8, 8))
    blur = fm.gaussian_blur(8, 5, 1.5)
    k = fm.gaussian_kernel(5, 1.5)
    ref = ndimage.correlate(img, k, mode="reflect")
    assert np.allclose(fm.apply(blur, img.ravel()).value, ref.ravel(), rtol=0, atol=1e-12)


def test_measure_noise():
    m = fm.identity(1000, noise_std=0.03)
    zero = np.zeros(1000)
    n = np.concatenate([fm.measure(m, zero, s) - fm.apply(m, zero).value for s in range(100)])
    assert abs(n.std() / 0.03 - 1.0) < 0.02
    assert np.array_equal(fm.measure(m, zero, 3), fm.measure(m, zero, 3))
    x = np.arange(1000) * 1e-3
    assert np.array_equal(fm.measure(m.with_noise(0.0), x, 3), fm.apply(m, x).value)


def test_shape_errors():
    m = fm.gaussian_blur(4)
    with pytest.raises(DimensionError):
        fm.apply(m, np.zeros(15))
    with pytest.raises(DimensionError):
        fm.apply(m, np.zeros((4, 4)))
    with pytest.raises(DimensionError):
        fm.adjoint(m, np.zeros(3))


def test_downsample_of_upsampled_constant():
    m = fm.downsample(8, 4)
    up = fm.upsample(np.full(4, 2.5), 8, 4)
    assert np.array_equal(fm.apply(m, up).value, np.full(4, 2.5))
    with pytest.raises(ConfigError):
        fm.downsample(6, 4)


@pytest.mark.parametrize("shape", [(8, 8), (12,)])
def test_dft_gram_is_projector(shape):
    m = fm.subsampled_dft(shape, 0.25, 0.5, seed=5)
    gram = m.matrix.T @ m.matrix
    assert np.allclose(gram, gram.T, rtol=0, atol=1e-12)
    assert np.allclose(gram @ gram, gram, rtol=0, atol=1e-10)
    assert abs(np.trace(gram) - len(m.params["keep"])) < 1e-9


def test_dft_keeps_lowest_frequencies():
    m = fm.subsampled_dft((8, 8), 0.25, 0.5, seed=0)
    assert 0 in m.params["keep"]
    # the constant image is measured without loss
    x = np.full(64, 1.5)
    assert np.allclose(fm.adjoint(m, fm.apply(m, x).value), x, rtol=0, atol=1e-12)


def test_embed_measurement():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(16)
    blur = fm.gaussian_blur(4)
    y = fm.apply(blur, x).value
    assert np.array_equal(fm.embed_measurement(blur, y), y)
    mask = fm.random_inpaint(16, 0.5, seed=1)
    e = fm.embed_measurement(mask, fm.apply(mask, x).value)
    kept = mask.params["keep"]
    assert np.array_equal(e[kept], x[kept]) and np.all(np.delete(e, kept) == 0)
    cs = fm.random_gaussian(8, 16, seed=2)
    e = fm.embed_measurement(cs, fm.apply(cs, x).value, reference_norm=3.0)
    assert np.linalg.norm(e) == pytest.approx(3.0)
    # least-squares scale: A e is the best multiple of A A^T y
    y = fm.apply(cs, x).value
    e = fm.embed_measurement(cs, y)
    ae = cs.matrix @ e
    assert abs((y - ae) @ ae) < 1e-10


def test_make_rejects_unknown():
    with pytest.raises(ConfigError):
        fm.make("radon", (4, 4))
    with pytest.raises(ConfigError):
        fm.make("gaussian_blur", (4, 4), kernel_size=3, factor=2)
    assert fm.make("downsample", (8, 8), factor=2).out_dim == 16
