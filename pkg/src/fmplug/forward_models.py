"""Linear measurement operators ``y = A x + n``.

Every operator is stored as a dense real matrix acting on the flattened
signal; at the sizes used here (at most a few thousand pixels) that is cheap
and makes the adjoint exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError

KINDS = ("identity", "inpaint_mask", "gaussian_blur", "downsample", "subsampled_dft",
         "random_gaussian")


@dataclass(frozen=True)
class ForwardModel:
    kind: str
    matrix: np.ndarray
    signal_shape: Tuple[int, ...]
    noise_std: float = 0.0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown forward model kind {self.kind!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        mat = np.array(self.matrix, dtype=np.float64)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "signal_shape", tuple(self.signal_shape))
        if mat.shape[1] != int(np.prod(self.signal_shape)):
            raise DimensionError("operator width does not match the signal size")

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def preserves_shape(self) -> bool:
        """True when ``y`` lives in the signal space (identity, blur)."""
        return self.kind in ("identity", "gaussian_blur")

    def with_noise(self, noise_std: float) -> "ForwardModel":
        return ForwardModel(self.kind, self.matrix, self.signal_shape, noise_std, self.params)


def _check_in(m: ForwardModel, n: int, what="apply"):
    if n != m.in_dim:
        raise DimensionError(f"{what}({m.kind}): signal has {n} entries, operator expects {m.in_dim}")


def apply(m: ForwardModel, x) -> Node:
    """``A x`` on a flat signal (noise not included)."""
    x = ad.as_node(x)
    if x.ndim != 1:
        raise DimensionError(f"apply({m.kind}): expected a flat signal, got shape {x.shape}")
    _check_in(m, x.shape[0])
    if m.kind == "identity":
        return x
    return ad.matvec(m.matrix, x)


def measure(m: ForwardModel, x, seed) -> np.ndarray:
    """``A x + n`` with ``n ~ N(0, noise_std^2 I)`` drawn from ``seed``."""
    y = apply(m, ad.value_of(x)).value
    if m.noise_std == 0.0:
        return np.array(y)
    rng = np.random.default_rng(seed)
    return y + m.noise_std * rng.standard_normal(y.shape)


def adjoint(m: ForwardModel, u) -> np.ndarray:
    u = np.asarray(ad.value_of(u), dtype=np.float64)
    if u.ndim != 1 or u.shape[0] != m.out_dim:
        raise DimensionError(f"adjoint({m.kind}): expected ({m.out_dim},), got {u.shape}")
    return m.matrix.T @ u


# ---------------------------------------------------------------------------
# constructors


def identity(signal_shape, noise_std=0.0) -> ForwardModel:
    shape = tuple(np.atleast_1d(signal_shape))
    return ForwardModel("identity", np.eye(int(np.prod(shape))), shape, noise_std)


def inpaint_mask(mask, noise_std=0.0) -> ForwardModel:
    """Keep the entries where ``mask`` is true (row-major order)."""
    mask = np.asarray(mask, dtype=bool)
    keep = np.flatnonzero(mask.ravel())
    mat = np.eye(mask.size)[keep]
    return ForwardModel("inpaint_mask", mat, mask.shape, noise_std, {"keep": keep})


def random_inpaint(signal_shape, keep_fraction=0.3, seed=0, noise_std=0.0) -> ForwardModel:
    shape = tuple(np.atleast_1d(signal_shape))
    n = int(np.prod(shape))
    rng = np.random.default_rng(seed)
    n_keep = max(1, int(round(keep_fraction * n)))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, n_keep, replace=False)] = True
    return inpaint_mask(mask.reshape(shape), noise_std)


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k1 = np.exp(-0.5 * (r / std) ** 2)
    k = np.outer(k1, k1)
    return k / k.sum()


def _reflect(i: int, n: int) -> int:
    # symmetric padding: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    period = 2 * n
    i %= period
    return i if i < n else period - 1 - i


def gaussian_blur(side, kernel_size=5, kernel_std=1.5, noise_std=0.0) -> ForwardModel:
    """Same-size 2-D convolution with a normalized Gaussian, reflective boundary."""
    h, w = (side, side) if np.isscalar(side) else tuple(side)
    k = gaussian_kernel(kernel_size, kernel_std)
    r = kernel_size // 2
    mat = np.zeros((h * w, h * w))
    for i in range(h):
        for j in range(w):
            row = i * w + j
            for a in range(kernel_size):
                ii = _reflect(i + a - r, h)
                for b in range(kernel_size):
                    jj = _reflect(j + b - r, w)
                    mat[row, ii * w + jj] += k[a, b]
    return ForwardModel("gaussian_blur", mat, (h, w), noise_std,
                        {"kernel_size": kernel_size, "kernel_std": kernel_std})


def downsample(side, factor=4, noise_std=0.0) -> ForwardModel:
    """Average over non-overlapping ``factor x factor`` blocks."""
    h, w = (side, side) if np.isscalar(side) else tuple(side)
    if h % factor or w % factor:
        raise ConfigError(f"image {h}x{w} is not divisible by factor {factor}")
    ho, wo = h // factor, w // factor
    mat = np.zeros((ho * wo, h * w))
    inv = 1.0 / (factor * factor)
    for i in range(h):
        for j in range(w):
            mat[(i // factor) * wo + j // factor, i * w + j] = inv
    return ForwardModel("downsample", mat, (h, w), noise_std, {"factor": factor})


def upsample(y: np.ndarray, side, factor: int) -> np.ndarray:
    """Replicate each low-resolution pixel over its block."""
    h, w = (side, side) if np.isscalar(side) else tuple(side)
    y = np.asarray(y, dtype=np.float64).reshape(h // factor, w // factor)
    return np.kron(y, np.ones((factor, factor))).ravel()


def _dft_matrix(shape) -> np.ndarray:
    n = int(np.prod(shape))
    basis = np.eye(n).reshape((n,) + tuple(shape))
    axes = tuple(range(1, len(shape) + 1))
    return np.fft.fftn(basis, axes=axes, norm="ortho").reshape(n, n).T


def _negate_index(flat: np.ndarray, shape) -> np.ndarray:
    idx = np.unravel_index(flat, shape)
    neg = tuple((-i) % n for i, n in zip(idx, shape))
    return np.ravel_multi_index(neg, shape)


def subsampled_dft(signal_shape, keep_fraction=0.25, low_fraction=0.5, seed=0,
                   noise_std=0.0) -> ForwardModel:
    """Real and imaginary parts of a subset of orthonormal DFT coefficients.

    The kept set contains the lowest frequencies (``low_fraction`` of the
    budget) and seeded random others, closed under ``k -> -k`` so that
    ``A^T A`` is an orthogonal projector.
    """
    shape = tuple(np.atleast_1d(signal_shape))
    n = int(np.prod(shape))
    budget = max(1, int(round(keep_fraction * n)))
    freqs = np.stack(np.meshgrid(*[np.fft.fftfreq(s) * s for s in shape], indexing="ij"), -1)
    radius = np.sqrt((freqs.reshape(n, -1) ** 2).sum(-1))
    order = np.lexsort((np.arange(n), radius))
    kept = set()

    def add(k):
        kept.add(int(k))
        kept.add(int(_negate_index(np.array([k]), shape)[0]))

    for k in order:
        if len(kept) >= int(round(low_fraction * budget)):
            break
        add(k)
    rng = np.random.default_rng(seed)
    for k in rng.permutation(n):
        if len(kept) >= budget:
            break
        add(k)
    keep = np.array(sorted(kept))
    f = _dft_matrix(shape)[keep]
    mat = np.vstack([f.real, f.imag])
    return ForwardModel("subsampled_dft", mat, shape, noise_std, {"keep": keep})


def random_gaussian(m: int, signal_shape, seed=0, noise_std=0.0) -> ForwardModel:
    """Sensing matrix with iid ``N(0, 1/m)`` entries."""
    shape = tuple(np.atleast_1d(signal_shape))
    n = int(np.prod(shape))
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((m, n)) / np.sqrt(m)
    return ForwardModel("random_gaussian", mat, shape, noise_std)


def embed_measurement(m: ForwardModel, y, reference_norm: Optional[float] = None) -> np.ndarray:
    """Map a measurement into signal space for use as a warm-start instance.

    Shape-preserving operators use ``y`` itself, inpainting zero-fills the
    missing entries, and dimension-reducing operators use ``A^T y`` rescaled
    either to ``reference_norm`` or, without one, by the least-squares factor
    ``s = <A A^T y, y> / ||A A^T y||^2``.
    """
    y = np.asarray(y, dtype=np.float64)
    if m.preserves_shape:
        return y.copy()
    back = adjoint(m, y)
    if m.kind == "inpaint_mask":
        return back
    nrm = np.linalg.norm(back)
    if nrm == 0.0:
        return back
    if reference_norm is not None:
        return back * (reference_norm / nrm)
    fwd = m.matrix @ back
    return back * (fwd @ y) / (fwd @ fwd)


def make(kind: str, signal_shape, noise_std=0.0, seed=0, **params) -> ForwardModel:
    """Build an operator by kind name; unknown parameters are errors."""
    builders = {
        "identity": (lambda: identity(signal_shape, noise_std), set()),
        "inpaint_mask": (lambda: random_inpaint(signal_shape, params.get("keep_fraction", 0.3),
                                                seed, noise_std), {"keep_fraction"}),
        "gaussian_blur": (lambda: gaussian_blur(signal_shape, params.get("kernel_size", 5),
                                                params.get("kernel_std", 1.5), noise_std),
                          {"kernel_size", "kernel_std"}),
        "downsample": (lambda: downsample(signal_shape, params.get("factor", 4), noise_std),
                       {"factor"}),
        "subsampled_dft": (lambda: subsampled_dft(signal_shape, params.get("keep_fraction", 0.25),
                                                  params.get("low_fraction", 0.5), seed, noise_std),
                           {"keep_fraction", "low_fraction"}),
        "random_gaussian": (lambda: random_gaussian(params.get("measurements", 8), signal_shape,
                                                    seed, noise_std), {"measurements"}),
    }
    if kind not in builders:
        raise ConfigError(f"unknown forward model kind {kind!r}")
    build, allowed = builders[kind]
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"{kind}: unknown parameters {sorted(extra)}")
    return build()
