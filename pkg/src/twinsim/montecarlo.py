"""Monte Carlo cross-check of the covariance engine and 2D conduit image rendering.

Random streams: the sampler splits ``rng_seed`` with
``numpy.random.SeedSequence(rng_seed).spawn(n_chunks)``, one child per chunk of
``chunk_size`` samples, so estimates do not depend on the number of threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .detection import SlitParams, detection_weights
from .errors import ConfigError, DomainError, MeasurementError, PhysicalityError
from .lattice import FieldState, Grid2D
from .transport import ConduitParams

MAX_SAMPLES = 10**8
JITTER = 1e-10
CONTRAST_THRESHOLD = 0.01


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 10**6
    rng_seed: int = 12345
    grid2d: Grid2D | None = None
    chunk_size: int = 2**16

    def __post_init__(self):
        if not 10**3 <= self.n_samples <= MAX_SAMPLES:
            raise ConfigError(f"mc.n_samples must lie in [1e3, 1e8], got {self.n_samples}")
        if self.chunk_size < 1:
            raise ConfigError("mc.chunk_size must be positive")


@dataclass(frozen=True)
class McEstimate:
    v_rel_estimate: float
    std_error: float


def _chunk_sum(chol, w, seed_seq, size):
    rng = np.random.default_rng(seed_seq)
    z = rng.standard_normal((size, chol.shape[0]))
    y = (z @ chol.T) @ w
    return float(y @ y)


def mc_noise(state: FieldState, slit_p: SlitParams, slit_c: SlitParams, cfg: McConfig,
             threads: int = 1) -> McEstimate:
    """Sample quadrature fluctuations and estimate the QNL-relative difference variance.

    Only the quadratures seen by the slits are sampled (their marginal is exact).
    """
    w = detection_weights(state, slit_p, slit_c)
    support = np.flatnonzero(w)
    qnl = float(w @ w)
    if support.size == 0 or qnl <= 0:
        raise MeasurementError("no light on detector")
    sub = state.cov[np.ix_(support, support)]
    try:
        chol = np.linalg.cholesky(sub + JITTER * np.eye(support.size))
    except np.linalg.LinAlgError as exc:
        raise PhysicalityError("covariance is not positive semidefinite") from exc
    ws = w[support]

    n_chunks = -(-cfg.n_samples // cfg.chunk_size)
    sizes = [cfg.chunk_size] * (n_chunks - 1) + [cfg.n_samples - cfg.chunk_size * (n_chunks - 1)]
    children = np.random.SeedSequence(int(cfg.rng_seed)).spawn(n_chunks)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sums = list(pool.map(lambda a: _chunk_sum(chol, ws, *a), zip(children, sizes)))
    else:
        sums = [_chunk_sum(chol, ws, c, s) for c, s in zip(children, sizes)]
    # zero-mean fluctuations: the mean square is the variance estimator
    v = math.fsum(sums) / cfg.n_samples / qnl
    return McEstimate(v, v * math.sqrt(2.0 / cfg.n_samples))


# --- 2D rendering -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpeckleStats:
    """Far-field speckle statistics.

    ``contrast`` is std/mean of the intensity divided by its local envelope
    (Gaussian smoothing over a few speckle grains), over pixels whose envelope
    exceeds ``threshold_fraction`` of its peak. ``raw_contrast`` is std/mean of
    the bare intensity over pixels above the same fraction of the peak pixel.
    """

    contrast: float
    raw_contrast: float
    threshold_fraction: float
    illuminated_pixels: int
    envelope_sigma_px: float
    mean_intensity: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class NearField:
    intensity: np.ndarray
    fiber_label: np.ndarray
    fiber_count: int
    core_fraction: float


def default_core_fraction(fill_transmission: float) -> float:
    """Core diameter / pitch giving a geometric fill factor of ``fill_transmission``
    on an equilateral triangular lattice."""
    return 2.0 * math.sqrt(fill_transmission * math.sqrt(3.0) / (2.0 * math.pi))


def triangular_lattice_labels(grid2d: Grid2D, pitch: float):
    """Nearest triangular-lattice site for every pixel: (label, distance to site centre)."""
    x, y = grid2d.coordinates()
    row_h = pitch * math.sqrt(3.0) / 2.0
    j0 = np.round(y / row_h)
    best_d = best_i = best_j = None
    for dj in (-1.0, 0.0, 1.0):
        j = j0 + dj
        i = np.round((x - 0.5 * j * pitch) / pitch)
        d = np.hypot(x - (i + 0.5 * j) * pitch, y - j * row_h)
        if best_d is None:
            best_d, best_i, best_j = d, i, j
        else:
            closer = d < best_d
            best_d = np.where(closer, d, best_d)
            best_i = np.where(closer, i, best_i)
            best_j = np.where(closer, j, best_j)
    _, label = np.unique(np.stack([best_j.ravel(), best_i.ravel()]), axis=1, return_inverse=True)
    return label.reshape(x.shape), best_d, (best_i, best_j)


def render_nearfield(mean2d, grid2d: Grid2D, p: ConduitParams, core_fraction: float | None = None,
                     rng_seed: int = 0, texture_modes: int = 6) -> NearField:
    """Output-face intensity of the bundle for an input intensity image ``mean2d``.

    Light outside the fibre cores is dropped; each core carries a random
    multimode texture normalised to unit mean over the core. ``texture_modes=0``
    gives flat cores instead.
    """
    if grid2d.pitch > p.fiber_pitch / 4.0 * (1 + 1e-12):
        raise ConfigError("grid2d pitch must be at most a quarter of the fibre pitch")
    mean2d = np.asarray(mean2d, dtype=float)
    if mean2d.shape != (grid2d.ny, grid2d.nx):
        raise DomainError("mean2d shape does not match grid2d")
    cf = default_core_fraction(p.fill_transmission) if core_fraction is None else core_fraction
    label, dist, (ii, jj) = triangular_lattice_labels(grid2d, p.fiber_pitch)
    core_radius = 0.5 * cf * p.fiber_pitch
    # area-weighted edge: linear ramp over one pixel approximates partial coverage
    inside = np.clip((core_radius - dist) / grid2d.pitch + 0.5, 0.0, 1.0)
    n_fib = int(label.max()) + 1

    if texture_modes == 0:
        return NearField(mean2d * inside, label, n_fib, cf)
    rng = np.random.default_rng(int(rng_seed))
    k_max = 3.8 / core_radius
    k = k_max * np.sqrt(rng.uniform(0, 1, (n_fib, texture_modes)))
    ang = rng.uniform(0, 2 * np.pi, (n_fib, texture_modes))
    amp = rng.standard_normal((n_fib, texture_modes)) + 1j * rng.standard_normal((n_fib, texture_modes))
    x, y = grid2d.coordinates()
    row_h = p.fiber_pitch * math.sqrt(3.0) / 2.0
    dx = x - (ii + 0.5 * jj) * p.fiber_pitch
    dy = y - jj * row_h
    modal = np.zeros(x.shape, dtype=complex)
    for m in range(texture_modes):
        kx = (k[:, m] * np.cos(ang[:, m]))[label]
        ky = (k[:, m] * np.sin(ang[:, m]))[label]
        modal += amp[:, m][label] * np.exp(1j * (kx * dx + ky * dy))
    texture = np.abs(modal) ** 2 * inside
    norm = np.bincount(label.ravel(), texture.ravel(), n_fib)
    count = np.bincount(label.ravel(), inside.ravel(), n_fib)
    mean_tex = np.divide(norm, count, out=np.ones(n_fib), where=count > 0)
    texture = texture / mean_tex[label]
    return NearField(mean2d * texture, label, n_fib, cf)


def fiber_phases(n_fibers: int, phase_seed: int, zero: bool = False) -> np.ndarray:
    if zero:
        return np.zeros(n_fibers)
    return np.random.default_rng(int(phase_seed)).uniform(0.0, 2.0 * np.pi, n_fibers)


def nearfield_field(nf: NearField, phases: np.ndarray) -> np.ndarray:
    """Complex output-face field: sqrt(intensity) with a piston phase per fibre."""
    return np.sqrt(nf.intensity) * np.exp(1j * np.asarray(phases)[nf.fiber_label])


def speckle_grain_px(nearfield_intensity: np.ndarray) -> float:
    """Far-field speckle grain (intensity correlation length, in DFT pixels)."""
    img = np.asarray(nearfield_intensity, dtype=float)
    total = img.sum()
    if total <= 0:
        return 1.0
    ny, nx = img.shape
    yy, xx = np.mgrid[0:ny, 0:nx]
    sx = math.sqrt(((xx - (xx * img).sum() / total) ** 2 * img).sum() / total)
    sy = math.sqrt(((yy - (yy * img).sum() / total) ** 2 * img).sum() / total)
    return max(nx / (2 * math.pi * max(sx, 1e-9)), ny / (2 * math.pi * max(sy, 1e-9)))


def speckle_stats(image: np.ndarray, envelope_sigma_px: float = 4.0,
                  threshold: float = CONTRAST_THRESHOLD) -> SpeckleStats:
    image = np.asarray(image, dtype=float)
    peak = image.max()
    if peak <= 0:
        return SpeckleStats(0.0, 0.0, threshold, 0, envelope_sigma_px, image)
    raw = image[image > threshold * peak]
    envelope = gaussian_filter(image, envelope_sigma_px, mode="wrap")
    lit = envelope > threshold * envelope.max()
    ratio = image[lit] / envelope[lit]
    return SpeckleStats(float(ratio.std() / ratio.mean()), float(raw.std() / raw.mean()),
                        threshold, int(lit.sum()), float(envelope_sigma_px), image)


def render_farfield(near: np.ndarray, envelope_sigma_px: float | None = None):
    """Far-field intensity (centred, unitary 2D DFT) and its speckle statistics.

    The envelope smoothing defaults to four speckle grains, estimated from the
    near-field intensity width.
    """
    near = np.asarray(near, dtype=complex)
    ff = np.fft.fftshift(np.fft.fft2(near, norm="ortho"))
    image = np.abs(ff) ** 2
    if envelope_sigma_px is None:
        envelope_sigma_px = max(2.0, 4.0 * speckle_grain_px(np.abs(near) ** 2))
    return image, speckle_stats(image, envelope_sigma_px)


def gaussian_intensity(grid2d: Grid2D, waist: float, power: float = 1.0) -> np.ndarray:
    x, y = grid2d.coordinates()
    img = np.exp(-2.0 * (x**2 + y**2) / waist**2)
    return img * power / img.sum()


def pgm_bytes(image: np.ndarray, comment: str | None = None) -> bytes:
    """16-bit binary PGM (P5, big-endian, row-major), scaled so the peak maps to 65535.

    ``comment`` goes into a ``#`` line after the magic number.
    """
    image = np.asarray(image, dtype=float)
    peak = image.max()
    scaled = np.zeros(image.shape) if peak <= 0 else image / peak * 65535.0
    data = np.round(scaled).astype(">u2")
    note = f"# {comment}\n" if comment else ""
    header = f"P5\n{note}{image.shape[1]} {image.shape[0]}\n65535\n".encode("ascii")
    return header + data.tobytes()


def write_pgm(path, image: np.ndarray, comment: str | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(image, comment))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype, count=w * h).reshape(h, w)
