"""Gaussian states of the probe/conjugate pair on a 1D transverse lattice.

Quadrature convention: X = a + a^dag, P = -i(a - a^dag), so the vacuum has
unit variance in every quadrature and a mean field alpha corresponds to the
quadrature means (2 Re alpha, 2 Im alpha).

The covariance matrix is stored dense with the ordering

    [X_probe(0..N-1), P_probe(0..N-1), X_conj(0..N-1), P_conj(0..N-1)]

Every channel returns a new :class:`FieldState`; inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, PhysicalityError

PHYSICALITY_TOL = 1e-9
SYMMETRY_RTOL = 1e-10
CHANNEL_TOL = 1e-8
MAX_GRID2D_PIXELS = 2**22

BEAMS = ("probe", "conj")


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D pixel lattice; lengths in micrometres."""

    pixel_count: int
    pitch: float
    origin: float = 0.0

    def __post_init__(self):
        if int(self.pixel_count) != self.pixel_count or self.pixel_count < 2:
            raise DomainError(f"Grid1D.pixel_count must be an integer >= 2, got {self.pixel_count}")
        if not np.isfinite(self.pitch) or self.pitch <= 0:
            raise DomainError(f"Grid1D.pitch must be > 0, got {self.pitch}")
        if not np.isfinite(self.origin):
            raise DomainError("Grid1D.origin must be finite")

    @classmethod
    def centered(cls, pixel_count: int, pitch: float) -> "Grid1D":
        """Grid whose pixel centres are symmetric about x = 0."""
        return cls(pixel_count, pitch, -0.5 * (pixel_count - 1) * pitch)

    def coordinate(self, i):
        return self.origin + np.asarray(i) * self.pitch

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.pitch * np.arange(self.pixel_count)

    @property
    def span(self) -> float:
        return self.pixel_count * self.pitch


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    pitch: float
    max_pixels: int = MAX_GRID2D_PIXELS

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise DomainError("Grid2D dimensions must be positive")
        if self.pitch <= 0:
            raise DomainError("Grid2D.pitch must be > 0")
        if self.nx * self.ny > self.max_pixels:
            raise DomainError(
                f"Grid2D has {self.nx * self.ny} pixels, above the limit of {self.max_pixels}"
            )

    def coordinates(self):
        """Pixel-centre coordinate arrays (X, Y), centred on the optical axis."""
        x = (np.arange(self.nx) - 0.5 * (self.nx - 1)) * self.pitch
        y = (np.arange(self.ny) - 0.5 * (self.ny - 1)) * self.pitch
        return np.meshgrid(x, y)


@dataclass(frozen=True, eq=False)
class FieldState:
    grid: Grid1D
    mean_probe: np.ndarray
    mean_conj: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.grid.pixel_count
        for name in ("mean_probe", "mean_conj"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (n,):
                raise ContractError(f"{name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (4 * n, 4 * n):
            raise ContractError(f"cov must have shape {(4 * n, 4 * n)}, got {cov.shape}")
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.grid.pixel_count

    def block(self, beam: str, quad: str) -> slice:
        """Slice of the quadrature vector for ``beam`` ('probe'|'conj') and ``quad`` ('X'|'P')."""
        offset = {"probe": 0, "conj": 2}[beam] + {"X": 0, "P": 1}[quad]
        return slice(offset * self.n, (offset + 1) * self.n)

    def mean(self, beam: str) -> np.ndarray:
        return self.mean_probe if beam == "probe" else self.mean_conj

    def intensity(self, beam: str) -> np.ndarray:
        return np.abs(self.mean(beam)) ** 2

    def replace(self, mean_probe=None, mean_conj=None, cov=None) -> "FieldState":
        return FieldState(
            self.grid,
            self.mean_probe if mean_probe is None else mean_probe,
            self.mean_conj if mean_conj is None else mean_conj,
            self.cov if cov is None else cov,
        )


@dataclass(frozen=True, eq=False)
class ChannelMap:
    """Gaussian channel cov -> m cov m^T + added_noise on the full quadrature vector."""

    m: np.ndarray
    added_noise: np.ndarray

    def validate(self, tol: float = CHANNEL_TOL) -> None:
        m = np.asarray(self.m, dtype=float)
        noise = np.asarray(self.added_noise, dtype=float)
        dim = m.shape[0]
        if m.shape != (dim, dim) or noise.shape != (dim, dim) or dim % 4:
            raise ContractError("channel matrices must be square with size divisible by 4")
        if not np.allclose(noise, noise.T, atol=tol):
            raise ContractError("channel added_noise is not symmetric")
        if np.linalg.eigvalsh(noise).min() < -tol:
            raise PhysicalityError("channel added_noise is not positive semidefinite")
        omega = symplectic_form(dim // 4)
        test = noise + 1j * (omega - m @ omega @ m.T)
        if np.linalg.eigvalsh(test).min() < -tol:
            raise PhysicalityError("channel violates the complete-positivity condition")


def _beams(beam: str):
    if beam == "both":
        return BEAMS
    if beam not in BEAMS:
        raise DomainError(f"beam must be 'probe', 'conj' or 'both', got {beam!r}")
    return (beam,)


def _per_pixel(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DomainError(f"{name} must be a scalar or have shape ({n},), got {arr.shape}")
    return arr


def symplectic_form(n_pixels: int) -> np.ndarray:
    """Symplectic form for the [Xp, Pp, Xc, Pc] ordering."""
    eye = np.eye(n_pixels)
    zero = np.zeros((n_pixels, n_pixels))
    one_beam = np.block([[zero, eye], [-eye, zero]])
    return np.kron(np.eye(2), one_beam)


def make_vacuum(grid: Grid1D) -> FieldState:
    n = grid.pixel_count
    zeros = np.zeros(n, dtype=complex)
    return FieldState(grid, zeros, zeros.copy(), np.eye(4 * n))


def coherent_state(grid: Grid1D, mean_probe, mean_conj) -> FieldState:
    n = grid.pixel_count
    return FieldState(grid, np.broadcast_to(mean_probe, (n,)).astype(complex),
                      np.broadcast_to(mean_conj, (n,)).astype(complex), np.eye(4 * n))


def apply_loss(state: FieldState, beam: str, transmission) -> FieldState:
    """Beamsplitter-with-vacuum loss, per pixel transmission in [0, 1]."""
    eta = _per_pixel(transmission, state.n, "transmission")
    if not np.all(np.isfinite(eta)) or eta.min() < 0.0 or eta.max() > 1.0:
        raise DomainError("transmission must lie in [0, 1]")
    scale = np.ones(4 * state.n)
    means = {"probe": state.mean_probe, "conj": state.mean_conj}
    root = np.sqrt(eta)
    for b in _beams(beam):
        scale[state.block(b, "X")] = root
        scale[state.block(b, "P")] = root
        means[b] = root * means[b]
    cov = state.cov * np.outer(scale, scale)
    cov[np.diag_indices_from(cov)] += 1.0 - scale**2
    return state.replace(means["probe"], means["conj"], cov)


def apply_phase(state: FieldState, beam: str, theta) -> FieldState:
    """Rotate the local field of each pixel by ``theta`` radians (a -> exp(i theta) a)."""
    theta = _per_pixel(theta, state.n, "theta")
    if not np.all(np.isfinite(theta)):
        raise DomainError("theta must be finite")
    c, s = np.cos(theta), np.sin(theta)
    cov = state.cov.copy()
    means = {"probe": state.mean_probe, "conj": state.mean_conj}
    for b in _beams(beam):
        xs, ps = state.block(b, "X"), state.block(b, "P")
        x_rows, p_rows = cov[xs].copy(), cov[ps].copy()
        cov[xs] = c[:, None] * x_rows - s[:, None] * p_rows
        cov[ps] = s[:, None] * x_rows + c[:, None] * p_rows
        x_cols, p_cols = cov[:, xs].copy(), cov[:, ps].copy()
        cov[:, xs] = x_cols * c - p_cols * s
        cov[:, ps] = x_cols * s + p_cols * c
        means[b] = np.exp(1j * theta) * means[b]
    return state.replace(means["probe"], means["conj"], cov)


def apply_beamsplitters(state: FieldState, beam: str, pixels_i, pixels_j, angle) -> FieldState:
    """Mix pixel pairs (i_k, j_k) of one beam: a_i -> c a_i - s a_j, a_j -> s a_i + c a_j.

    The pairs must be disjoint so the rotations commute and can be applied at once.
    """
    if beam == "both":
        raise DomainError("beamsplitter acts on a single beam")
    (b,) = _beams(beam)
    ii = np.atleast_1d(np.asarray(pixels_i, dtype=int))
    jj = np.atleast_1d(np.asarray(pixels_j, dtype=int))
    if ii.shape != jj.shape:
        raise DomainError("pixel index arrays must have equal length")
    for idx in (ii, jj):
        if idx.size and (idx.min() < 0 or idx.max() >= state.n):
            raise IndexError(f"pixel index out of range for {state.n} pixels")
    if np.any(ii == jj):
        raise DomainError("beamsplitter needs two distinct pixels")
    touched = np.concatenate([ii, jj])
    if np.unique(touched).size != touched.size:
        raise DomainError("beamsplitter pixel pairs must be disjoint")
    angle = np.broadcast_to(np.asarray(angle, dtype=float), ii.shape)
    c, s = np.cos(angle), np.sin(angle)

    cov = state.cov.copy()
    rows_i = np.concatenate([ii + state.block(b, q).start for q in ("X", "P")])
    rows_j = np.concatenate([jj + state.block(b, q).start for q in ("X", "P")])
    cc, ss = np.tile(c, 2), np.tile(s, 2)
    ri, rj = cov[rows_i].copy(), cov[rows_j].copy()
    cov[rows_i] = cc[:, None] * ri - ss[:, None] * rj
    cov[rows_j] = ss[:, None] * ri + cc[:, None] * rj
    ci, cj = cov[:, rows_i].copy(), cov[:, rows_j].copy()
    cov[:, rows_i] = ci * cc - cj * ss
    cov[:, rows_j] = ci * ss + cj * cc

    mean = state.mean(b).copy()
    mi, mj = mean[ii].copy(), mean[jj].copy()
    mean[ii] = c * mi - s * mj
    mean[jj] = s * mi + c * mj
    if b == "probe":
        return state.replace(mean_probe=mean, cov=cov)
    return state.replace(mean_conj=mean, cov=cov)


def apply_beamsplitter(state: FieldState, beam: str, pixel_i: int, pixel_j: int, angle: float) -> FieldState:
    return apply_beamsplitters(state, beam, [pixel_i], [pixel_j], angle)


def apply_passive(state: FieldState, beam: str, transfer: np.ndarray) -> FieldState:
    """Apply a real transfer matrix ``transfer`` (||transfer|| <= 1) to one beam.

    Vacuum is mixed in through I - T T^T so the result is a valid channel.
    Negative eigenvalues of I - T T^T (round-off) are clipped to zero.
    """
    if beam == "both":
        raise DomainError("passive transfer acts on a single beam")
    (b,) = _beams(beam)
    t = np.asarray(transfer, dtype=float)
    if t.shape != (state.n, state.n):
        raise DomainError("transfer matrix has the wrong shape")
    xs, ps = state.block(b, "X"), state.block(b, "P")
    idx = np.r_[xs, ps]
    cov = state.cov.copy()
    rows = cov[idx]
    rows = np.vstack([t @ rows[: state.n], t @ rows[state.n:]])
    cov[idx] = rows
    cols = cov[:, idx]
    cov[:, idx] = np.hstack([cols[:, : state.n] @ t.T, cols[:, state.n:] @ t.T])
    fill_vals, fill_vecs = np.linalg.eigh(np.eye(state.n) - t @ t.T)
    fill = (fill_vecs * np.clip(fill_vals, 0.0, None)) @ fill_vecs.T
    cov[xs, xs] += fill
    cov[ps, ps] += fill
    cov = 0.5 * (cov + cov.T)
    mean = t @ state.mean(b)
    if b == "probe":
        return state.replace(mean_probe=mean, cov=cov)
    return state.replace(mean_conj=mean, cov=cov)


def quadrature_means(state: FieldState) -> np.ndarray:
    mp, mc = state.mean_probe, state.mean_conj
    return 2.0 * np.concatenate([mp.real, mp.imag, mc.real, mc.imag])


def apply_channel(state: FieldState, channel: ChannelMap, validate: bool = True) -> FieldState:
    """General Gaussian channel; validated against the complete-positivity condition."""
    if channel.m.shape != state.cov.shape:
        raise ContractError("channel size does not match the state")
    if validate:
        channel.validate()
    cov = channel.m @ state.cov @ channel.m.T + channel.added_noise
    q = channel.m @ quadrature_means(state) / 2.0
    n = state.n
    mp = q[:n] + 1j * q[n:2 * n]
    mc = q[2 * n:3 * n] + 1j * q[3 * n:]
    return state.replace(mp, mc, 0.5 * (cov + cov.T))


def symplectic_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Symplectic spectrum (one value per mode, ascending) of a positive-definite cov.

    Uses the singular values of S^1/2 Omega S^1/2, which come in equal pairs.
    """
    dim = cov.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise PhysicalityError(f"covariance is not positive definite (min eigenvalue {vals.min():.3e})")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    a = root @ symplectic_form(dim // 4) @ root
    nu2 = np.linalg.eigvalsh(a.T @ a)
    return np.sqrt(np.clip(nu2[::2], 0.0, None))


@dataclass(frozen=True)
class PhysicalityReport:
    ok: bool
    min_symplectic_eigenvalue: float


def check_physicality(state_or_cov, tol: float = PHYSICALITY_TOL) -> PhysicalityReport:
    """Minimum symplectic eigenvalue and whether it satisfies the uncertainty principle.

    For covariances that are not positive definite the reported value is the
    smallest ordinary eigenvalue (already below any physical bound).
    """
    cov = state_or_cov.cov if isinstance(state_or_cov, FieldState) else np.asarray(state_or_cov)
    scale = max(np.abs(cov).max(), 1.0)
    if np.abs(cov - cov.T).max() > SYMMETRY_RTOL * scale:
        raise ContractError("covariance matrix is not symmetric")
    try:
        nu_min = float(symplectic_eigenvalues(cov)[0])
    except PhysicalityError:
        nu_min = float(np.linalg.eigvalsh(cov).min())
    return PhysicalityReport(nu_min >= 1.0 - tol, nu_min)


def require_physical(state: FieldState, where: str) -> float:
    report = check_physicality(state)
    if not report.ok:
        raise PhysicalityError(
            f"{where}: minimum symplectic eigenvalue {report.min_symplectic_eigenvalue:.12f} < 1"
        )
    return report.min_symplectic_eigenvalue
