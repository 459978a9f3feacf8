"""Non-stationary multipath Rayleigh fading channel generator.

Each propagation path is a sum of scattered rays with uniformly distributed
arrival angles (Jakes model), an exponential power-delay profile normalized
to unit total energy, and block fading: taps are constant within a signaling
block and evolve block-by-block through per-ray Doppler shifts.  Per-link
distance attenuation uses a log-distance path-loss law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeding import stream

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FadingParams:
    """Parameters of one link's multipath fading process.

    ``num_paths`` resolvable paths at integer delay spacing ``delay_sep``
    samples, each made of ``num_waves`` scattered rays.  ``block_len`` is the
    number of samples per fading block (the DFT size in the OFDM reading),
    so one block lasts ``block_len * symbol_period`` seconds.
    """

    num_paths: int
    num_waves: int
    decay_rho_db: float = 0.2
    delay_sep: int = 1
    doppler_fd: float = 40.0
    symbol_period: float = 1e-8  # 1/T = 100 Mbps
    block_len: int = 128

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError(f"num_paths must be >= 1, got {self.num_paths}")
        if self.num_waves < 1:
            raise ValueError(f"num_waves must be >= 1, got {self.num_waves}")
        if self.doppler_fd < 0:
            raise ValueError(f"doppler_fd must be >= 0, got {self.doppler_fd}")
        if self.delay_sep < 1:
            raise ValueError(f"delay_sep must be >= 1, got {self.delay_sep}")

    @property
    def block_duration(self) -> float:
        return self.block_len * self.symbol_period


@dataclass(frozen=True)
class ChannelRealization:
    """Complex path gains of one link at one block index."""

    taps: np.ndarray  # complex, shape (L,)
    time_index: int
    delay_sep: int = 1

    @property
    def delays(self) -> np.ndarray:
        return np.arange(len(self.taps)) * self.delay_sep


@dataclass(frozen=True)
class GainTensor:
    """Per-subcarrier complex gains indexed (bs, user, subcarrier)."""

    gains: np.ndarray  # complex, shape (B, U, N)
    time_index: int

    def __post_init__(self):
        if self.gains.ndim != 3:
            raise ValueError(f"gains must be 3-D (B, U, N), got shape {self.gains.shape}")
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("gain tensor contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.gains.shape


def power_delay_profile(num_paths: int, decay_rho_db: float) -> np.ndarray:
    """Exponentially decaying mean path powers, normalized to unit sum."""
    ratio = 10.0 ** (-decay_rho_db / 10.0)
    profile = ratio ** np.arange(num_paths)
    return profile / profile.sum()


class FadingProcess:
    """One link's fading process: ray angles and phases are drawn once and
    stay fixed for the realization's lifetime, so taps at different block
    indices are correlated through the Doppler term only."""

    def __init__(self, params: FadingParams, rng: np.random.Generator):
        self.params = params
        L, M = params.num_paths, params.num_waves
        r1 = rng.random((L, M))
        r2 = rng.random((L, M))
        m = np.arange(M)[None, :]
        self._angles = TWO_PI * (m - r1) / M
        self._phases = TWO_PI * r2
        self._amp = np.sqrt(power_delay_profile(L, params.decay_rho_db) / M)
        # per-ray Doppler in radians per block
        self._omega = TWO_PI * params.doppler_fd * np.cos(self._angles) * params.block_duration

    def taps_at(self, t: int) -> ChannelRealization:
        rays = np.exp(1j * (self._omega * t + self._phases))
        taps = self._amp * rays.sum(axis=1)
        return ChannelRealization(taps=taps, time_index=int(t), delay_sep=self.params.delay_sep)


def gen_path_gains(params: FadingParams, t: int, rng: np.random.Generator) -> ChannelRealization:
    """Draw a fresh fading realization and evaluate its taps at block ``t``."""
    return FadingProcess(params, rng).taps_at(t)


def gains_dft(realization: ChannelRealization, num_subcarriers: int) -> np.ndarray:
    """Per-subcarrier gains g(n) = sum_l taps[l] * exp(-j 2 pi n l / N).

    Satisfies sum_n |g(n)|^2 / N = sum_l |taps[l]|^2.
    """
    taps = np.asarray(realization.taps)
    span = (len(taps) - 1) * realization.delay_sep + 1
    if num_subcarriers < span:
        raise ValueError(
            f"need at least {span} subcarriers for {len(taps)} taps "
            f"at spacing {realization.delay_sep}, got {num_subcarriers}"
        )
    impulse = np.zeros(num_subcarriers, dtype=complex)
    impulse[np.arange(len(taps)) * realization.delay_sep] = taps
    return np.fft.fft(impulse)


def path_loss_db(d: float, d_bar: float) -> float:
    """Large-scale attenuation in dB at distance ``d`` from the serving BS,
    for a cell of radius ``d_bar`` (both in km)."""
    if d_bar <= 0:
        raise ValueError(f"cell radius must be positive, got {d_bar}")
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    return -120.9 - 37.6 * math.log10(d / d_bar)


def path_loss_amplitude(d: float, d_bar: float, mode: str = "absolute") -> float:
    """Multiplicative amplitude factor 10^(eta/20) applied to channel gains.

    ``normalized`` drops the fixed cell-edge offset so the factor is 1 at
    d = d_bar; ``none`` disables distance attenuation entirely.
    """
    if mode == "none":
        return 1.0
    eta = path_loss_db(d, d_bar)
    if mode == "normalized":
        eta -= -120.9
    elif mode != "absolute":
        raise ValueError(f"unknown path loss mode {mode!r}")
    return 10.0 ** (eta / 20.0)


def bessel_j0(x):
    """Zero-order Bessel function of the first kind.

    Power series below |x| = 8, asymptotic cosine form with polynomial
    corrections beyond; absolute error below 1e-7 on the real line.
    Used to validate the generator's temporal autocorrelation.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    ax = np.abs(np.atleast_1d(x))
    out = np.empty_like(ax)

    small = ax < 8.0
    if np.any(small):
        xs = ax[small]
        q = xs * xs / 4.0
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for k in range(1, 40):
            term = term * (-q) / (k * k)
            total += term
            if np.all(np.abs(term) < 1e-18):
                break
        out[small] = total

    if np.any(~small):
        xl = ax[~small]
        z = 8.0 / xl
        y = z * z
        xx = xl - 0.785398164
        p0 = 1.0 + y * (-0.1098628627e-2 + y * (0.2734510407e-4
             + y * (-0.2073370639e-5 + y * 0.2093887211e-6)))
        q0 = -0.1562499995e-1 + y * (0.1430488765e-3 + y * (-0.6911147651e-5
             + y * (0.7621095161e-6 + y * (-0.934935152e-7))))
        out[~small] = np.sqrt(0.636619772 / xl) * (np.cos(xx) * p0 - z * np.sin(xx) * q0)

    return float(out[0]) if scalar else out.reshape(x.shape)


@dataclass(frozen=True)
class Geometry:
    """BS and user positions in km; each user is served by its nearest BS."""

    bs_positions: np.ndarray  # (B, 2)
    user_positions: np.ndarray  # (U, 2)
    cell_radius: float

    def __post_init__(self):
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be positive")

    @property
    def num_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    def distances(self) -> np.ndarray:
        """(B, U) matrix of BS-to-user distances in km."""
        diff = self.bs_positions[:, None, :] - self.user_positions[None, :, :]
        return np.linalg.norm(diff, axis=2)

    def serving_bs(self) -> np.ndarray:
        """Index of the nearest BS per user (ties go to the lowest index)."""
        return np.argmin(self.distances(), axis=0)

    def adjacency(self) -> np.ndarray:
        """(B, U) 0/1 connectivity matrix derived from nearest-BS serving."""
        adj = np.zeros((self.num_bs, self.num_users))
        adj[self.serving_bs(), np.arange(self.num_users)] = 1.0
        return adj


def random_geometry(num_bs: int, num_users: int, cell_radius: float,
                    rng: np.random.Generator, min_dist_frac: float = 0.05) -> Geometry:
    """BSs on a line spaced two radii apart; users uniform in a random cell's
    disk, at least ``min_dist_frac * cell_radius`` away from its center."""
    bs = np.zeros((num_bs, 2))
    bs[:, 0] = 2.0 * cell_radius * np.arange(num_bs)
    home = rng.integers(0, num_bs, size=num_users)
    radius = cell_radius * np.sqrt(rng.uniform(min_dist_frac ** 2, 1.0, size=num_users))
    angle = rng.uniform(0.0, TWO_PI, size=num_users)
    users = bs[home] + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
    return Geometry(bs_positions=bs, user_positions=users, cell_radius=cell_radius)


def single_cell_geometry(num_users: int, cell_radius: float = 1.0) -> Geometry:
    """Degenerate geometry for single-cell systems without distance effects:
    all users at the cell edge of one BS."""
    bs = np.zeros((1, 2))
    users = np.zeros((num_users, 2))
    users[:, 0] = cell_radius
    return Geometry(bs_positions=bs, user_positions=users, cell_radius=cell_radius)


def build_gain_tensor(geometry: Geometry, params, num_subcarriers: int, t: int,
                      seed: int, path_loss: str = "none") -> GainTensor:
    """Per-subcarrier gains for every (BS, user) link at block index ``t``.

    ``params`` is either one FadingParams shared by all links or a nested
    (B, U) sequence.  Each link runs an independent fading process seeded by
    (seed, b, u), so tensors for different ``t`` share ray angles and phases.
    """
    B, U = geometry.num_bs, geometry.num_users
    shared = isinstance(params, FadingParams)
    if not shared and (len(params) != B or any(len(row) != U for row in params)):
        raise ValueError(f"per-link params must have shape ({B}, {U})")
    dists = geometry.distances()
    gains = np.empty((B, U, num_subcarriers), dtype=complex)
    for b in range(B):
        for u in range(U):
            link_params = params if shared else params[b][u]
            taps = gen_path_gains(link_params, t, stream(seed, b, u))
            scale = path_loss_amplitude(dists[b, u], geometry.cell_radius, mode=path_loss)
            gains[b, u] = scale * gains_dft(taps, num_subcarriers)
    return GainTensor(gains=gains, time_index=int(t))
