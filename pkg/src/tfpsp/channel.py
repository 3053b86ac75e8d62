"""Triple-beam channel model: system configuration, grids, beam matrices,
per-UT channel tensors and the synthetic multipath generator.

Axis convention for TB tensors: ``(angle, delay, Doppler)`` with sizes
``(N_theta, N_tau, N_nu)``. SFT tensors are ``(antenna, subcarrier, symbol)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Literal

import numpy as np

from .tensor import CANONICAL_ORDER, m_mode_product, shift_matrix

LIGHT_SPEED = 299_792_458.0

Which = Literal["full", "pilot"]


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class SystemConfig:
    """Scalar description of one cell, one frame.

    Derived quantities (``N_f``, ``N_d``, timing) are properties so they can
    never go stale.
    """

    M: int = 16
    U: int = 24
    f_c: float = 5.8e9
    N_c: int = 256
    N_g: int = 16
    K: int = 48
    k0: int = 104
    delta_f: float = 15e3
    N_b: int = 4
    N_p: int = 4
    v_speed: float = 3 / 3.6
    sigma_p: float = 1.0
    sigma_z: float = 0.01
    n_T: int = 0

    def __post_init__(self):
        for name in ("M", "U", "N_c", "K", "N_b", "N_p"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.N_g < 0 or self.k0 < 0 or self.n_T < 0:
            raise ConfigError("N_g, k0 and n_T must be non-negative")
        if self.k0 + self.K > self.N_c:
            raise ConfigError(f"k0 + K = {self.k0 + self.K} exceeds N_c = {self.N_c}")
        if self.f_c <= 0 or self.delta_f <= 0 or self.v_speed < 0:
            raise ConfigError("f_c, delta_f must be positive and v_speed non-negative")
        if self.sigma_p <= 0 or self.sigma_z < 0:
            raise ConfigError("sigma_p must be positive and sigma_z non-negative")
        if self.nu_max > 0 and not self.N_b < 1.0 / (self.T_sym * self.nu_max):
            raise ConfigError(
                f"N_b = {self.N_b} violates N_b < 1/(T_sym nu_max) = "
                f"{1.0 / (self.T_sym * self.nu_max):.3f}"
            )

    @property
    def T_s(self) -> float:
        return 1.0 / (self.N_c * self.delta_f)

    @property
    def T_sym(self) -> float:
        return (self.N_c + self.N_g) * self.T_s

    @property
    def N_s(self) -> int:
        return self.N_b * self.N_p

    @property
    def wavelength(self) -> float:
        return LIGHT_SPEED / self.f_c

    @property
    def nu_max(self) -> float:
        return 2.0 * self.v_speed / self.wavelength

    @property
    def N_f(self) -> int:
        """Delay-spread width in frequency-beam units at unit fine factor."""
        return -(-self.N_g * self.K // self.N_c)

    @property
    def N_d(self) -> int:
        """Doppler-spread width in time-beam units at unit fine factor (at least 1)."""
        return max(1, ceil(self.nu_max * self.T_sym * self.N_s - 1e-12))

    @property
    def A(self) -> int:
        return self.M * self.K * self.N_p


@dataclass(frozen=True)
class TBGrid:
    """Sampled angle/delay/Doppler grids for a configuration and fine factors."""

    cfg: SystemConfig
    F_theta: int = 2
    F_tau: int = 2
    F_nu: int = 2

    def __post_init__(self):
        if min(self.F_theta, self.F_tau, self.F_nu) < 1:
            raise ConfigError("fine factors must be >= 1")
        if self.N_theta % 2 or self.N_nu % 2:
            raise ConfigError(
                f"N_theta = {self.N_theta} and N_nu = {self.N_nu} must both be even"
            )

    @property
    def N_theta(self) -> int:
        return self.F_theta * self.cfg.M

    @property
    def N_tau(self) -> int:
        return self.F_tau * self.cfg.K

    @property
    def N_nu(self) -> int:
        return self.F_nu * self.cfg.N_p

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N_theta, self.N_tau, self.N_nu)

    @property
    def theta(self) -> np.ndarray:
        n = np.arange(self.N_theta)
        return (n - self.N_theta / 2) / self.N_theta

    @property
    def tau(self) -> np.ndarray:
        return np.arange(self.N_tau) / (self.N_tau * self.cfg.delta_f)

    @property
    def nu(self) -> np.ndarray:
        n = np.arange(self.N_nu)
        return (n - self.N_nu / 2) / (self.N_nu * self.cfg.N_b * self.cfg.T_sym)

    def delay_window(self) -> tuple[int, int]:
        """Half-open index range that holds every delay support."""
        return 0, self.F_tau * self.cfg.N_f

    def doppler_window(self) -> tuple[float, float]:
        """Half-open range ``[lo, hi)`` that holds every Doppler support."""
        w = self.cfg.N_d * self.F_nu
        return (self.N_nu - w) / 2, (self.N_nu + w) / 2


@dataclass
class PathSet:
    """Multipath parameters of one UT. ``powers`` are the expected ``|gain|^2``."""

    gains: np.ndarray
    theta: np.ndarray
    tau: np.ndarray
    nu: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=complex).ravel()
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        self.tau = np.asarray(self.tau, dtype=float).ravel()
        self.nu = np.asarray(self.nu, dtype=float).ravel()
        self.powers = np.asarray(self.powers, dtype=float).ravel()
        n = self.gains.size
        if any(a.size != n for a in (self.theta, self.tau, self.nu, self.powers)):
            raise ConfigError("path arrays must have equal length")

    def __len__(self) -> int:
        return self.gains.size

    @classmethod
    def empty(cls) -> "PathSet":
        z = np.zeros(0)
        return cls(z, z, z, z, z)


@dataclass
class UserChannel:
    paths: PathSet
    H_tb: np.ndarray
    W: np.ndarray

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of the TB cells carrying power."""
        return self.W > 0

    @property
    def support_indices(self) -> np.ndarray:
        """Flat indices of the support in canonical order."""
        return np.flatnonzero(self.support.ravel(order=CANONICAL_ORDER))


@dataclass(frozen=True)
class BeamOperators:
    """Spatial, frequency and time beam matrices on a TB grid."""

    V_s: np.ndarray
    V_f: np.ndarray
    V_t_full: np.ndarray
    V_t_pilot: np.ndarray
    grid: TBGrid = field(repr=False)

    def V_t(self, which: Which) -> np.ndarray:
        if which == "full":
            return self.V_t_full
        if which == "pilot":
            return self.V_t_pilot
        raise ValueError(f"unknown time segment {which!r}")


def _snap(t: np.ndarray, n: int) -> np.ndarray:
    # nearest integer, exact halves go down; tiny slack absorbs float noise
    idx = np.floor(np.asarray(t, dtype=float) + 0.5 - 1e-9).astype(int)
    return np.clip(idx, 0, n - 1)


def snap_path_to_grid(theta, tau, nu, grid: TBGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest grid indices (ties to the lower index) for path parameters.

    Angles are snapped on the circle (steering vectors have period 1 in the
    directional cosine), so values just below +0.5 go to the -0.5 cell.
    """
    cfg = grid.cfg
    t = np.asarray(theta, dtype=float) * grid.N_theta + grid.N_theta / 2
    i = np.floor(t + 0.5 - 1e-9).astype(int) % grid.N_theta
    j = _snap(np.asarray(tau) * grid.N_tau * cfg.delta_f, grid.N_tau)
    k = _snap(np.asarray(nu) * grid.N_nu * cfg.N_b * cfg.T_sym + grid.N_nu / 2, grid.N_nu)
    return i, j, k


def _dirichlet_power(delta: np.ndarray, L: int) -> np.ndarray:
    """``|sum_l exp(j 2 pi l delta) / L|^2`` for offsets measured in cycles."""
    s = np.sin(np.pi * delta)
    out = np.ones_like(delta)
    nz = np.abs(s) > 1e-12
    out[nz] = (np.sin(np.pi * L * delta[nz]) / (L * s[nz])) ** 2
    return out


def leakage_power(paths: PathSet, grid: TBGrid, floor: float = 1e-2) -> np.ndarray:
    """Expected TB power including beam leakage of off-grid paths.

    Each path spreads its power over the grid with the squared Dirichlet
    kernels of the array (``M``), the band (``K``) and the pilot window
    (``N_p``), divided by the fine factors so the total is preserved. Cells
    below ``floor`` times the path's peak are dropped, and so are cells outside
    the delay and Doppler windows.
    """
    cfg = grid.cfg
    W = np.zeros(grid.shape)
    d_lo, d_hi = grid.delay_window()
    v_lo, v_hi = grid.doppler_window()
    j = np.arange(grid.N_tau)
    k = np.arange(grid.N_nu)
    inside = ((j >= d_lo) & (j < d_hi))[None, :, None] & ((k >= v_lo) & (k < v_hi))[None, None, :]
    for p in range(len(paths)):
        a = _dirichlet_power(paths.theta[p] - grid.theta, cfg.M) / grid.F_theta
        f = _dirichlet_power((paths.tau[p] - grid.tau) * cfg.delta_f, cfg.K) / grid.F_tau
        t = _dirichlet_power((paths.nu[p] - grid.nu) * cfg.N_b * cfg.T_sym, cfg.N_p) / grid.F_nu
        cell = a[:, None, None] * f[None, :, None] * t[None, None, :]
        cell[cell < floor * cell.max()] = 0.0
        W += paths.powers[p] * cell * inside
    return W


def build_tb_channel(paths: PathSet, grid: TBGrid, power_model: str = "snapped",
                     leakage_floor: float = 1e-2) -> UserChannel:
    """Accumulate path gains (and powers) on their snapped TB cells.

    ``power_model="leakage"`` replaces the snapped power map with
    :func:`leakage_power`; the channel tensor itself is unchanged.
    """
    H = np.zeros(grid.shape, dtype=complex)
    W = np.zeros(grid.shape)
    idx = snap_path_to_grid(paths.theta, paths.tau, paths.nu, grid)
    np.add.at(H, idx, paths.gains)
    if power_model == "snapped":
        np.add.at(W, idx, paths.powers)
    elif power_model == "leakage":
        W = leakage_power(paths, grid, leakage_floor)
    else:
        raise ValueError(f"unknown power model {power_model!r}")
    return UserChannel(paths=paths, H_tb=H, W=W)


def _symbol_times(cfg: SystemConfig, which: Which) -> np.ndarray:
    """Symbol offsets (in units of T_sym) from the frame start."""
    s = np.arange(cfg.N_s) if which == "full" else np.arange(cfg.N_p) * cfg.N_b
    return cfg.n_T * cfg.N_b + s


def steering_beam_matrices(grid: TBGrid) -> dict[str, np.ndarray]:
    """Beam matrices sampled directly from the steering-vector formulas."""
    cfg = grid.cfg
    m = np.arange(cfg.M)[:, None]
    k = (cfg.k0 + np.arange(cfg.K))[:, None]
    V_s = np.exp(-2j * np.pi * m * grid.theta[None, :])
    V_f = np.exp(-2j * np.pi * k * cfg.delta_f * grid.tau[None, :])
    out = {"V_s": V_s, "V_f": V_f}
    for which in ("full", "pilot"):
        t = _symbol_times(cfg, which)[:, None] * cfg.T_sym
        out[f"V_t_{which}"] = np.exp(2j * np.pi * grid.nu[None, :] * t)
    return out


def dft_matrix(N: int) -> np.ndarray:
    n = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(n, n) / N)


def dft_beam_matrices(grid: TBGrid) -> dict[str, np.ndarray]:
    """Beam matrices built as row-selected, column-shifted DFT matrices."""
    cfg = grid.cfg
    Nt, Nf, Nv = grid.shape
    V_s = (dft_matrix(Nt) @ shift_matrix(Nt, Nt // 2))[: cfg.M]
    V_f = dft_matrix(Nf)[(cfg.k0 + np.arange(cfg.K)) % Nf]
    Vt = shift_matrix(Nv, cfg.n_T) @ dft_matrix(Nv).conj() @ shift_matrix(Nv, Nv // 2)
    return {"V_s": V_s, "V_f": V_f, "V_t_pilot": Vt[: cfg.N_p]}


def build_beam_operators(grid: TBGrid) -> BeamOperators:
    """Beam matrices for a grid.

    The angle, frequency and pilot-time matrices come from the DFT
    construction; the full-frame time matrix has no DFT form (its rows are
    fractional frequencies) and comes from the steering formula.
    """
    d = dft_beam_matrices(grid)
    s = steering_beam_matrices(grid)
    return BeamOperators(d["V_s"], d["V_f"], s["V_t_full"], d["V_t_pilot"], grid)


def tb_to_sft(H_tb: np.ndarray, ops: BeamOperators, which: Which = "pilot") -> np.ndarray:
    """Synthesize the SFT channel from a TB tensor via three mode products."""
    if H_tb.shape != ops.grid.shape:
        raise ValueError(f"TB tensor shape {H_tb.shape} != grid {ops.grid.shape}")
    X = m_mode_product(H_tb, ops.V_s, 0)
    X = m_mode_product(X, ops.V_f, 1)
    return m_mode_product(X, ops.V_t(which), 2)


def sft_direct_offgrid(paths: PathSet, cfg: SystemConfig, which: Which = "pilot") -> np.ndarray:
    """Continuous-parameter SFT channel, no grid snapping."""
    m = np.arange(cfg.M)
    k = cfg.k0 + np.arange(cfg.K)
    t = _symbol_times(cfg, which) * cfg.T_sym
    a = np.exp(-2j * np.pi * np.outer(m, paths.theta))
    f = np.exp(-2j * np.pi * np.outer(k, paths.tau) * cfg.delta_f)
    d = np.exp(2j * np.pi * np.outer(t, paths.nu))
    return np.einsum("p,mp,kp,tp->mkt", paths.gains, a, f, d)


def beam_columns(ops: BeamOperators, which: Which, cells: tuple) -> np.ndarray:
    """Triple-beam vectors of the given cells as columns of an ``A x S`` matrix.

    Rows follow the canonical flattening of ``(antenna, subcarrier, symbol)``.
    """
    i, j, l = (np.asarray(c) for c in cells)
    V = np.einsum("ms,ks,rs->mkrs", ops.V_s[:, i], ops.V_f[:, j], ops.V_t(which)[:, l])
    return V.reshape(int(np.prod(V.shape[:3])), i.size, order=CANONICAL_ORDER)


def covariance_from_power(
    W: np.ndarray, ops: BeamOperators, which: Which = "pilot", cap: int = 2048
) -> np.ndarray:
    """SFT covariance as a square 6-mode tensor. Tiny instances only."""
    cfg = ops.grid.cfg
    T = ops.V_t(which).shape[0]
    A = cfg.M * cfg.K * T
    if A > cap:
        raise ValueError(f"SFT size {A} exceeds covariance cap {cap}")
    cells = np.nonzero(W)
    V = beam_columns(ops, which, cells)
    R = (V * W[cells]) @ V.conj().T
    return R.reshape((cfg.M, cfg.K, T) * 2, order=CANONICAL_ORDER)


def path_powers(n_paths: int, decay: float) -> np.ndarray:
    """Exponentially decaying per-path powers that sum to one."""
    p = np.exp(-decay * np.arange(n_paths))
    return p / p.sum()


def delay_limit(cfg: SystemConfig) -> float:
    """Largest drawn delay: inside the CP and snapping below ``F_tau * N_f`` for any F."""
    return min(cfg.N_g * cfg.T_s, (cfg.N_f - 0.5) / (cfg.K * cfg.delta_f))


def doppler_limit(cfg: SystemConfig) -> float:
    """Largest drawn |Doppler| keeping snapped cells in the centred window for any F."""
    slack = 1.0 if cfg.N_d % 2 == 0 else 0.5
    return min(cfg.nu_max / 2, (cfg.N_d - slack) / (2 * cfg.N_s * cfg.T_sym))


def draw_paths(cfg: SystemConfig, n_paths: int, rng: np.random.Generator, decay: float = 0.5,
               angle_spread: float | None = None) -> PathSet:
    """Random path set for one UT.

    With ``angle_spread`` set, directional cosines are drawn uniformly in a
    window of that width around a per-UT mean direction (wrapped into
    ``[-0.5, 0.5)``) instead of independently over the whole range.
    """
    p = path_powers(n_paths, decay)
    gains = np.sqrt(p / 2) * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    if angle_spread is None:
        theta = rng.uniform(-0.5, 0.5, n_paths)
    else:
        centre = rng.uniform(-0.5, 0.5)
        theta = centre + angle_spread * rng.uniform(-0.5, 0.5, n_paths)
        theta = (theta + 0.5) % 1.0 - 0.5
    tau = rng.uniform(0.0, delay_limit(cfg), n_paths)
    lim = doppler_limit(cfg)
    nu = np.clip(cfg.nu_max / 2 * np.cos(rng.uniform(0, 2 * np.pi, n_paths)), -lim, lim)
    return PathSet(gains, theta, tau, nu, p)


def snap_paths(paths: PathSet, grid: TBGrid) -> PathSet:
    """Move every path parameter onto its nearest grid value."""
    i, j, k = snap_path_to_grid(paths.theta, paths.tau, paths.nu, grid)
    return PathSet(paths.gains, grid.theta[i], grid.tau[j], grid.nu[k], paths.powers)


def synthesize_scenario(
    cfg: SystemConfig,
    grid: TBGrid,
    n_paths: int = 4,
    on_grid: bool = False,
    seed=0,
    decay: float = 0.5,
    angle_spread: float | None = None,
    power_model: str = "snapped",
    leakage_floor: float = 1e-2,
) -> list[UserChannel]:
    """Draw ``cfg.U`` independent UT channels.

    Gains are circular Gaussian with exponentially decaying powers, angles are
    uniform in the directional-cosine domain, delays uniform inside the CP and
    Dopplers follow a Jakes-type cosine law. ``seed`` is anything accepted by
    ``numpy.random.default_rng``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(cfg.U):
        paths = draw_paths(cfg, n_paths, rng, decay, angle_spread)
        if on_grid:
            paths = snap_paths(paths, grid)
        out.append(build_tb_channel(paths, grid, power_model, leakage_floor))
    return out


def empirical_power(draws: list[np.ndarray]) -> np.ndarray:
    """Per-cell mean power over TB channel draws (testing aid)."""
    return np.mean([np.abs(h) ** 2 for h in draws], axis=0)
