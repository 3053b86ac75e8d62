"""Zadoff-Chu basic sequences, time-frequency phase-shifted pilots, received
pilot signals, and the overlap/optimality diagnostics used for scheduling."""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np

from .channel import (
    BeamOperators,
    SystemConfig,
    TBGrid,
    UserChannel,
    beam_columns,
    sft_direct_offgrid,
)
from .tensor import CyclicShiftSpec, cyclic_shift


def zc_sequence(N: int, root: int) -> np.ndarray:
    """Zadoff-Chu sequence ``exp(j 2 pi root n (n + N mod 2) / N)``."""
    if gcd(int(root), int(N)) != 1:
        raise ValueError(f"root {root} is not coprime to length {N}")
    n = np.arange(N)
    # reduce the integer numerator first so the angle stays exact for long sequences
    num = (root * n * (n + N % 2)) % N
    return np.exp(2j * np.pi * num / N)


def default_root(N: int) -> int:
    """Smallest positive root coprime to ``N`` (which is always 1)."""
    r = 1
    while gcd(r, N) != 1:
        r += 1
    return r


@dataclass(frozen=True)
class BasicSequences:
    x_f: np.ndarray
    x_t: np.ndarray
    root_f: int | None = None
    root_t: int | None = None


def make_basic_sequences(cfg: SystemConfig, root_f: int | None = None,
                         root_t: int | None = None, time_all_ones: bool = False) -> BasicSequences:
    """ZC basic pilots for both dimensions.

    ``time_all_ones`` replaces the time sequence with ones, which turns the
    time-frequency design into the frequency-only one.
    """
    rf = default_root(cfg.K) if root_f is None else root_f
    x_f = zc_sequence(cfg.K, rf)
    if time_all_ones:
        return BasicSequences(x_f, np.ones(cfg.N_p, dtype=complex), rf, None)
    rt = default_root(cfg.N_p) if root_t is None else root_t
    return BasicSequences(x_f, zc_sequence(cfg.N_p, rt), rf, rt)


def freq_shift_vector(phi: int, cfg: SystemConfig) -> np.ndarray:
    k = cfg.k0 + np.arange(cfg.K)
    return np.exp(-2j * np.pi * ((k * phi) % cfg.K) / cfg.K)


def time_shift_vector(varphi: int, cfg: SystemConfig) -> np.ndarray:
    n = np.arange(cfg.N_p)
    return np.exp(-2j * np.pi * ((n * varphi) % cfg.N_p) / cfg.N_p)


def freq_pilot(phi: int, basic: BasicSequences, cfg: SystemConfig) -> np.ndarray:
    """Frequency pilot of a UT: basic sequence times a linear phase ramp."""
    if not 0 <= phi < cfg.K:
        raise ValueError(f"frequency shift {phi} outside 0..{cfg.K - 1}")
    return freq_shift_vector(phi, cfg) * basic.x_f


def time_pilot_window(varphi: int, basic: BasicSequences, cfg: SystemConfig,
                      n_T: int | None = None) -> np.ndarray:
    """Time pilot over the ``N_p`` pilot slots of the frame starting at slot ``n_T``."""
    if not 0 <= varphi < cfg.N_p:
        raise ValueError(f"time shift {varphi} outside 0..{cfg.N_p - 1}")
    n_T = cfg.n_T if n_T is None else n_T
    return np.roll(time_shift_vector(varphi, cfg) * basic.x_t, -n_T)


@dataclass(frozen=True)
class PilotAssignment:
    """Per-UT frequency shift ``phi`` and time shift ``varphi``."""

    phi: np.ndarray
    varphi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=int).ravel())
        object.__setattr__(self, "varphi", np.asarray(self.varphi, dtype=int).ravel())
        if self.phi.shape != self.varphi.shape:
            raise ValueError("phi and varphi must have one entry per UT")

    def __len__(self) -> int:
        return self.phi.size

    @classmethod
    def zeros(cls, U: int) -> "PilotAssignment":
        return cls(np.zeros(U, int), np.zeros(U, int))

    def validate(self, cfg: SystemConfig) -> None:
        if np.any((self.phi < 0) | (self.phi >= cfg.K)):
            raise ValueError("frequency shift out of range")
        if np.any((self.varphi < 0) | (self.varphi >= cfg.N_p)):
            raise ValueError("time shift out of range")

    def delay_shift(self, u: int, grid: TBGrid) -> int:
        """Shift length along the delay (frequency-beam) axis."""
        return -int(self.phi[u]) * grid.F_tau

    def doppler_shift(self, u: int, grid: TBGrid) -> int:
        """Shift length along the Doppler (time-beam) axis."""
        return int(self.varphi[u]) * grid.F_nu


@dataclass(frozen=True)
class ReceivedPilot:
    Y: np.ndarray
    sigma_p: float
    sigma_z: float
    n_T: int


def psop_orthogonality_check(assignment: PilotAssignment, cfg: SystemConfig,
                             basic: BasicSequences | None = None,
                             tol: float = 1e-9) -> tuple[bool, float, bool]:
    """Phase-shifted orthogonality of the frequency pilots.

    Evaluates ``sum_k x_u[k] e^{-j2pi(k0+k)phi/K} conj(x_u'[k])`` for every
    pair ``u != u'`` and every lag ``|phi| < N_f`` (the delay spread occupies
    lags ``0..N_f-1``). Returns ``(orthogonal, max |trace|, sufficient)`` where
    ``orthogonal`` compares the residual with ``K * tol`` and ``sufficient``
    checks that all pairwise cyclic shift distances are at least ``N_f``.
    """
    basic = basic or make_basic_sequences(cfg)
    U = len(assignment)
    lags = np.arange(-(cfg.N_f - 1), cfg.N_f)
    pil = [freq_pilot(int(p), basic, cfg) for p in assignment.phi]
    ramps = np.stack([freq_shift_vector(int(l), cfg) for l in lags])
    worst = 0.0
    for u in range(U):
        for v in range(U):
            if u != v:
                tr = ramps @ (pil[u] * pil[v].conj())
                worst = max(worst, float(np.max(np.abs(tr))))
    d = np.abs(assignment.phi[:, None] - assignment.phi[None, :]) % cfg.K
    d = np.minimum(d, cfg.K - d)
    off = ~np.eye(U, dtype=bool)
    sufficient = bool(np.all(d[off] >= cfg.N_f))
    return worst <= cfg.K * tol, worst, sufficient


def pilot_tensor(u: int, assignment: PilotAssignment, basic: BasicSequences,
                 cfg: SystemConfig) -> np.ndarray:
    """Pilot diagonal of UT ``u`` as a ``(1, K, N_p)`` array (broadcast over antennas)."""
    xf = freq_pilot(int(assignment.phi[u]), basic, cfg)
    xt = time_pilot_window(int(assignment.varphi[u]), basic, cfg)
    return (xf[:, None] * xt[None, :])[None]


def complex_noise(shape, seed) -> np.ndarray:
    """Unit-variance circular complex Gaussian noise."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def pilot_channels(channels: list[UserChannel], cfg: SystemConfig) -> list[np.ndarray]:
    """Exact pilot-segment SFT channels from the path parameters."""
    return [sft_direct_offgrid(ch.paths, cfg, "pilot") for ch in channels]


def tfpsp_received_signal(channels, assignment: PilotAssignment, basic: BasicSequences,
                          cfg: SystemConfig, noise_seed=None,
                          noise: np.ndarray | None = None) -> ReceivedPilot:
    """Received pilot signal of all UTs plus noise of variance ``sigma_z``.

    ``channels`` is either a list of :class:`UserChannel` (the exact off-grid
    SFT channel is synthesized from the paths) or a list of ``M x K x N_p``
    SFT tensors. Pass ``noise`` (unit variance) to reuse one realization
    across noise levels; otherwise it is drawn from ``noise_seed``.
    """
    sft = _as_sft(channels, cfg)
    Y = np.zeros((cfg.M, cfg.K, cfg.N_p), dtype=complex)
    for u, H in enumerate(sft):
        Y += pilot_tensor(u, assignment, basic, cfg) * H
    Y *= np.sqrt(cfg.sigma_p)
    if cfg.sigma_z > 0:
        if noise is None:
            noise = complex_noise(Y.shape, noise_seed)
        Y = Y + np.sqrt(cfg.sigma_z) * noise
    return ReceivedPilot(Y, cfg.sigma_p, cfg.sigma_z, cfg.n_T)


def fpsp_received_signal(channels, phi, basic: BasicSequences, cfg: SystemConfig,
                         noise_seed=None, noise: np.ndarray | None = None) -> ReceivedPilot:
    """Frequency-only pilots: every pilot slot carries the same frequency pilot."""
    sft = _as_sft(channels, cfg)
    Y = np.zeros((cfg.M, cfg.K, cfg.N_p), dtype=complex)
    for u, H in enumerate(sft):
        Y += freq_pilot(int(phi[u]), basic, cfg)[None, :, None] * H
    Y *= np.sqrt(cfg.sigma_p)
    if cfg.sigma_z > 0:
        if noise is None:
            noise = complex_noise(Y.shape, noise_seed)
        Y = Y + np.sqrt(cfg.sigma_z) * noise
    return ReceivedPilot(Y, cfg.sigma_p, cfg.sigma_z, cfg.n_T)


def _as_sft(channels, cfg: SystemConfig) -> list[np.ndarray]:
    if channels and isinstance(channels[0], UserChannel):
        return pilot_channels(channels, cfg)
    return [np.asarray(H) for H in channels]


def equivalent_shift(T: np.ndarray, phi: int, varphi: int, grid: TBGrid) -> np.ndarray:
    """Cyclic shifts that phase-shifted pilots induce on a TB tensor.

    Delay axis by ``-phi * F_tau``, Doppler axis by ``varphi * F_nu``.
    """
    T = cyclic_shift(T, CyclicShiftSpec(1, -int(phi) * grid.F_tau))
    return cyclic_shift(T, CyclicShiftSpec(2, int(varphi) * grid.F_nu))


def unshift(T: np.ndarray, phi: int, varphi: int, grid: TBGrid) -> np.ndarray:
    """Inverse of :func:`equivalent_shift`."""
    T = cyclic_shift(T, CyclicShiftSpec(2, -int(varphi) * grid.F_nu))
    return cyclic_shift(T, CyclicShiftSpec(1, int(phi) * grid.F_tau))


def shifted_powers(W_list, assignment: PilotAssignment, grid: TBGrid) -> list[np.ndarray]:
    return [equivalent_shift(W, assignment.phi[u], assignment.varphi[u], grid)
            for u, W in enumerate(W_list)]


def overlap_eta(A: np.ndarray, B: np.ndarray) -> float:
    """Normalized inner product of two non-negative tensors, in ``[0, 1]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if np.any(A < 0) or np.any(B < 0):
        raise ValueError("overlap is defined for non-negative tensors")
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    if na == 0 or nb == 0:
        raise ValueError("overlap of an all-zero tensor is undefined")
    return float(min(1.0, np.sum(A * B) / (na * nb)))


def _powers(channels) -> list[np.ndarray]:
    return [ch.W if isinstance(ch, UserChannel) else np.asarray(ch) for ch in channels]


def supports_disjoint_after_shift(channels, assignment: PilotAssignment, grid: TBGrid) -> tuple[bool, float]:
    """Whether shifted power distributions are pairwise disjoint, and the max overlap."""
    Ws = shifted_powers(_powers(channels), assignment, grid)
    worst = 0.0
    for u in range(len(Ws)):
        for v in range(u + 1, len(Ws)):
            worst = max(worst, overlap_eta(Ws[u], Ws[v]))
    return worst == 0.0, worst


def mse_theoretical(channels, assignment: PilotAssignment, basic: BasicSequences,
                    cfg: SystemConfig, ops: BeamOperators, cap: int = 2048,
                    ridge: float = 1e-12) -> tuple[float, float, dict]:
    """Closed-form MSE with pilot interference and its interference-free bound.

    Works on dense ``A x A`` matrices (``A = M K N_p``), so it is guarded by
    ``cap``. A ridge of ``ridge`` is added to every covariance before solving.
    Returns ``(mse, mse_min, diagnostics)``.
    """
    A = cfg.A
    if A > cap:
        raise ValueError(f"SFT size {A} exceeds cap {cap}")
    Ws = _powers(channels)
    R = []
    for W in Ws:
        cells = np.nonzero(W)
        V = beam_columns(ops, "pilot", cells)
        R.append((V * W[cells]) @ V.conj().T)
    x = [np.broadcast_to(pilot_tensor(u, assignment, basic, cfg),
                         (cfg.M, cfg.K, cfg.N_p)).reshape(-1, order="F")
         for u in range(len(Ws))]
    noise = cfg.sigma_z / cfg.sigma_p + ridge
    eye = np.eye(A)
    mse = mse_min = 0.0
    conds = []
    for u in range(len(Ws)):
        C_u = R[u] + noise * eye
        C_all = C_u.copy()
        for v in range(len(Ws)):
            if v != u:
                d = x[u].conj() * x[v]
                C_all += (d[:, None] * R[v]) * d.conj()[None, :]
        conds.append(float(np.linalg.cond(C_all)))
        mse += float(np.real(np.trace(R[u]) - np.trace(R[u] @ np.linalg.solve(C_all, R[u]))))
        mse_min += float(np.real(np.trace(R[u]) - np.trace(R[u] @ np.linalg.solve(C_u, R[u]))))
    return mse, mse_min, {"max_condition": max(conds) if conds else 1.0}
