"""Aggregate TB channel estimation.

All UTs are folded into one sparse TB tensor (their power distributions
shifted by the pilot phases and summed), which is observed through

    Y = sqrt(sigma_p) * X (.) (V_t x3 V_f x2 V_s x1 H) + Z

with ``X`` the basic pilot diagonal. This module provides the forward and
adjoint maps of that observation (FFT and materialized versions), the exact
LMMSE oracle, the damped information-geometry iteration, per-UT recovery and
data-segment prediction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .channel import BeamOperators, SystemConfig, TBGrid, beam_columns, tb_to_sft
from .pilots import (
    BasicSequences,
    PilotAssignment,
    shifted_powers,
    time_pilot_window,
    unshift,
)
from .tensor import m_mode_product

log = logging.getLogger(__name__)

Mode = Literal["fft", "naive"]

# a sane iterate never explains the data this badly; used to stop runaway damping
DIVERGENCE_RESIDUAL = 1e4


class DivergenceError(ArithmeticError):
    """The iteration produced non-positive variances or non-finite values."""


@dataclass(frozen=True)
class AggregateModel:
    """Everything the estimator needs about the aggregate observation."""

    W: np.ndarray
    x_f: np.ndarray
    x_t: np.ndarray
    ops: BeamOperators
    sigma_p: float
    sigma_z: float

    @property
    def grid(self) -> TBGrid:
        return self.ops.grid

    @property
    def cfg(self) -> SystemConfig:
        return self.ops.grid.cfg

    @property
    def mask(self) -> np.ndarray:
        return self.W > 0

    @property
    def A(self) -> int:
        return self.cfg.A

    @property
    def pilot(self) -> np.ndarray:
        """Scaled pilot diagonal of shape ``(1, K, N_p)``."""
        return np.sqrt(self.sigma_p) * (self.x_f[:, None] * self.x_t[None, :])[None]


def build_aggregate_model(W_list, assignment: PilotAssignment, basic: BasicSequences,
                          ops: BeamOperators, sigma_z: float | None = None) -> AggregateModel:
    """Sum of the pilot-shifted power distributions, observed with the basic pilots."""
    cfg = ops.grid.cfg
    W = np.sum(shifted_powers(W_list, assignment, ops.grid), axis=0)
    x_t = time_pilot_window(0, basic, cfg)
    return AggregateModel(
        W=W, x_f=basic.x_f, x_t=x_t, ops=ops, sigma_p=cfg.sigma_p,
        sigma_z=cfg.sigma_z if sigma_z is None else sigma_z,
    )


def _check(T: np.ndarray, shape, what: str):
    if T.shape != tuple(shape):
        raise ValueError(f"{what} has shape {T.shape}, expected {tuple(shape)}")


def _row_signs(q: np.ndarray) -> np.ndarray:
    return np.where(q % 2 == 0, 1.0, -1.0)


def forward_operator(B: np.ndarray, model: AggregateModel, mode: Mode = "fft") -> np.ndarray:
    """Noise-free pilot observation of a TB tensor."""
    g = model.grid
    cfg = g.cfg
    _check(B, g.shape, "TB tensor")
    if mode == "naive":
        return model.pilot * tb_to_sft(B, model.ops, "pilot")
    if mode != "fft":
        raise ValueError(f"unknown operator mode {mode!r}")
    m = np.arange(cfg.M)
    k = (cfg.k0 + np.arange(cfg.K)) % g.N_tau
    q = cfg.n_T + np.arange(cfg.N_p)
    # angle: shifted DFT, keep the first M outputs; (-1)^m undoes the half-grid offset
    X = np.fft.fft(B, axis=0)[: cfg.M] * _row_signs(m)[:, None, None]
    X = np.fft.fft(X, axis=1)[:, k]
    # Doppler: inverse DFT rows n_T..n_T+N_p-1 (cyclic), same half-grid sign trick
    X = np.fft.ifft(X, axis=2)[:, :, q % g.N_nu] * (g.N_nu * _row_signs(q))[None, None, :]
    return model.pilot * X


def adjoint_operator(C: np.ndarray, model: AggregateModel, mode: Mode = "fft") -> np.ndarray:
    """Adjoint of :func:`forward_operator`."""
    g = model.grid
    cfg = g.cfg
    _check(C, (cfg.M, cfg.K, cfg.N_p), "observation")
    C = np.conj(model.pilot) * C
    if mode == "naive":
        ops = model.ops
        X = m_mode_product(C, ops.V_s.conj().T, 0)
        X = m_mode_product(X, ops.V_f.conj().T, 1)
        return m_mode_product(X, ops.V_t_pilot.conj().T, 2)
    if mode != "fft":
        raise ValueError(f"unknown operator mode {mode!r}")
    m = np.arange(cfg.M)
    k = (cfg.k0 + np.arange(cfg.K)) % g.N_tau
    q = cfg.n_T + np.arange(cfg.N_p)
    Z = np.zeros((cfg.M, cfg.K, g.N_nu), dtype=complex)
    Z[:, :, q % g.N_nu] = C * _row_signs(q)[None, None, :]
    X = np.fft.fft(Z, axis=2)
    Z = np.zeros((cfg.M, g.N_tau, g.N_nu), dtype=complex)
    Z[:, k] = X
    X = np.fft.ifft(Z, axis=1) * g.N_tau
    Z = np.zeros(g.shape, dtype=complex)
    Z[: cfg.M] = X * _row_signs(m)[:, None, None]
    return np.fft.ifft(Z, axis=0) * g.N_theta


def operator_matrix(model: AggregateModel, cells=None) -> np.ndarray:
    """Columns of the observation map for the given cells (default: support)."""
    cells = np.nonzero(model.mask) if cells is None else cells
    V = beam_columns(model.ops, "pilot", cells)
    return model.pilot.repeat(model.cfg.M, axis=0).reshape(-1, 1, order="F") * V


def mmse_oracle(Y: np.ndarray, model: AggregateModel, cap: int = 4096) -> np.ndarray:
    """Exact LMMSE estimate ``W A^H (A W A^H + sigma_z I)^{-1} Y`` by a dense solve."""
    A = model.A
    if A > cap:
        raise ValueError(f"observation size {A} exceeds the dense-solve cap {cap}")
    cells = np.nonzero(model.mask)
    Am = operator_matrix(model, cells)
    w = model.W[cells]
    C = (Am * w) @ Am.conj().T + model.sigma_z * np.eye(A)
    y = Y.reshape(-1, order="F")
    est = np.zeros(model.grid.shape, dtype=complex)
    est[cells] = w * (Am.conj().T @ np.linalg.solve(C, y))
    return est


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings of the information-geometry iteration.

    ``damping`` is the per-observation step ``alpha`` in ``(0, 1]``. Setting
    ``damping_product`` instead fixes ``alpha * A`` and derives ``alpha``
    from the observation size.
    """

    damping: float | None = 0.2
    damping_product: float | None = None
    t_max: int = 300
    tol: float = 1e-6
    sonp_variant: Literal["squared", "literal"] = "squared"
    fast_path: Mode = "fft"

    def __post_init__(self):
        if (self.damping is None) == (self.damping_product is None):
            raise ValueError("set exactly one of damping and damping_product")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.damping_product is not None and not 0 < self.damping_product <= 1:
            raise ValueError("damping_product must lie in (0, 1]")
        if self.sonp_variant not in ("squared", "literal"):
            raise ValueError(f"unknown sonp_variant {self.sonp_variant!r}")
        if self.fast_path not in ("fft", "naive"):
            raise ValueError(f"unknown fast_path {self.fast_path!r}")
        if self.t_max < 1 or self.tol <= 0:
            raise ValueError("t_max must be >= 1 and tol > 0")

    def alpha(self, A: int) -> float:
        return self.damping if self.damping is not None else self.damping_product / A


@dataclass
class IGAState:
    """Natural parameters on the support (flat, in ``np.nonzero`` order).

    ``D`` is the first-order parameter, ``F`` the second-order one.
    """

    D: np.ndarray
    F: np.ndarray
    t: int = 0
    alpha: float = 0.0
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, model: AggregateModel, alpha: float) -> "IGAState":
        n = int(np.count_nonzero(model.mask))
        return cls(np.zeros(n, complex), np.zeros(n), 0, alpha, [])


def _variances(w: np.ndarray, F: np.ndarray, t: int) -> np.ndarray:
    prec = 1.0 / w - F
    if not np.all(np.isfinite(prec)) or np.any(prec <= 0):
        raise DivergenceError(f"non-positive variance at iteration {t}")
    return 1.0 / prec


def iga_step(state: IGAState, Y: np.ndarray, model: AggregateModel,
             cfg: EstimatorConfig, Yhat: np.ndarray | None = None) -> IGAState:
    """One damped update of the natural parameters.

    ``P = 1/(1/W - F)`` are the current per-cell variances and
    ``gamma = 1/(sigma_z + sigma_p * sum P)`` the scalar precision of a single
    observation given the others. The first-order update averages the
    per-observation posterior means; the second-order update matches their
    variances ``P - sigma_p * gamma * P^2`` (or ``P - gamma`` for the literal
    variant).
    """
    cells = np.nonzero(model.mask)
    w = model.W[cells]
    A = model.A
    a = state.alpha
    s = model.sigma_p
    P = _variances(w, state.F, state.t)
    gamma = 1.0 / (model.sigma_z + s * P.sum())
    B = np.zeros(model.grid.shape, dtype=complex)
    B[cells] = P * state.D
    r = Y - forward_operator(B, model, cfg.fast_path)
    g = adjoint_operator(r, model, cfg.fast_path)[cells]
    shrink = 1.0 - s * gamma * P
    D = (a * (A - 1) / A) * (A * state.D + gamma * g) / shrink + (1 - a * A) * state.D
    v = P - s * gamma * P * P if cfg.sonp_variant == "squared" else P - gamma
    if np.any(v <= 0):
        raise DivergenceError(f"non-positive observation variance at iteration {state.t}")
    F = a * (A - 1) * (1.0 / w - 1.0 / v) + (1 - a * A) * state.F
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(F))):
        raise DivergenceError(f"non-finite parameters at iteration {state.t}")
    change = np.linalg.norm(D - state.D) / max(np.linalg.norm(state.D), 1e-30)
    res = float(np.linalg.norm(r) / max(np.linalg.norm(Y), 1e-30))
    if res > DIVERGENCE_RESIDUAL:
        raise DivergenceError(f"residual grew to {res:.3g} x |Y| at iteration {state.t}")
    return IGAState(D, F, state.t + 1, a, state.history + [(float(change), res)])


def readout(state: IGAState, model: AggregateModel) -> np.ndarray:
    """Mean estimate on the full TB grid from the scaled natural parameters."""
    A = model.A
    cells = np.nonzero(model.mask)
    w = model.W[cells]
    P0 = _variances(w, A / (A - 1) * state.F, state.t)
    est = np.zeros(model.grid.shape, dtype=complex)
    est[cells] = P0 * (A / (A - 1)) * state.D
    return est


@dataclass
class IGAResult:
    estimate: np.ndarray
    iterations: int
    converged: bool
    final_change: float
    final_residual: float
    history: list


def iga_run(Y: np.ndarray, model: AggregateModel, cfg: EstimatorConfig = EstimatorConfig()) -> IGAResult:
    """Iterate until the relative change of ``D`` drops below ``tol`` or ``t_max``."""
    state = IGAState.initial(model, cfg.alpha(model.A))
    converged = False
    for _ in range(cfg.t_max):
        state = iga_step(state, Y, model, cfg)
        if state.history[-1][0] < cfg.tol:
            converged = True
            break
    if not converged:
        log.info("IGA stopped after %d iterations without converging", state.t)
    est = readout(state, model)
    ch, res = state.history[-1] if state.history else (0.0, 0.0)
    return IGAResult(est, state.t, converged, ch, res, state.history)


def recover_per_ut(H_hat: np.ndarray, model: AggregateModel, W_list,
                   assignment: PilotAssignment) -> list[np.ndarray]:
    """Split an aggregate estimate into per-UT TB estimates.

    Normalize by the aggregate power, undo each UT's pilot shift, and weight
    by that UT's own power distribution.
    """
    G = np.zeros_like(H_hat)
    m = model.mask
    G[m] = H_hat[m] / model.W[m]
    g = model.grid
    return [W * unshift(G, assignment.phi[u], assignment.varphi[u], g)
            for u, W in enumerate(W_list)]


def per_ut_mmse_oracle(Y: np.ndarray, W_list, assignment: PilotAssignment,
                       basic: BasicSequences, ops: BeamOperators, cap: int = 4096) -> list[np.ndarray]:
    """Per-UT LMMSE estimates built from the SFT-domain covariances.

    ``H_u = R_u^TB V^H X_u^H (sum_v X_v R_v X_v^H + sigma_z/sigma_p I)^{-1} Y / sqrt(sigma_p)``
    with ``R_v`` the SFT covariance of UT ``v`` and ``X_v`` its pilot diagonal.
    Independent of the aggregate/shift machinery.
    """
    from .pilots import pilot_tensor

    cfg = ops.grid.cfg
    A = cfg.A
    if A > cap:
        raise ValueError(f"observation size {A} exceeds the dense-solve cap {cap}")
    cols, xs = [], []
    C = (cfg.sigma_z / cfg.sigma_p) * np.eye(A, dtype=complex)
    for u, W in enumerate(W_list):
        cells = np.nonzero(W)
        V = beam_columns(ops, "pilot", cells)
        x = np.broadcast_to(pilot_tensor(u, assignment, basic, cfg),
                            (cfg.M, cfg.K, cfg.N_p)).reshape(-1, order="F")
        XV = x[:, None] * V
        C += (XV * W[cells]) @ XV.conj().T
        cols.append((cells, XV, W[cells]))
    z = np.linalg.solve(C, Y.reshape(-1, order="F")) / np.sqrt(cfg.sigma_p)
    out = []
    for cells, XV, w in cols:
        H = np.zeros(ops.grid.shape, dtype=complex)
        H[cells] = w * (XV.conj().T @ z)
        out.append(H)
    return out


def predict_data_segment(H_tb: np.ndarray, ops: BeamOperators) -> np.ndarray:
    """SFT channel over the last ``N_b`` symbols of the frame."""
    cfg = ops.grid.cfg
    X = m_mode_product(H_tb, ops.V_s, 0)
    X = m_mode_product(X, ops.V_f, 1)
    return m_mode_product(X, ops.V_t_full[cfg.N_s - cfg.N_b:], 2)


def stale_data_segment(H_tb: np.ndarray, ops: BeamOperators) -> np.ndarray:
    """Baseline: the last pilot-slot estimate held over the data segment."""
    cfg = ops.grid.cfg
    last = tb_to_sft(H_tb, ops, "pilot")[:, :, -1:]
    return np.repeat(last, cfg.N_b, axis=2)
