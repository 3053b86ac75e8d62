import time

import numpy as np
import pytest

from conftest import crandn, tiny_config
from tfpsp.channel import (
    PathSet,
    SystemConfig,
    TBGrid,
    build_beam_operators,
    build_tb_channel,
    sft_direct_offgrid,
    synthesize_scenario,
    tb_to_sft,
)
from tfpsp.estimator import (
    DivergenceError,
    EstimatorConfig,
    IGAState,
    _variances,
    adjoint_operator,
    build_aggregate_model,
    forward_operator,
    iga_run,
    iga_step,
    mmse_oracle,
    operator_matrix,
    predict_data_segment,
    readout,
    recover_per_ut,
    stale_data_segment,
)
from tfpsp.pilots import PilotAssignment, make_basic_sequences, tfpsp_received_signal


def make_model(cfg, grid, W=None, U=1, seed=0):
    grid = TBGrid(cfg, grid.F_theta, grid.F_tau, grid.F_nu)
    ops = build_beam_operators(grid)
    basic = make_basic_sequences(cfg)
    if W is None:
        W = [c.W for c in synthesize_scenario(cfg, grid, 3, True, seed)][:U]
    return build_aggregate_model(W, PilotAssignment.zeros(len(W)), basic, ops), ops, basic


@pytest.fixture
def small():
    cfg = SystemConfig(M=8, U=2, N_c=32, N_g=4, K=12, k0=8, N_b=4, N_p=4, sigma_z=0.01)
    grid = TBGrid(cfg, 2, 2, 2)
    return cfg, grid


def test_operators_zero_and_unit_cell(small):
    cfg, grid = small
    model, ops, basic = make_model(cfg, grid)
    assert not np.any(forward_operator(np.zeros(grid.shape, complex), model))
    assert not np.any(adjoint_operator(np.zeros((cfg.M, cfg.K, cfg.N_p), complex), model))
    B = np.zeros(grid.shape, complex)
    B[3, 5, 6] = 1.0
    v = np.einsum("m,k,n->mkn", ops.V_s[:, 3], ops.V_f[:, 5], ops.V_t_pilot[:, 6])
    np.testing.assert_allclose(forward_operator(B, model), model.pilot * v, atol=1e-12)
    np.testing.assert_allclose(np.abs(model.pilot), np.sqrt(cfg.sigma_p), atol=1e-12)


@pytest.mark.parametrize("n_T", [0, 3])
def test_fft_matches_naive_and_adjoint(small, rng, n_T):
    cfg, _ = small
    cfg = SystemConfig(**{**cfg.__dict__, "n_T": n_T})
    grid = TBGrid(cfg, 2, 3, 2)
    model, _, _ = make_model(cfg, grid)
    for _ in range(10):
        B = crandn(rng, *grid.shape)
        C = crandn(rng, cfg.M, cfg.K, cfg.N_p)
        fB = forward_operator(B, model, "fft")
        np.testing.assert_allclose(fB, forward_operator(B, model, "naive"), atol=1e-10)
        aC = adjoint_operator(C, model, "fft")
        np.testing.assert_allclose(aC, adjoint_operator(C, model, "naive"), atol=1e-10)
        assert abs(np.vdot(C, fB) - np.vdot(aC, B)) <= 1e-10 * abs(np.vdot(C, fB))
    B2 = crandn(rng, *grid.shape)
    np.testing.assert_allclose(forward_operator(2 * B + 3j * B2, model),
                               2 * forward_operator(B, model) + 3j * forward_operator(B2, model), atol=1e-10)


def test_operator_shape_errors(small):
    cfg, grid = small
    model, _, _ = make_model(cfg, grid)
    with pytest.raises(ValueError):
        forward_operator(np.zeros((2, 2, 2)), model)
    with pytest.raises(ValueError):
        adjoint_operator(np.zeros((2, 2, 2)), model)
    with pytest.raises(ValueError):
        forward_operator(np.zeros(grid.shape), model, "slow")


def test_operator_matrix_matches_forward(small, rng):
    cfg, grid = small
    model, _, _ = make_model(cfg, grid)
    cells = np.nonzero(model.mask)
    x = crandn(rng, cells[0].size)
    B = np.zeros(grid.shape, complex)
    B[cells] = x
    y = operator_matrix(model, cells) @ x
    np.testing.assert_allclose(y, forward_operator(B, model).reshape(-1, order="F"), atol=1e-10)


def test_mmse_limits(small):
    cfg, grid = small
    W = np.zeros(grid.shape)
    W[2, 1, 4] = 0.8
    h = 0.3 - 0.4j
    model, ops, _ = make_model(SystemConfig(**{**cfg.__dict__, "sigma_z": 1e-6}), grid, [W])
    B = np.zeros(grid.shape, complex)
    B[2, 1, 4] = h
    Y = forward_operator(B, model)
    est = mmse_oracle(Y, model)
    assert abs(est[2, 1, 4] - h) <= 1e-8
    assert np.count_nonzero(est) == 1
    loud, _, _ = make_model(SystemConfig(**{**cfg.__dict__, "sigma_z": 1e12}), grid, [W])
    assert np.max(np.abs(mmse_oracle(Y, loud))) < 1e-9
    with pytest.raises(ValueError):
        mmse_oracle(Y, model, cap=10)


def test_mmse_error_orthogonal_to_observation():
    cfg = tiny_config(sigma_z=0.2)
    grid = TBGrid(cfg, 2, 2, 2)
    W = np.zeros(grid.shape)
    cells = [(0, 0, 4), (3, 1, 3), (5, 0, 4)]
    for c, p in zip(cells, [0.5, 0.3, 0.2]):
        W[c] = p
    model, _, _ = make_model(cfg, grid, [W])
    rng = np.random.default_rng(3)
    n = 1000
    idx = np.nonzero(W)
    prods = []
    for _ in range(n):
        B = np.zeros(grid.shape, complex)
        B[idx] = np.sqrt(W[idx] / 2) * crandn(rng, 3)
        Y = forward_operator(B, model) + np.sqrt(cfg.sigma_z / 2) * crandn(rng, cfg.M, cfg.K, cfg.N_p)
        err = (B - mmse_oracle(Y, model))[idx]
        prods.append(np.outer(err, Y.reshape(-1, order="F")[:6].conj()))
    prods = np.array(prods)
    for part in (prods.real, prods.imag):
        mean = part.mean(axis=0)
        se = part.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean) <= 3 * se)


def test_estimator_config_validation():
    assert EstimatorConfig().alpha(100) == EstimatorConfig().damping
    assert EstimatorConfig(damping=None, damping_product=0.3).alpha(100) == pytest.approx(0.003)
    for bad in (dict(damping=0.5, damping_product=0.5), dict(damping=None), dict(damping=1.5),
                dict(damping=None, damping_product=2.0), dict(sonp_variant="x"), dict(fast_path="x"),
                dict(t_max=0), dict(tol=0)):
        with pytest.raises(ValueError):
            EstimatorConfig(**bad)


def test_initial_variances_equal_prior(small):
    cfg, grid = small
    model, _, _ = make_model(cfg, grid)
    st = IGAState.initial(model, 0.1)
    w = model.W[model.mask]
    np.testing.assert_array_equal(_variances(w, st.F, 0), w)
    assert not st.D.any()


def test_zero_observation_gives_zero(small):
    cfg, grid = small
    model, _, _ = make_model(cfg, grid)
    r = iga_run(np.zeros((cfg.M, cfg.K, cfg.N_p), complex), model)
    assert not np.any(r.estimate)


def test_single_cell_fixed_point_is_mmse(small):
    cfg, grid = small
    W = np.zeros(grid.shape)
    W[4, 2, 4] = 1.0
    model, _, _ = make_model(SystemConfig(**{**cfg.__dict__, "sigma_z": 1e-8}), grid, [W])
    B = np.zeros(grid.shape, complex)
    B[4, 2, 4] = 0.6 + 0.1j
    Y = forward_operator(B, model)
    r = iga_run(Y, model, EstimatorConfig(damping=0.5, t_max=300))
    assert r.converged
    ref = mmse_oracle(Y, model)
    assert np.linalg.norm(r.estimate - ref) <= 1e-6 * np.linalg.norm(ref)


def test_undamped_iterates_stay_finite():
    cfg = tiny_config(sigma_z=0.1)
    grid = TBGrid(cfg, 1, 1, 1)
    W = np.zeros(grid.shape)
    W[1, 0, 1] = W[3, 0, 2] = 0.5
    model, _, _ = make_model(cfg, grid, [W])
    Y = forward_operator(np.where(W > 0, 1.0 + 0j, 0), model)
    cfg_i = EstimatorConfig(damping=None, damping_product=1.0)
    st = IGAState.initial(model, cfg_i.alpha(model.A))
    for _ in range(100):
        st = iga_step(st, Y, model, cfg_i)
    assert np.all(np.isfinite(st.D)) and np.all(np.isfinite(st.F))


def test_fixed_point_and_posterior_variance(small):
    cfg, grid = small
    model, _, basic = make_model(cfg, grid, U=2)
    rng = np.random.default_rng(0)
    Y = forward_operator(np.where(model.mask, crandn(rng, *grid.shape), 0), model)
    ecfg = EstimatorConfig(damping=0.5, t_max=5000)
    r = iga_run(Y, model, ecfg)
    assert r.converged and r.final_change < ecfg.tol
    # one more step from the converged state barely moves D
    st = IGAState.initial(model, 0.5)
    for _ in range(r.iterations):
        st = iga_step(st, Y, model, ecfg)
    nxt = iga_step(st, Y, model, ecfg)
    assert np.linalg.norm(nxt.D - st.D) < ecfg.tol * np.linalg.norm(st.D)
    A = model.A
    w = model.W[model.mask]
    P0 = 1.0 / (1.0 / w - A / (A - 1) * st.F)
    assert np.all(P0 > 0) and np.all(P0 <= w * (1 + 1e-12))
    np.testing.assert_allclose(readout(st, model), r.estimate)


def test_runaway_damping_raises():
    cfg = SystemConfig(sigma_z=0.01)
    grid = TBGrid(cfg, 2, 2, 2)
    chans = synthesize_scenario(cfg, grid, 4, False, 0, power_model="leakage")
    W = [c.W for c in chans]
    ops = build_beam_operators(grid)
    basic = make_basic_sequences(cfg)
    asg = PilotAssignment.zeros(cfg.U)
    rx = tfpsp_received_signal(chans, asg, basic, cfg, noise_seed=0)
    model = build_aggregate_model(W, asg, basic, ops)
    with pytest.raises(DivergenceError):
        iga_run(rx.Y, model, EstimatorConfig(damping=1.0))


def test_recover_single_ut_and_empty(small, rng):
    cfg, grid = small
    model, _, _ = make_model(cfg, grid)
    H = np.where(model.mask, crandn(rng, *grid.shape), 0)
    [out] = recover_per_ut(H, model, [model.W], PilotAssignment.zeros(1))
    np.testing.assert_allclose(out, H, atol=1e-14)
    W2 = [model.W, np.zeros(grid.shape)]
    m2 = build_aggregate_model(W2, PilotAssignment.zeros(2), make_basic_sequences(cfg), model.ops)
    outs = recover_per_ut(H, m2, W2, PilotAssignment.zeros(2))
    assert not outs[1].any()


def test_prediction_cases(rng):
    cfg = SystemConfig(v_speed=30 / 3.6, delta_f=2284.0, U=3)
    grid = TBGrid(cfg, 2, 2, 2)
    ops = build_beam_operators(grid)
    assert not np.any(predict_data_segment(np.zeros(grid.shape, complex), ops))
    for c in synthesize_scenario(cfg, grid, 4, True, 5):
        truth = sft_direct_offgrid(c.paths, cfg, "full")[:, :, cfg.N_s - cfg.N_b:]
        np.testing.assert_allclose(predict_data_segment(c.H_tb, ops), truth, atol=1e-9)
    zero_nu = PathSet([1.0, 0.5j], grid.theta[[1, 5]], grid.tau[[0, 2]], [0.0, 0.0], [0.8, 0.2])
    H = build_tb_channel(zero_nu, grid).H_tb
    pred = predict_data_segment(H, ops)
    pilot = tb_to_sft(H, ops, "pilot")
    np.testing.assert_allclose(pred, np.repeat(pilot[:, :, :1], cfg.N_b, axis=2), atol=1e-12)
    np.testing.assert_allclose(pred, stale_data_segment(H, ops), atol=1e-12)


def _time_ops(cfg, grid, reps=15):
    model, _, _ = make_model(cfg, grid)
    rng = np.random.default_rng(0)
    B = crandn(rng, *grid.shape)
    C = crandn(rng, cfg.M, cfg.K, cfg.N_p)
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        forward_operator(B, model)
        adjoint_operator(C, model)
        best = min(best, time.perf_counter() - t)
    return best


def test_fast_path_scaling():
    small = SystemConfig(M=16, K=48, N_c=256, k0=104)
    big = SystemConfig(M=16, K=96, N_c=256, k0=104)
    t1 = _time_ops(small, TBGrid(small, 2, 2, 2))
    t2 = _time_ops(big, TBGrid(big, 2, 2, 2))
    assert t2 < 3 * t1
