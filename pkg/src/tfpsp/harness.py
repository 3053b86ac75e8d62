"""Monte-Carlo driver: scenario specs, single trials, SNR sweeps and CSV output.

Seeding: a master seed ``s`` and trial index ``t`` give the channel stream
``SeedSequence(s, spawn_key=(t, 0))`` and the noise stream
``SeedSequence(s, spawn_key=(t, 1))``. Channel and noise realizations are
therefore shared across SNR points, pilot schemes and estimators (paired
comparisons), and any trial can be reproduced on its own.
"""
from __future__ import annotations

import csv
import io
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .channel import (
    BeamOperators,
    ConfigError,
    SystemConfig,
    TBGrid,
    UserChannel,
    build_beam_operators,
    sft_direct_offgrid,
    synthesize_scenario,
    tb_to_sft,
)
from .estimator import (
    DivergenceError,
    EstimatorConfig,
    build_aggregate_model,
    iga_run,
    mmse_oracle,
    predict_data_segment,
    recover_per_ut,
    stale_data_segment,
)
from .pilots import PilotAssignment, complex_noise, make_basic_sequences, tfpsp_received_signal
from .scheduler import schedule, schedule_objective

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NMSE_FLOOR_DB = -200.0
CSV_COLUMNS = ["snr_db", "scheme", "estimator", "mean_nmse_db", "std_nmse_db", "mean_iters", "trials"]


class SpecError(ValueError):
    """The experiment description is invalid."""


@dataclass(frozen=True)
class ScenarioSpec:
    system: SystemConfig = field(default_factory=SystemConfig)
    F_theta: int = 2
    F_tau: int = 2
    F_nu: int = 2
    n_paths: int = 4
    on_grid: bool = False
    decay: float = 0.5
    angle_spread: float | None = None
    power_model: str = "leakage"
    leakage_floor: float = 1e-2
    seed: int = 0
    scheme: str = "tfpsp"
    estimator: str = "iga"
    estimator_config: EstimatorConfig = field(default_factory=EstimatorConfig)
    gamma: float = 0.05
    phi_stride: int | None = None
    snr_db: tuple[float, ...] = (20.0,)
    trials: int = 10
    predict: bool = False
    mmse_cap: int = 4096

    def __post_init__(self):
        if self.scheme not in ("tfpsp", "fpsp"):
            raise SpecError(f"unknown pilot scheme {self.scheme!r}")
        if self.estimator not in ("iga", "mmse"):
            raise SpecError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "mmse" and self.system.A > self.mmse_cap:
            raise SpecError(f"mmse needs M*K*N_p = {self.system.A} <= mmse_cap = {self.mmse_cap}")
        if self.power_model not in ("snapped", "leakage"):
            raise SpecError(f"unknown power model {self.power_model!r}")
        if self.n_paths < 1 or self.trials < 0:
            raise SpecError("n_paths must be positive and trials non-negative")
        if not 0 <= self.gamma < 1:
            raise SpecError("gamma must lie in [0, 1)")
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        try:
            self.grid()
        except ConfigError as e:
            raise SpecError(str(e)) from e

    def grid(self) -> TBGrid:
        return TBGrid(self.system, self.F_theta, self.F_tau, self.F_nu)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db"] = list(self.snr_db)
        return {"schema_version": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        ver = d.pop("schema_version", None)
        if ver != SCHEMA_VERSION:
            raise SpecError(f"unsupported schema_version {ver!r}, expected {SCHEMA_VERSION}")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown spec fields: {sorted(extra)}")
        try:
            if "system" in d:
                d["system"] = SystemConfig(**d["system"])
            if "estimator_config" in d:
                d["estimator_config"] = EstimatorConfig(**d["estimator_config"])
            return cls(**d)
        except SpecError:
            raise
        except (TypeError, ValueError) as e:
            raise SpecError(str(e)) from e


def desk_spec(**overrides) -> ScenarioSpec:
    """Desk-scale profile: M=16, K=48, N_c=256, N_g=16, N_p=N_b=4, F=2, U=24."""
    return replace(ScenarioSpec(), **overrides)


def table1_system(**overrides) -> SystemConfig:
    """Full-scale parameters (long-running: the TB grid has ~3e6 cells)."""
    base = dict(M=128, U=48, f_c=5.8e9, N_c=2048, N_g=144, K=360, k0=844,
                delta_f=15e3, N_b=14, N_p=8, v_speed=3 / 3.6)
    base.update(overrides)
    return SystemConfig(**base)


def trial_seeds(master: int, trial: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Channel and noise seed sequences of one trial."""
    return (np.random.SeedSequence(master, spawn_key=(trial, 0)),
            np.random.SeedSequence(master, spawn_key=(trial, 1)))


def snr_to_sigma_z(snr_db: float, sigma_p: float = 1.0) -> float:
    return sigma_p / 10 ** (snr_db / 10)


def nmse(estimates, truths) -> float:
    """Mean of ``||est - truth||^2 / ||truth||^2``; zero-energy truths are skipped."""
    ratios = []
    for est, tru in zip(estimates, truths, strict=True):
        est, tru = np.asarray(est), np.asarray(tru)
        if est.shape != tru.shape:
            raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
        e = float(np.sum(np.abs(tru) ** 2))
        if e == 0:
            warnings.warn("zero-energy truth excluded from NMSE", RuntimeWarning, stacklevel=2)
            continue
        ratios.append(float(np.sum(np.abs(est - tru) ** 2)) / e)
    if not ratios:
        raise ValueError("no truth with non-zero energy")
    return float(np.mean(ratios))


def to_db(x: float) -> float:
    if x <= 0:
        return NMSE_FLOOR_DB
    return float(max(NMSE_FLOOR_DB, 10 * np.log10(x)))


@dataclass
class TrialRecord:
    trial: int
    snr_db: float
    nmse: float
    iterations: int
    converged: bool
    pred_nmse: float | None = None
    stale_nmse: float | None = None
    groups: int = 0
    max_group_eta: float = 0.0
    objective: float = 0.0
    wall_time: float = 0.0
    error: str | None = None


@dataclass
class EstimateOutcome:
    per_ut: list
    iterations: int
    converged: bool
    final_residual: float
    support_size: int


def trial_channels(spec: ScenarioSpec, trial: int) -> list[UserChannel]:
    """Channel realization of one trial (depends only on the seed and the trial index)."""
    ch_seed, _ = trial_seeds(spec.seed, trial)
    return synthesize_scenario(spec.system, spec.grid(), spec.n_paths, spec.on_grid, ch_seed,
                               spec.decay, spec.angle_spread, spec.power_model, spec.leakage_floor)


def estimate_users(truth, W_list, asg: PilotAssignment, ops: BeamOperators, cfg: SystemConfig,
                   scheme: str, estimator: str, est_cfg: EstimatorConfig, noise: np.ndarray,
                   mmse_cap: int = 4096) -> EstimateOutcome:
    """Transmit the pilots through ``truth`` (SFT pilot tensors) and estimate every UT."""
    basic = make_basic_sequences(cfg, time_all_ones=scheme == "fpsp")
    rx = tfpsp_received_signal(truth, asg, basic, cfg, noise=noise)
    model = build_aggregate_model(W_list, asg, basic, ops, cfg.sigma_z)
    if estimator == "mmse":
        H_hat, its, conv, res = mmse_oracle(rx.Y, model, mmse_cap), 0, True, 0.0
    elif estimator == "iga":
        r = iga_run(rx.Y, model, est_cfg)
        H_hat, its, conv, res = r.estimate, r.iterations, r.converged, r.final_residual
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    per_ut = recover_per_ut(H_hat, model, W_list, asg)
    return EstimateOutcome(per_ut, its, conv, res, int(np.count_nonzero(model.mask)))


def run_trial(spec: ScenarioSpec, trial: int) -> list[TrialRecord]:
    """Run one trial at every SNR of the spec (same channels, schedule and noise)."""
    t0 = time.perf_counter()
    _, noise_seed = trial_seeds(spec.seed, trial)
    base = spec.system
    grid = spec.grid()
    ops = build_beam_operators(grid)
    channels = trial_channels(spec, trial)
    W_list = [c.W for c in channels]
    asg, groups, etas = schedule(W_list, grid, spec.gamma, spec.scheme, spec.phi_stride)
    obj = schedule_objective(W_list, asg, grid)
    truth = [sft_direct_offgrid(c.paths, base, "pilot") for c in channels]
    truth_data = None
    if spec.predict:
        truth_data = [sft_direct_offgrid(c.paths, base, "full")[:, :, base.N_s - base.N_b:]
                      for c in channels]
    noise = complex_noise((base.M, base.K, base.N_p), noise_seed)
    setup = time.perf_counter() - t0
    out = []
    for snr in spec.snr_db:
        t1 = time.perf_counter()
        cfg = replace(base, sigma_z=snr_to_sigma_z(snr, base.sigma_p))
        rec = TrialRecord(trial, snr, float("nan"), 0, False, groups=groups.count,
                          max_group_eta=max(etas), objective=obj)
        try:
            res = estimate_users(truth, W_list, asg, ops, cfg, spec.scheme, spec.estimator,
                                 spec.estimator_config, noise, spec.mmse_cap)
            rec.iterations, rec.converged = res.iterations, res.converged
            rec.nmse = nmse([tb_to_sft(h, ops, "pilot") for h in res.per_ut], truth)
            if truth_data is not None:
                rec.pred_nmse = nmse([predict_data_segment(h, ops) for h in res.per_ut], truth_data)
                rec.stale_nmse = nmse([stale_data_segment(h, ops) for h in res.per_ut], truth_data)
        except (DivergenceError, ValueError, np.linalg.LinAlgError) as e:
            rec.error = f"{type(e).__name__}: {e}"
            log.warning("trial %d at %.1f dB failed: %s", trial, snr, rec.error)
        rec.wall_time = setup + time.perf_counter() - t1
        out.append(rec)
    return out


def _run_trial_star(args):
    return run_trial(*args)


def run_trials(spec: ScenarioSpec, jobs: int = 1) -> list[TrialRecord]:
    """All trials of a spec, ordered by (trial, SNR)."""
    work = [(spec, t) for t in range(spec.trials)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_trial_star, work))
    else:
        chunks = [run_trial(*w) for w in work]
    return [r for c in chunks for r in c]


@dataclass
class SweepRow:
    snr_db: float
    scheme: str
    estimator: str
    mean_nmse_db: float
    std_nmse_db: float
    mean_iters: float
    trials: int


def aggregate(records: list[TrialRecord], spec: ScenarioSpec) -> list[SweepRow]:
    rows = []
    for snr in sorted(set(spec.snr_db)):
        ok = sorted((r for r in records if r.snr_db == snr and r.error is None),
                    key=lambda r: r.trial)
        vals = np.array([r.nmse for r in ok])
        if vals.size:
            mean_db = to_db(float(vals.mean()))
            std_db = float(np.std([to_db(v) for v in vals]))
            iters = float(np.mean([r.iterations for r in ok]))
        else:
            mean_db = std_db = iters = float("nan")
        rows.append(SweepRow(snr, spec.scheme, spec.estimator, mean_db, std_db, iters, len(ok)))
    return rows


def sweep(spec: ScenarioSpec, jobs: int = 1) -> tuple[list[SweepRow], list[TrialRecord]]:
    if not spec.snr_db:
        return [], []
    records = run_trials(spec, jobs)
    return aggregate(records, spec), records


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[SweepRow]:
    rd = csv.DictReader(io.StringIO(text))
    if rd.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {rd.fieldnames}")
    return [SweepRow(float(r["snr_db"]), r["scheme"], r["estimator"], float(r["mean_nmse_db"]),
                     float(r["std_nmse_db"]), float(r["mean_iters"]), int(r["trials"]))
            for r in rd]
