"""Phase-shifted pilot scheduling and triple-beam channel estimation for
massive MIMO-OFDM uplink, with a Monte-Carlo harness."""

from .channel import (
    BeamOperators,
    ConfigError,
    PathSet,
    SystemConfig,
    TBGrid,
    UserChannel,
    build_beam_operators,
    build_tb_channel,
    sft_direct_offgrid,
    synthesize_scenario,
    tb_to_sft,
)
from .estimator import DivergenceError, EstimatorConfig, iga_run, mmse_oracle, recover_per_ut
from .harness import ScenarioSpec, SpecError, desk_spec, run_trial, sweep, table1_system
from .pilots import PilotAssignment, make_basic_sequences, overlap_eta, tfpsp_received_signal
from .scheduler import dsatur_group, schedule

__version__ = "0.1.0"
