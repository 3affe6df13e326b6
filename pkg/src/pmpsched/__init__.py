"""Slotted-time simulator and blocking formulas for leader-based scheduling
of uncoded and network-coded storage serving many users by broadcast."""

from .analytics import (
    erlang_blocking,
    leader_block_single,
    leader_block_striped_coded_bounds,
    leader_block_striped_uncoded,
)
from .gf import GF256, KnowledgeMatrix, decode, field_add, field_mul_inv, get_field, is_innovative, rank
from .layout import LayoutParams, build_coded, build_uncoded, drives_holding, verify_mds
from .metrics import MetricsAccumulator, merge, record_slot, summarize
from .sim import ScenarioConfig, SimState, run_replication, run_slot, simulate

__version__ = "0.1.0"
