"""Witness-based probabilistic reliable broadcast with a SLASH witness oracle."""

from .analysis import (BALANCED, GatheringQuery, SecurityQuery, ball_volume, epsilon,
                       gathering_bound, gathering_sim, pr_liveness, pr_safety)
from .broadcast import (BrachaInstance, EventId, Kind, LongLivedBroadcast, Payload,
                        ProtocolMessage, Tag, WBBInstance, quorum_size)
from .errors import ConfigError, FaultBoundError, ParameterError, ProtocolMisuseError
from .netsim import ScenarioConfig, compare, run
from .recovery import Decision, RecoveryInstance, RoundConfig, RoundLog, round_tick
from .slash import (OracleParams, RingPoint, SlashParams, SlashState, commit, map_id,
                    permute_filter, ring_dist, select_witnesses, set_dist, slash, slash_absorb,
                    verify_reveal)

__version__ = "0.1.0"
