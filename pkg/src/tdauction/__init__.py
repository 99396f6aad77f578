"""Simulation laboratory for single-item online auctions with discounted valuations."""

from .classes import (
    ClassPartition,
    build_partition,
    class_of_discount,
    class_time_interval,
    class_weight,
    imbalance_eta,
    reserved_class_count,
)
from .coins import RandomCoins, ScriptedCoins, enumerate_outcomes
from .curves import DiscountCurve, DomainError, custom_curve, preset, step_curve
from .distributions import ValuationDistribution, fit_mle, preset_distribution
from .game import ConstantProbe, ThresholdProbe, run_adaptive_game
from .harness import ExperimentConfig, ExperimentReport, ir_audit, run_experiment
from .instances import make_preset_instance, sample_arrivals, sample_valuations
from .market import (
    AuctionOutcome,
    BidEvent,
    BidStream,
    MarketInstance,
    exact_expected_observe_select,
    exact_expected_vickrey,
    make_stream,
    opt1,
    reported_price,
    utility,
    vickrey_offline,
)
from .online import (
    KnownOptPosted,
    MechanismConfig,
    ModifiedObserveDecide,
    fixed_select,
    known_opt_posted,
    most_weighted_select,
    observe_then_select,
    randomized_select,
    weighted_select,
)
from .posted import (
    FixedPrice,
    LearningPosted,
    ReservationSchedule,
    dynamic_reservation_schedule,
    fixed_reservation_price,
    semi_truthful_schedule,
)
from .probes import Deviation, truthfulness_probe

__version__ = "0.1.0"
