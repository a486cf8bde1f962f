"""Dynamic LKH key trees for secure multicast: insertion policies, cost bounds and churn simulation."""

from .analysis import (
    BoundInapplicable,
    CostReport,
    build_huffman,
    entropy_bounds,
    lemma3_check,
    selcuk_l_bound,
    thm3_depth_bound,
    thm4_l_bound,
    thm5_l_bound,
    withdrawal_costs,
)
from .key_tree import KeyTree, Member, TreeMutation, build_from_members
from .policies import (
    Policy,
    brute_force_best,
    cost_increase,
    select,
    select_alg1,
    select_alg2,
    select_alg3,
    select_alg4,
)
from .rekey import KeyEpoch
from .simulator import SimulationConfig, SimulationReport, run, sweep

__version__ = "0.1.0"
