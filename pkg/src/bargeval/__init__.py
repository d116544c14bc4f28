"""Meta-game evaluation of bargaining strategy generators.

Core surfaces: the DoND game engine (bargeval.game), policy providers
(bargeval.policies), exact beliefs (bargeval.belief), Gumbel/vanilla
IS-MCTS (bargeval.search), payoff tables and the seed-resampling bootstrap
(bargeval.metagame), normal-form analytics and the max-entropy Nash solver
(bargeval.solver), and the CLI pipeline (bargeval.cli).
"""

from .game import (
    AGREE,
    GameParams,
    History,
    InfoState,
    Instance,
    InstanceConstraints,
    InstanceDB,
    ObservationEncoder,
    apply_action,
    enumerate_instances,
    estimate_game_size,
    initial_history,
    legal_actions,
    returns,
)
from .belief import Belief, posterior, sample_world_state
from .metagame import (
    PayoffTable,
    ResamplePlan,
    bootstrap_run,
    build_meta_game,
    estimate_payoff_table,
    play_game,
    resample_seeds,
)
from .policies import (
    ExternalPolicy,
    MixturePolicy,
    PolicyProvider,
    SoftPolicy,
    TabularPolicy,
    ToughPolicy,
    UniformPolicy,
)
from .search import (
    SearchConfig,
    SearchPolicy,
    TabularLearner,
    gumbel_search,
    self_play_train,
    va_search,
)
from .solver import (
    SolveResult,
    SymmetricGame,
    br_graph,
    max_entropy_ne,
    ne_nbs,
    ne_regret_score,
    piecewise_bound_check,
    regret,
    sum_regret,
    theorem_segment_count,
    uniform_score,
)

__version__ = "0.1.0"
