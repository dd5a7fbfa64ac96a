"""Runtime monitoring of POMDP executions against co-safe temporal
specifications over hidden states and belief states."""

from .errors import (
    AllZero,
    CapExceeded,
    DegeneratePearson,
    DtlmonError,
    FormulaSyntaxError,
    InconsistentState,
    ModelError,
    NonAtomicNegation,
    StateBlowup,
    UnknownSymbol,
    ZeroLikelihood,
)
from .model import (
    Belief,
    Execution,
    Policy,
    Pomdp,
    RandomActionPolicy,
    ScriptedPolicy,
    bayes_update,
    entropy_bits,
    execution_from_actions,
    filter_run,
    load_model,
    marginal_dist,
    marginal_prob,
    save_model,
    simulate,
)
from .logic import (
    Add,
    And,
    BeliefAtom,
    Callback,
    Const,
    EntropyBits,
    Eventually,
    Formula,
    Mul,
    Neg,
    Next,
    Or,
    Prob,
    StateAtom,
    Sub,
    SymbolTable,
    TraceWord,
    Until,
    eval_belief_expr,
    formula_text,
    load_formula,
    parse_formula,
    semantics_eval,
)
from .automaton import Dfa, PropAtom, dfa_accepts, export_dot, formula_to_dfa, prop_eval
from .monitor import (
    BackwardLikelihoods,
    MonitorReport,
    PropositionMaps,
    acceptance_probability,
    acceptance_probability_oracle,
    backward_likelihoods,
    build_monitor_dfa,
    feasibility_check,
    load_trace,
    path_transition,
    region_signature,
    relax,
    save_trace,
    smoothed_initial,
)
from .studies import (
    RescueParams,
    StudyStats,
    TrialRecord,
    build_mht,
    build_rescue,
    mht_reference_trace,
    monte_carlo,
    pearson_r,
    policy_entropy_cutoff,
    policy_mht_threshold,
    policy_time_share,
    run_rescue_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
