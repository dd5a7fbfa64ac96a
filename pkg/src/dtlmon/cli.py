"""Command-line interface.

Subcommands: ``check`` (monitor a recorded trace), ``simulate`` (seeded
Monte Carlo trials of a policy, with per-trial CSV and a summary JSON),
``compile`` (export a formula's automaton), and ``casestudy`` (reproduce a
bundled study end to end).  All outputs are deterministic functions of the
inputs and seeds.  Exit codes: 0 ok, 1 error, 2 infeasible under
``--strict``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .automaton import export_dot, export_json_dict
from .errors import DtlmonError
from .logic import formula_text, load_formula
from .model import Pomdp, RandomActionPolicy, load_model, save_model, simulate
from .monitor import (
    DEFAULT_ORACLE_CAP,
    acceptance_probability,
    acceptance_probability_oracle,
    build_monitor_dfa,
    load_trace,
    save_trace,
)
from .studies import (
    RescueParams,
    StudyStats,
    TrialRecord,
    build_mht,
    build_rescue,
    mht_reference_trace,
    mht_success_fn,
    monte_carlo,
    policy_entropy_cutoff,
    policy_mht_threshold,
    policy_time_share,
    rescue_success_fn,
)

SEED_ENV_VAR = "DTLMON_SEED"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

ORACLE_AGREEMENT_TOL = 1e-9

MHT_DEFAULTS = {"p1": 0.25, "p2": 0.5, "p3": 0.75, "h": 0.8}


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    return int(raw) if raw else 0


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _rescue_params(config: dict) -> RescueParams:
    fields = {k: config[k] for k in RescueParams.__dataclass_fields__ if k in config}
    return RescueParams(**fields)


def _resolve_model_formula(args, config: dict):
    """Model and formula from --casestudy or from explicit files."""
    if getattr(args, "casestudy", None):
        if args.casestudy == "mht":
            m = {**MHT_DEFAULTS, **{k: config[k] for k in MHT_DEFAULTS if k in config}}
            pomdp, formula = build_mht(
                m["p1"], m["p2"], m["p3"], m["h"], eventually=config.get("eventually", False)
            )
        else:
            pomdp, formula = build_rescue(
                _rescue_params(config), prior_mode=config.get("prior_mode", "safe_somewhere")
            )
        if getattr(args, "formula", None):
            formula = load_formula(args.formula, pomdp)
        return pomdp, formula
    if not getattr(args, "model", None):
        raise DtlmonError("either --model or --casestudy is required")
    pomdp = load_model(args.model)
    if not getattr(args, "formula", None):
        raise DtlmonError("--formula is required with --model")
    return pomdp, load_formula(args.formula, pomdp)


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# -- check -------------------------------------------------------------------------


def cmd_check(args) -> int:
    config = _load_config(args.config)
    pomdp, formula = _resolve_model_formula(args, config)
    execution = load_trace(pomdp, args.trace)
    report = acceptance_probability(pomdp, formula, execution)
    doc = report.to_json_dict()
    if args.oracle:
        oracle_value = acceptance_probability_oracle(
            pomdp, formula, execution, cap=args.oracle_cap
        )
        doc["oracle_probability"] = oracle_value
        if abs(oracle_value - report.probability) > ORACLE_AGREEMENT_TOL:
            raise DtlmonError(
                f"oracle disagreement: dynamic program {report.probability!r} "
                f"vs enumeration {oracle_value!r}"
            )
    print(f"feasible: {report.feasible}")
    print(f"probability: {report.probability!r}")
    if args.oracle:
        print(f"oracle probability: {doc['oracle_probability']!r}")
    if args.report:
        _write_json(Path(args.report), doc)
    if args.strict and not report.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


# -- simulate ----------------------------------------------------------------------


def _build_policy(args, config: dict):
    name = args.policy
    if name == "timeshare":
        p = _rescue_params(config)
        return policy_time_share(config.get("share_a", 3), p.p1, p.p2)
    if name == "entropy-cutoff":
        p = _rescue_params(config)
        return policy_entropy_cutoff(
            config.get("h3", 0.3), config.get("h4", 0.3), config.get("rho", 2), p.p1, p.p2
        )
    if name == "mht-threshold":
        return policy_mht_threshold(config.get("h", MHT_DEFAULTS["h"]))
    if name == "random":
        return RandomActionPolicy()
    raise DtlmonError(f"unknown policy {name!r}")


def _success_fn(args, pomdp: Pomdp):
    if getattr(args, "casestudy", None) == "rescue":
        return rescue_success_fn(pomdp)
    if getattr(args, "casestudy", None) == "mht":
        return mht_success_fn(pomdp)
    return lambda state: False  # no success notion for ad-hoc models


def _entropy_factor(args, pomdp: Pomdp) -> str:
    if args.entropy_factor:
        return args.entropy_factor
    if getattr(args, "casestudy", None) == "rescue":
        return "env"
    if getattr(args, "casestudy", None) == "mht":
        return "hyp"
    if pomdp.factor_cells:
        return next(iter(pomdp.factor_cells))
    raise DtlmonError("the model defines no factors; pass --entropy-factor")


def _records_csv(records: list[TrialRecord]) -> str:
    lines = ["trial,seed,probability,entropy_bits,success"]
    for r in records:
        lines.append(
            f"{r.trial},{r.seed},{r.probability!r},{r.terminal_entropy_bits!r},"
            f"{str(r.success).lower()}"
        )
    return "\n".join(lines) + "\n"


def _summary_doc(args, label: str, stats: StudyStats) -> dict:
    return {
        "policy": label,
        "trials": args.trials,
        "horizon": args.horizon,
        "master_seed": args.seed,
        **stats.to_json_dict(),
    }


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    pomdp, formula = _resolve_model_formula(args, config)
    policy = _build_policy(args, config)
    records, stats = monte_carlo(
        pomdp,
        formula,
        policy,
        args.trials,
        args.horizon,
        args.seed,
        _entropy_factor(args, pomdp),
        _success_fn(args, pomdp),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    label = args.policy
    with open(out / f"{label}_trials.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_records_csv(records))
    _write_json(out / f"{label}_summary.json", _summary_doc(args, label, stats))
    if args.dump_traces:
        for record in records:
            _, execution = simulate(pomdp, policy, args.horizon, record.seed)
            save_trace(pomdp, execution, out / f"{label}_trace_{record.trial:04d}.json")
    print(f"policy: {label}")
    print(f"mean probability: {stats.mean_prob!r}")
    print(f"success rate: {stats.success_rate!r}")
    print(f"wrote {out / (label + '_trials.csv')}")
    return EXIT_OK


# -- compile -----------------------------------------------------------------------


def cmd_compile(args) -> int:
    config = _load_config(args.config)
    _, formula = _resolve_model_formula(args, config)
    dfa = build_monitor_dfa(formula, relaxed=args.relaxed)
    dfa.materialize()
    print(f"formula: {formula_text(formula)}")
    print(f"propositions: {dfa.num_props}")
    print(f"states: {dfa.num_states}")
    if args.dot:
        with open(args.dot, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(export_dot(dfa))
        print(f"wrote {args.dot}")
    if args.json:
        _write_json(Path(args.json), export_json_dict(dfa))
        print(f"wrote {args.json}")
    return EXIT_OK


# -- casestudy ---------------------------------------------------------------------


def cmd_casestudy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _load_config(args.config)
    if args.study == "mht":
        return _casestudy_mht(args, out, config)
    return _casestudy_rescue(args, out, config)


def _casestudy_mht(args, out: Path, config: dict) -> int:
    m = {**MHT_DEFAULTS, **{k: config[k] for k in MHT_DEFAULTS if k in config}}
    pomdp, formula = build_mht(
        m["p1"], m["p2"], m["p3"], m["h"], eventually=config.get("eventually", False)
    )
    save_model(pomdp, out / "model.json")
    with open(out / "formula.dtl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# commit to the most likely coin once the hypothesis entropy is low\n")
        fh.write(formula_text(formula) + "\n")
    execution = mht_reference_trace(pomdp)
    save_trace(pomdp, execution, out / "reference_trace.json")
    report = acceptance_probability(pomdp, formula, execution)
    doc = report.to_json_dict()
    doc["oracle_probability"] = acceptance_probability_oracle(pomdp, formula, execution)
    _write_json(out / "reference_report.json", doc)
    print(f"reference trace feasible: {report.feasible}")
    print(f"reference trace probability: {report.probability!r}")
    print(f"wrote {out}")
    return EXIT_OK


def _casestudy_rescue(args, out: Path, config: dict) -> int:
    params = _rescue_params(config)
    prior_mode = config.get("prior_mode", "safe_somewhere")
    pomdp, formula = build_rescue(params, prior_mode=prior_mode)
    save_model(pomdp, out / "model.json")
    with open(out / "formula.dtl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# rescue duty until certainty and survivor safety\n")
        fh.write(formula_text(formula) + "\n")
    success = rescue_success_fn(pomdp)
    policies = {
        "timeshare": policy_time_share(config.get("share_a", 3), params.p1, params.p2),
        "entropy_cutoff": policy_entropy_cutoff(
            config.get("h3", 0.3), config.get("h4", 0.3), config.get("rho", 2),
            params.p1, params.p2,
        ),
    }
    comparison = {"trials": args.trials, "horizon": args.horizon, "master_seed": args.seed,
                  "prior_mode": prior_mode, "policies": {}}
    for label, policy in policies.items():
        records, stats = monte_carlo(
            pomdp, formula, policy, args.trials, args.horizon, args.seed,
            config.get("entropy_factor", "env"), success,
        )
        with open(out / f"{label}_trials.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_records_csv(records))
        _write_json(out / f"{label}_summary.json", _summary_doc(args, label, stats))
        comparison["policies"][label] = stats.to_json_dict()
        print(
            f"{label}: mean probability {stats.mean_prob:.3f}, "
            f"success rate {stats.success_rate:.3f}, pearson r "
            f"{stats.pearson_r if stats.pearson_r is None else round(stats.pearson_r, 3)}"
        )
    _write_json(out / "comparison.json", comparison)
    print(f"wrote {out}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def _add_model_args(sub, include_trace=False):
    sub.add_argument("--model", help="model JSON file")
    sub.add_argument("--formula", help="formula text file")
    sub.add_argument("--casestudy", choices=["mht", "rescue"], help="use a bundled model")
    sub.add_argument("--config", help="JSON file of study parameter overrides")
    if include_trace:
        sub.add_argument("--trace", required=True, help="trace JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtlmon",
        description="Monitor POMDP executions against co-safe temporal specifications.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    check = subs.add_parser("check", help="monitor a recorded trace")
    _add_model_args(check, include_trace=True)
    check.add_argument("--oracle", action="store_true", help="cross-check by enumeration")
    check.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP)
    check.add_argument("--report", help="write the monitor report JSON here")
    check.add_argument("--strict", action="store_true", help="exit 2 when infeasible")
    check.set_defaults(func=cmd_check)

    sim = subs.add_parser("simulate", help="run seeded Monte Carlo trials")
    _add_model_args(sim)
    sim.add_argument("--policy", default="random",
                     choices=["timeshare", "entropy-cutoff", "mht-threshold", "random"])
    sim.add_argument("--trials", type=int, default=2)
    sim.add_argument("--horizon", type=int, default=16)
    sim.add_argument("--seed", type=int, default=_default_seed())
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--dump-traces", action="store_true")
    sim.add_argument("--entropy-factor", help="factor for the terminal entropy column")
    sim.set_defaults(func=cmd_simulate)

    comp = subs.add_parser("compile", help="compile a formula to an automaton")
    _add_model_args(comp)
    comp.add_argument("--relaxed", action="store_true",
                      help="compile the belief-relaxed feasibility skeleton")
    comp.add_argument("--dot", help="write GraphViz DOT here")
    comp.add_argument("--json", help="write the automaton JSON here")
    comp.set_defaults(func=cmd_compile)

    case = subs.add_parser("casestudy", help="reproduce a bundled study")
    case.add_argument("study", choices=["mht", "rescue"])
    case.add_argument("--out", required=True, help="output directory")
    case.add_argument("--trials", type=int, default=250)
    case.add_argument("--horizon", type=int, default=16)
    case.add_argument("--seed", type=int, default=_default_seed())
    case.add_argument("--config", help="JSON file of study parameter overrides")
    case.set_defaults(func=cmd_casestudy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DtlmonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
