"""Case-study builders, policies, and the Monte Carlo harness."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtlmon.errors import DegeneratePearson, ModelError
from dtlmon.logic import Eventually, formula_text
from dtlmon.model import Pomdp, bayes_update, marginal_dist, simulate
from dtlmon.monitor import acceptance_probability
from dtlmon.studies import (
    RescueParams,
    build_mht,
    build_rescue,
    mht_success_fn,
    monte_carlo,
    pearson_r,
    policy_entropy_cutoff,
    policy_mht_threshold,
    policy_time_share,
    rescue_success_fn,
    trial_seed,
)


@pytest.fixture(scope="module")
def mht():
    return build_mht(0.25, 0.5, 0.75, 0.8)


@pytest.fixture(scope="module")
def rescue():
    return build_rescue()


class TestBuildMht:
    def test_state_count(self, mht):
        pomdp, _ = mht
        assert pomdp.num_states == 12

    def test_observe_self_loop(self, mht):
        pomdp, _ = mht
        for c in (1, 2, 3):
            watch = pomdp.state_index[f"coin{c}_watch"]
            observe = pomdp.action_index["observe"]
            assert pomdp.trans[(watch, observe, watch)] == 1.0

    def test_heads_likelihood_matches_coin(self, mht):
        pomdp, _ = mht
        observe = pomdp.action_index["observe"]
        heads = pomdp.obs_index["heads"]
        for c, p in ((1, 0.25), (2, 0.5), (3, 0.75)):
            watch = pomdp.state_index[f"coin{c}_watch"]
            assert pomdp.obs_model[(watch, observe, heads)] == pytest.approx(p)

    def test_one_heads_hypothesis_marginal(self, mht):
        pomdp, _ = mht
        posterior = bayes_update(
            pomdp, pomdp.prior, pomdp.action_index["observe"], pomdp.obs_index["heads"]
        )
        np.testing.assert_allclose(
            marginal_dist(posterior, pomdp.factor_cells["hyp"]),
            [1 / 6, 1 / 3, 1 / 2],
            atol=1e-12,
        )

    def test_choose_locks_the_decision(self, mht):
        pomdp, _ = mht
        watch = pomdp.state_index["coin2_watch"]
        chosen = pomdp.state_index["coin2_chose3"]
        choose3 = pomdp.action_index["choose3"]
        assert pomdp.trans[(watch, choose3, chosen)] == 1.0
        for a in range(pomdp.num_actions):
            assert pomdp.trans[(chosen, a, chosen)] == 1.0

    def test_eventually_variant(self):
        _, formula = build_mht(0.25, 0.5, 0.75, 0.8, eventually=True)
        assert isinstance(formula, Eventually)

    def test_invalid_rates_rejected(self):
        with pytest.raises(ModelError):
            build_mht(0.0, 0.5, 0.75, 0.8)


class TestBuildRescue:
    def test_state_count(self, rescue):
        pomdp, _ = rescue
        assert pomdp.num_states == 64

    def test_defaults_match_study_parameters(self):
        p = RescueParams()
        assert (p.p_fail, p.fa_safe, p.fa_surv) == (0.4, 0.1, 0.1)
        assert (p.det_safe, p.det_surv) == (0.8, 0.9)
        assert (p.p1, p.p2, p.h1, p.h2) == (0.9, 0.25, 0.375, 0.375)

    def test_pickup_failure_split(self, rescue):
        pomdp, _ = rescue
        src = pomdp.state_index["r1c0e10v10"]  # survivor present, not carrying
        picked = pomdp.state_index["r1c1e10v00"]
        pickup = pomdp.action_index["pickup"]
        assert pomdp.trans[(src, pickup, picked)] == pytest.approx(0.6)
        assert pomdp.trans[(src, pickup, src)] == pytest.approx(0.4)

    def test_pickup_noop_without_survivor(self, rescue):
        pomdp, _ = rescue
        src = pomdp.state_index["r1c0e10v01"]
        pickup = pomdp.action_index["pickup"]
        assert pomdp.trans[(src, pickup, src)] == 1.0

    def test_putdown_deposits_in_current_room(self, rescue):
        pomdp, _ = rescue
        src = pomdp.state_index["r2c1e10v00"]
        dst = pomdp.state_index["r2c0e10v01"]
        putdown = pomdp.action_index["putdown"]
        assert pomdp.trans[(src, putdown, dst)] == 1.0

    def test_switch_flips_room_only(self, rescue):
        pomdp, _ = rescue
        src = pomdp.state_index["r1c1e01v10"]
        dst = pomdp.state_index["r2c1e01v10"]
        assert pomdp.trans[(src, pomdp.action_index["switch"], dst)] == 1.0

    def test_stay_sensing_rates(self, rescue):
        pomdp, _ = rescue
        stay = pomdp.action_index["stay"]
        # Room 1 safe with survivor: both reports are detections.
        s = pomdp.state_index["r1c0e10v10"]
        assert pomdp.obs_model[(s, stay, pomdp.obs_index["sense11"])] == pytest.approx(0.8 * 0.9)
        assert pomdp.obs_model[(s, stay, pomdp.obs_index["sense00"])] == pytest.approx(0.2 * 0.1)
        # Room 2's reports are about room 2.
        s2 = pomdp.state_index["r2c0e10v10"]
        assert pomdp.obs_model[(s2, stay, pomdp.obs_index["sense11"])] == pytest.approx(0.1 * 0.1)

    def test_default_prior_excludes_nowhere_safe(self, rescue):
        pomdp, _ = rescue
        for i, p in enumerate(pomdp.prior.probs):
            tags = pomdp.state_tags[i]
            if p > 0:
                assert tags["room"] == 1 and tags["carry"] == 0
                assert tags["safe1"] + tags["safe2"] >= 1
                assert p == pytest.approx(1 / 12)

    def test_uniform_prior_mode(self):
        pomdp, _ = build_rescue(prior_mode="uniform")
        mass = [p for p in pomdp.prior.probs if p > 0]
        assert len(mass) == 16
        assert all(p == pytest.approx(1 / 16) for p in mass)

    def test_formula_mentions_both_rooms(self, rescue):
        _, formula = rescue
        text = formula_text(formula)
        for token in ("room1", "room2", "carrying", "env_safe1", "env_surv2", "no_surv1"):
            assert token in text


def certain_env_rescue(env, room=1, carry=0):
    """Rescue variant whose prior pins the environment configuration."""
    pomdp, formula = build_rescue()
    doc = pomdp.to_json_dict()
    e1, e2, v1, v2 = env
    doc["prior"] = {f"r{room}c{carry}e{e1}{e2}v{v1}{v2}": 1.0}
    return Pomdp.from_json_dict(doc), formula


class TestPolicies:
    def test_time_share_schedule(self):
        # No survivors anywhere: the trigger never fires, pure schedule.
        pomdp, _ = certain_env_rescue((1, 1, 0, 0))
        policy = policy_time_share(3)
        _, execution = simulate(pomdp, policy, 16, seed=1)
        names = [pomdp.actions[a] for a in execution.actions]
        assert [i for i, n in enumerate(names) if n == "switch"] == [6, 12]
        assert all(n in ("stay", "switch") for n in names)

    def test_time_share_single_share(self):
        pomdp, _ = certain_env_rescue((1, 1, 0, 0))
        policy = policy_time_share(1)
        _, execution = simulate(pomdp, policy, 16, seed=1)
        names = [pomdp.actions[a] for a in execution.actions]
        assert names.count("switch") == 0  # the only epoch boundary is step 16

    def test_trigger_overlay_preempts_schedule(self):
        # Certain survivor in an unsafe room 1 fires the overlay immediately.
        pomdp, _ = certain_env_rescue((0, 1, 1, 0))
        policy = policy_time_share(3)
        _, execution = simulate(pomdp, policy, 6, seed=2)
        names = [pomdp.actions[a] for a in execution.actions]
        assert names[:3] == ["pickup", "switch", "putdown"]

    def test_entropy_cutoff_waits_when_uncertain(self, rescue):
        pomdp, _ = rescue
        policy = policy_entropy_cutoff(0.3, 0.3, 2)
        policy.reset(pomdp, 16, 0)
        assert pomdp.actions[policy.act(pomdp.prior, 0)] == "stay"

    def test_entropy_cutoff_certain_env_switches_every_rho(self):
        pomdp, _ = certain_env_rescue((1, 1, 0, 0))
        policy = policy_entropy_cutoff(0.3, 0.3, 2)
        _, execution = simulate(pomdp, policy, 8, seed=3)
        names = [pomdp.actions[a] for a in execution.actions]
        assert names == ["switch", "stay", "switch", "stay"] * 2

    def test_entropy_cutoff_rejects_negative_cooldown(self):
        with pytest.raises(ModelError):
            policy_entropy_cutoff(0.3, 0.3, -1)

    def test_mht_threshold_policy_commits_once_confident(self, mht):
        pomdp, formula = mht
        policy = policy_mht_threshold(0.8)
        hidden, execution = simulate(pomdp, policy, 12, seed=14)
        names = [pomdp.actions[a] for a in execution.actions]
        chooses = [n for n in names if n.startswith("choose")]
        assert len(chooses) <= 1
        if chooses:
            report = acceptance_probability(pomdp, formula, execution)
            assert report.feasible


class TestPearson:
    def test_perfect_correlation(self):
        assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    @given(
        st.lists(
            st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
            min_size=2,
            max_size=30,
        )
    )
    def test_bounded_when_defined(self, pairs):
        xs = [x for x, _ in pairs]
        ys = [y for _, y in pairs]
        try:
            r = pearson_r(xs, ys)
        except DegeneratePearson:
            return
        assert -1.0 - 1e-9 <= r <= 1.0 + 1e-9

    def test_perfect_anticorrelation(self):
        assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_partial(self):
        assert pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_degenerate(self):
        with pytest.raises(DegeneratePearson):
            pearson_r([1, 1, 1], [1, 2, 3])
        with pytest.raises(DegeneratePearson):
            pearson_r([1], [2])


class TestMonteCarlo:
    def test_deterministic_records(self, mht):
        pomdp, formula = mht
        policy = policy_mht_threshold(0.8)
        success = mht_success_fn(pomdp)
        first = monte_carlo(pomdp, formula, policy, 5, 6, 99, "hyp", success)
        second = monte_carlo(pomdp, formula, policy, 5, 6, 99, "hyp", success)
        assert first[0] == second[0]
        assert first[1] == second[1]

    def test_trial_seeds_distinct_and_stable(self):
        seeds = {trial_seed(7, k) for k in range(100)}
        assert len(seeds) == 100
        assert trial_seed(7, 3) == trial_seed(7, 3)

    def test_requires_two_trials(self, mht):
        pomdp, formula = mht
        with pytest.raises(ModelError):
            monte_carlo(pomdp, formula, policy_mht_threshold(0.8), 1, 4, 0, "hyp", lambda s: True)

    def test_degenerate_pearson_reported_as_none(self, mht):
        pomdp, _ = mht
        from dtlmon.logic import StateAtom

        full = StateAtom("all", frozenset(range(pomdp.num_states)), pomdp.num_states)
        policy = policy_mht_threshold(0.8)
        _, stats = monte_carlo(pomdp, full, policy, 4, 3, 5, "hyp", lambda s: True)
        assert stats.mean_prob == pytest.approx(1.0)
        assert stats.pearson_r is None

    def test_aggregate_uses_sample_variance(self, mht):
        pomdp, formula = mht
        policy = policy_mht_threshold(0.8)
        records, stats = monte_carlo(
            pomdp, formula, policy, 6, 6, 123, "hyp", mht_success_fn(pomdp)
        )
        probs = [r.probability for r in records]
        mean = sum(probs) / len(probs)
        var = sum((x - mean) ** 2 for x in probs) / (len(probs) - 1)
        assert stats.mean_prob == pytest.approx(mean)
        assert stats.var_prob == pytest.approx(var)

    def test_rescue_success_requires_empty_hands(self, rescue):
        pomdp, _ = rescue
        success = rescue_success_fn(pomdp)
        assert success(pomdp.state_index["r1c0e11v11"])
        assert not success(pomdp.state_index["r1c1e11v11"])  # still carrying
        assert not success(pomdp.state_index["r1c0e01v10"])  # survivor in unsafe room
        assert success(pomdp.state_index["r1c0e01v01"])


def test_mht_entropy_eventually_drops_with_true_coin_one(mht):
    pomdp, _ = mht
    doc = pomdp.to_json_dict()
    doc["prior"] = {"coin1_watch": 1.0}
    pinned = Pomdp.from_json_dict(doc)
    from dtlmon.model import ScriptedPolicy

    # Track the public filter against the pinned-truth observation stream.
    _, execution = simulate(pinned, ScriptedPolicy([], pad_action="observe"), 40, seed=8)
    beliefs = [pomdp.prior]
    for a, o in zip(execution.actions, execution.observations):
        beliefs.append(bayes_update(pomdp, beliefs[-1], a, o))
    from dtlmon.model import entropy_bits

    entropies = [entropy_bits(marginal_dist(b, pomdp.factor_cells["hyp"])) for b in beliefs]
    assert min(entropies) < 0.8
