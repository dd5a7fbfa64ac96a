"""Formula parsing, belief-expression evaluation, and word semantics."""

import math
import random

import numpy as np
import pytest

from dtlmon.errors import FormulaSyntaxError, NonAtomicNegation, UnknownSymbol
from dtlmon.logic import (
    And,
    BeliefAtom,
    Const,
    EntropyBits,
    Eventually,
    Next,
    Or,
    Prob,
    StateAtom,
    Sub,
    Until,
    eval_belief_expr,
    formula_text,
    parse_formula,
    semantics_eval,
)
from dtlmon.model import Belief, filter_run
from dtlmon.studies import build_mht

from helpers import random_pomdp, random_trace_word, tiny_two_state


@pytest.fixture(scope="module")
def mht():
    pomdp, _ = build_mht(0.25, 0.5, 0.75, 0.8)
    return pomdp


@pytest.fixture(scope="module")
def mht_formula():
    _, formula = build_mht(0.25, 0.5, 0.75, 0.8)
    return formula


class TestParser:
    def test_eventually_entropy_atom(self, mht):
        f = parse_formula("F [H(hyp) - 0.8 < 0]", mht)
        assert isinstance(f, Eventually)
        atom = f.child
        assert isinstance(atom, BeliefAtom) and not atom.negated
        # [e1 < e2] normalizes to e1 - e2 < 0.
        cells = tuple(tuple(c) for c in mht.factor_cells["hyp"])
        assert atom.expr == Sub(Sub(EntropyBits("hyp", cells), Const(0.8)), Const(0.0))

    def test_negated_temporal_rejected(self, mht):
        with pytest.raises(NonAtomicNegation):
            parse_formula("!X in(all)", mht)

    def test_implication_rewrites_to_nnf(self, tmp_path):
        pomdp = tiny_two_state()
        f = parse_formula("(in(lit) & [0.9 - P(lit) < 0] => X in(all))", pomdp)
        assert isinstance(f, Or)
        assert isinstance(f.left, Or)
        lhs1, lhs2 = f.left.left, f.left.right
        assert isinstance(lhs1, StateAtom) and lhs1.negated and lhs1.name == "lit"
        assert isinstance(lhs2, BeliefAtom) and lhs2.negated
        assert isinstance(f.right, Next)
        assert isinstance(f.right.child, StateAtom) and f.right.child.name == "all"

    def test_temporal_antecedent_rejected(self, mht):
        with pytest.raises(NonAtomicNegation):
            parse_formula("(X in(all) => in(all))", mht)

    def test_unknown_set(self, mht):
        with pytest.raises(UnknownSymbol):
            parse_formula("in(nowhere)", mht)
        with pytest.raises(UnknownSymbol):
            parse_formula("[P(nowhere) - 1 < 0]", mht)
        with pytest.raises(UnknownSymbol):
            parse_formula("[H(nowhere) - 1 < 0]", mht)

    def test_syntax_error_carries_position(self, mht):
        with pytest.raises(FormulaSyntaxError) as err:
            parse_formula("F [H(hyp) - < 0]", mht)
        assert err.value.position == 12
        assert "position" in str(err.value)

    def test_trailing_garbage(self, mht):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("in(all) in(all)", mht)

    def test_comments_and_whitespace(self, mht):
        text = "# goal\nF (  in(chosen1)\n  | in(chosen2) )  # or the second\n"
        f = parse_formula(text, mht)
        assert isinstance(f, Eventually)
        assert isinstance(f.child, Or)

    def test_precedence_until_binds_tighter_than_and(self, mht):
        f = parse_formula("in(all) & in(watching) U in(chosen1)", mht)
        assert isinstance(f, And)
        assert isinstance(f.right, Until)

    def test_until_right_associative(self, mht):
        f = parse_formula("in(all) U in(watching) U in(chosen1)", mht)
        assert isinstance(f, Until)
        assert isinstance(f.right, Until)

    def test_bexpr_arithmetic(self, mht):
        f = parse_formula("[2 * P(hyp1) + 0.5 - P(hyp2) < 1]", mht)
        uniform = Belief(np.full(12, 1 / 12))
        # 2 * (1/3) + 0.5 - 1/3 - 1 = -1/6
        assert eval_belief_expr(f.expr, uniform) == pytest.approx(-1 / 6)

    def test_reserved_words_rejected_as_names(self, mht):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("in(F)", mht)

    def test_text_renders_and_reparses(self, mht, mht_formula):
        text = formula_text(mht_formula)
        again = parse_formula(text, mht)
        assert again == mht_formula


class TestEvalBeliefExpr:
    def test_const(self):
        b = Belief(np.array([1.0]))
        assert eval_belief_expr(Const(-1.0), b) == -1.0

    def test_entropy_threshold_gap(self, mht):
        f = parse_formula("[H(hyp) - 0.8 < 0]", mht)
        assert eval_belief_expr(f.expr, mht.prior) == pytest.approx(math.log2(3) - 0.8)

    def test_full_set_mass(self, mht):
        expr = Prob("all", frozenset(range(12)))
        assert eval_belief_expr(expr, mht.prior) == pytest.approx(1.0)


def mht_word(mht, num_tails=4, choose=True):
    """Word from the tails-only record, hidden coin 1 throughout."""
    actions = [mht.action_index["observe"]] * num_tails
    observations = [mht.obs_index["tails"]] * num_tails
    if choose:
        actions.append(mht.action_index["choose1"])
        observations.append(mht.obs_index["null"])
    beliefs = filter_run(mht, actions, observations)
    watch = mht.state_index["coin1_watch"]
    chosen = mht.state_index["coin1_chose1"]
    states = [watch] * (num_tails + 1) + ([chosen] if choose else [])
    return list(zip(states, beliefs))


class TestSemantics:
    def test_state_atom_at_first_position(self, mht):
        word = mht_word(mht, choose=False)
        f = parse_formula("in(watching)", mht)
        assert semantics_eval(f, word, 0)
        assert not semantics_eval(parse_formula("in(chosen1)", mht), word, 0)

    def test_next_at_last_position_is_false(self, mht):
        word = mht_word(mht, choose=False)
        f = parse_formula("X in(watching)", mht)
        assert not semantics_eval(f, word, len(word) - 1)

    def test_commitment_formula_on_reference_word(self, mht, mht_formula):
        word = mht_word(mht, choose=True)
        # Vacuously true at position 0: the uniform prior has high entropy.
        assert semantics_eval(mht_formula, word, 0)
        # At the confident position the commitment must actually follow.
        assert semantics_eval(mht_formula, word, 4)
        without_choice = mht_word(mht, choose=False)
        assert not semantics_eval(mht_formula, without_choice, 4)

    def test_until_needs_prefix(self, mht):
        word = mht_word(mht, choose=True)
        f = parse_formula("in(watching) U in(chosen1)", mht)
        assert semantics_eval(f, word, 0)
        f_bad = parse_formula("in(chosen2) U in(chosen1)", mht)
        assert not semantics_eval(f_bad, word, 0)

    def test_strict_zero_boundary(self):
        b = Belief(np.array([1.0]))
        word = [(0, b)]
        zero_atom = BeliefAtom(Const(0.0))
        assert not semantics_eval(zero_atom, word, 0)
        assert semantics_eval(BeliefAtom(Const(0.0), negated=True), word, 0)


class TestSemanticsProperties:
    def test_implication_sugar_matches_direct_reading(self):
        # Random antecedents (Boolean combinations of atoms) and consequents,
        # rebuilt through the concrete syntax, against the unrewritten reading.
        rng = random.Random(42)
        from helpers import random_cosafe_formula
        from dtlmon.logic import formula_text

        from dtlmon.logic import And, Or

        def boolean_only(f):
            if isinstance(f, (StateAtom, BeliefAtom)):
                return True
            if isinstance(f, (And, Or)):
                return boolean_only(f.left) and boolean_only(f.right)
            return False

        checked = 0
        while checked < 1000:
            pomdp = random_pomdp(rng)
            antecedent = random_cosafe_formula(rng, pomdp, max_depth=2)
            if not boolean_only(antecedent):
                continue
            consequent = random_cosafe_formula(rng, pomdp, max_depth=3)
            text = f"({formula_text(antecedent)} => {formula_text(consequent)})"
            sugar = parse_formula(text, pomdp)
            for _ in range(5):
                word = random_trace_word(rng, pomdp)
                direct = (not semantics_eval(antecedent, word, 0)) or semantics_eval(
                    consequent, word, 0
                )
                assert semantics_eval(sugar, word, 0) == direct, text
                checked += 1

    def test_atom_duality(self):
        rng = random.Random(9)
        for _ in range(200):
            pomdp = random_pomdp(rng)
            word = random_trace_word(rng, pomdp)
            name = rng.choice(list(pomdp.named_sets))
            atom = StateAtom(name, frozenset(pomdp.named_sets[name]), pomdp.num_states)
            neg = StateAtom(name, atom.indices, pomdp.num_states, negated=True)
            ix = rng.randrange(len(word))
            assert semantics_eval(atom, word, ix) != semantics_eval(neg, word, ix)
            bexpr = BeliefAtom(Sub(Prob(name, atom.indices), Const(0.5)))
            bneg = BeliefAtom(bexpr.expr, negated=True)
            assert semantics_eval(bexpr, word, ix) != semantics_eval(bneg, word, ix)

    def test_eventually_equals_true_until(self):
        rng = random.Random(17)
        for _ in range(200):
            pomdp = random_pomdp(rng)
            word = random_trace_word(rng, pomdp)
            name = rng.choice(list(pomdp.named_sets))
            target = StateAtom(name, frozenset(pomdp.named_sets[name]), pomdp.num_states)
            full = StateAtom("all", frozenset(range(pomdp.num_states)), pomdp.num_states)
            assert semantics_eval(Eventually(target), word, 0) == semantics_eval(
                Until(full, target), word, 0
            )
