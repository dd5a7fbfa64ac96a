"""Formula language over hidden-state sets and belief expressions.

Formulas combine two kinds of atoms: ``in(A)`` holds when the hidden state
lies in the named set ``A``, and ``[e1 < e2]`` holds when the belief
expression ``e1 - e2`` evaluates below zero on the current belief.  Belief
expressions are arithmetic over constants, set masses ``P(A)``, and factor
entropies ``H(F)`` in bits.

Concrete grammar (``#`` starts a comment line)::

    formula := disj
    disj    := conj { "|" conj }
    conj    := until { "&" until }
    until   := unary [ "U" until ]
    unary   := "X" unary | "F" unary | "!" atom | atom
             | "(" formula ")" | "(" boolatoms "=>" formula ")"
    atom    := "in(" NAME ")" | "[" bexpr "<" bexpr "]"
    bexpr   := term { ("+" | "-") term }
    term    := factor { "*" factor }
    factor  := NUMBER | "P(" NAME ")" | "H(" NAME ")" | "(" bexpr ")"

Negation normal form is enforced syntactically: ``!`` may only cover an
atom, and an implication antecedent must be a Boolean combination of atoms
(it is rewritten into atom-level negations during parsing).  ``U`` binds
tighter than ``&``, which binds tighter than ``|``; ``U`` is
right-associative.  ``X``, ``F``, ``U``, ``in``, ``P``, and ``H`` are
reserved words.

Satisfaction is decided on finite words of (hidden state, belief) pairs:
``X`` at the last position is false, and ``U`` / ``F`` need their witness
inside the word.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence, Union

from .errors import FormulaSyntaxError, NonAtomicNegation, UnknownSymbol
from .model import Belief, entropy_bits, marginal_dist, marginal_prob

# -- belief expression AST -------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Prob:
    """Belief mass on a resolved state-index set; ``name`` is for display."""

    name: str
    indices: frozenset[int]


@dataclass(frozen=True)
class EntropyBits:
    """Entropy (bits) of the belief marginal over a factor's cells."""

    name: str
    cells: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class Callback:
    """Externally supplied belief functional, for predicates beyond the text
    grammar.  Built programmatically only; compared and hashed by function
    identity, so reuse the same object for the same predicate."""

    name: str
    fn: Callable[[Belief], float]


@dataclass(frozen=True)
class Neg:
    operand: "BeliefExpr"


@dataclass(frozen=True)
class Add:
    left: "BeliefExpr"
    right: "BeliefExpr"


@dataclass(frozen=True)
class Sub:
    left: "BeliefExpr"
    right: "BeliefExpr"


@dataclass(frozen=True)
class Mul:
    left: "BeliefExpr"
    right: "BeliefExpr"


BeliefExpr = Union[Const, Prob, EntropyBits, Callback, Neg, Add, Sub, Mul]


def eval_belief_expr(expr: BeliefExpr, belief: Belief) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Prob):
        return marginal_prob(belief, expr.indices)
    if isinstance(expr, EntropyBits):
        return entropy_bits(marginal_dist(belief, expr.cells))
    if isinstance(expr, Callback):
        return float(expr.fn(belief))
    if isinstance(expr, Neg):
        return -eval_belief_expr(expr.operand, belief)
    if isinstance(expr, Add):
        return eval_belief_expr(expr.left, belief) + eval_belief_expr(expr.right, belief)
    if isinstance(expr, Sub):
        return eval_belief_expr(expr.left, belief) - eval_belief_expr(expr.right, belief)
    if isinstance(expr, Mul):
        return eval_belief_expr(expr.left, belief) * eval_belief_expr(expr.right, belief)
    raise TypeError(f"not a belief expression: {expr!r}")


def belief_expr_text(expr: BeliefExpr) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Prob):
        return f"P({expr.name})"
    if isinstance(expr, EntropyBits):
        return f"H({expr.name})"
    if isinstance(expr, Callback):
        return f"<{expr.name}>"
    if isinstance(expr, Neg):
        return f"-{belief_expr_text(expr.operand)}"
    ops = {Add: "+", Sub: "-", Mul: "*"}
    return f"({belief_expr_text(expr.left)} {ops[type(expr)]} {belief_expr_text(expr.right)})"


# -- formula AST -----------------------------------------------------------------


@dataclass(frozen=True)
class StateAtom:
    """Hidden state membership in a resolved set; carries the state count so
    the complement stays computable without the model at hand."""

    name: str
    indices: frozenset[int]
    num_states: int
    negated: bool = False


@dataclass(frozen=True)
class BeliefAtom:
    expr: BeliefExpr
    negated: bool = False


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Next:
    child: "Formula"


@dataclass(frozen=True)
class Eventually:
    child: "Formula"


Formula = Union[StateAtom, BeliefAtom, And, Or, Until, Next, Eventually]

Atom = (StateAtom, BeliefAtom)


def atoms(formula: Formula):
    """Yield the formula's atoms in left-to-right order."""
    if isinstance(formula, Atom):
        yield formula
    elif isinstance(formula, (And, Or, Until)):
        yield from atoms(formula.left)
        yield from atoms(formula.right)
    elif isinstance(formula, (Next, Eventually)):
        yield from atoms(formula.child)
    else:
        raise TypeError(f"not a formula: {formula!r}")


def formula_text(formula: Formula) -> str:
    if isinstance(formula, StateAtom):
        body = f"in({formula.name})"
        return f"!{body}" if formula.negated else body
    if isinstance(formula, BeliefAtom):
        # A parsed atom is always Sub(e1, e2); splitting it keeps the text
        # reparseable to the identical AST.
        if isinstance(formula.expr, Sub):
            body = (
                f"[{belief_expr_text(formula.expr.left)} < "
                f"{belief_expr_text(formula.expr.right)}]"
            )
        else:
            body = f"[{belief_expr_text(formula.expr)} < 0]"
        return f"!{body}" if formula.negated else body
    if isinstance(formula, And):
        return f"({formula_text(formula.left)} & {formula_text(formula.right)})"
    if isinstance(formula, Or):
        return f"({formula_text(formula.left)} | {formula_text(formula.right)})"
    if isinstance(formula, Until):
        return f"({formula_text(formula.left)} U {formula_text(formula.right)})"
    if isinstance(formula, Next):
        return f"X {formula_text(formula.child)}"
    if isinstance(formula, Eventually):
        return f"F {formula_text(formula.child)}"
    raise TypeError(f"not a formula: {formula!r}")


@dataclass(frozen=True, eq=False)
class SymbolTable:
    """Minimal symbol table when no full model is available."""

    num_states: int
    named_sets: Mapping[str, frozenset[int]]
    factor_cells: Mapping[str, tuple[tuple[int, ...], ...]]


# -- parsing ---------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+|#[^\n]*)"
    r"|(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>=>|[()\[\]<|&!+\-*])"
)

_RESERVED = {"X", "F", "U", "in", "P", "H"}


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, symbols):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    # token plumbing

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def _next(self):
        tok = self._peek()
        self.i += 1
        return tok

    def _expect(self, value: str):
        kind, text, pos = self._next()
        if text != value:
            raise FormulaSyntaxError(f"expected {value!r}, found {text!r}", pos)

    def _at(self, value: str) -> bool:
        return self._peek()[1] == value

    # grammar rules

    def parse(self) -> Formula:
        f = self._disj()
        kind, text, pos = self._peek()
        if kind is not None:
            raise FormulaSyntaxError(f"unexpected trailing input {text!r}", pos)
        return f

    def _disj(self) -> Formula:
        f = self._conj()
        while self._at("|"):
            self._next()
            f = Or(f, self._conj())
        return f

    def _conj(self) -> Formula:
        f = self._until()
        while self._at("&"):
            self._next()
            f = And(f, self._until())
        return f

    def _until(self) -> Formula:
        f = self._unary()
        if self._at("U"):
            self._next()
            return Until(f, self._until())
        return f

    def _unary(self) -> Formula:
        _, text, pos = self._peek()
        if text == "X":
            self._next()
            return Next(self._unary())
        if text == "F":
            self._next()
            return Eventually(self._unary())
        if text == "!":
            self._next()
            _, t, p = self._peek()
            if t not in ("in", "["):
                raise NonAtomicNegation(
                    f"negation must apply to an atom, found {t!r} at position {p}"
                )
            return _negate_nnf(self._atom())
        if text == "(":
            self._next()
            inner = self._disj()
            if self._at("=>"):
                _, _, arrow_pos = self._next()
                antecedent = inner
                _check_boolean_atoms(antecedent, arrow_pos)
                consequent = self._disj()
                self._expect(")")
                return Or(_negate_nnf(antecedent), consequent)
            self._expect(")")
            return inner
        return self._atom()

    def _atom(self) -> Formula:
        _, text, pos = self._peek()
        if text == "in":
            self._next()
            self._expect("(")
            name = self._name()
            self._expect(")")
            sets = self.symbols.named_sets
            if name not in sets:
                raise UnknownSymbol(f"unknown state set {name!r}")
            return StateAtom(name, frozenset(sets[name]), self.symbols.num_states)
        if text == "[":
            self._next()
            left = self._bexpr()
            self._expect("<")
            right = self._bexpr()
            self._expect("]")
            return BeliefAtom(Sub(left, right))
        raise FormulaSyntaxError(f"expected an atom, found {text!r}", pos)

    def _name(self) -> str:
        kind, text, pos = self._next()
        if kind != "name":
            raise FormulaSyntaxError(f"expected a name, found {text!r}", pos)
        if text in _RESERVED:
            raise FormulaSyntaxError(f"{text!r} is a reserved word", pos)
        return text

    def _bexpr(self) -> BeliefExpr:
        e = self._term()
        while self._peek()[1] in ("+", "-"):
            _, op, _ = self._next()
            rhs = self._term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def _term(self) -> BeliefExpr:
        e = self._factor()
        while self._at("*"):
            self._next()
            e = Mul(e, self._factor())
        return e

    def _factor(self) -> BeliefExpr:
        kind, text, pos = self._peek()
        if kind == "num":
            self._next()
            return Const(float(text))
        if text == "P":
            self._next()
            self._expect("(")
            name = self._name()
            self._expect(")")
            sets = self.symbols.named_sets
            if name not in sets:
                raise UnknownSymbol(f"unknown state set {name!r}")
            return Prob(name, frozenset(sets[name]))
        if text == "H":
            self._next()
            self._expect("(")
            name = self._name()
            self._expect(")")
            cells = self.symbols.factor_cells
            if name not in cells:
                raise UnknownSymbol(f"unknown factor {name!r}")
            return EntropyBits(name, tuple(tuple(c) for c in cells[name]))
        if text == "(":
            self._next()
            e = self._bexpr()
            self._expect(")")
            return e
        raise FormulaSyntaxError(f"expected a belief term, found {text!r}", pos)


def _check_boolean_atoms(formula: Formula, pos: int) -> None:
    if isinstance(formula, Atom):
        return
    if isinstance(formula, (And, Or)):
        _check_boolean_atoms(formula.left, pos)
        _check_boolean_atoms(formula.right, pos)
        return
    raise NonAtomicNegation(
        "implication antecedent must be a Boolean combination of atoms "
        f"(offending '=>' at position {pos})"
    )


def _negate_nnf(formula: Formula) -> Formula:
    """Dual of a Boolean combination of atoms, with negation pushed to atoms."""
    if isinstance(formula, Atom):
        return replace(formula, negated=not formula.negated)
    if isinstance(formula, And):
        return Or(_negate_nnf(formula.left), _negate_nnf(formula.right))
    if isinstance(formula, Or):
        return And(_negate_nnf(formula.left), _negate_nnf(formula.right))
    raise NonAtomicNegation("cannot negate a temporal subformula")


def parse_formula(text: str, symbols) -> Formula:
    """Parse formula text against a symbol table (a ``Pomdp`` works).

    Returns an AST in negation normal form.  Raises ``FormulaSyntaxError``
    with a character position, ``UnknownSymbol`` for unresolved names, and
    ``NonAtomicNegation`` when negation or an implication antecedent covers
    a temporal operator.
    """
    return _Parser(text, symbols).parse()


def load_formula(path, symbols) -> Formula:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_formula(fh.read(), symbols)


# -- finite-word semantics ---------------------------------------------------------

TraceWord = Sequence[tuple[int, Belief]]


def semantics_eval(formula: Formula, word: TraceWord, position: int = 0) -> bool:
    """Direct recursive satisfaction of ``formula`` at ``position`` in ``word``.

    Belief atoms are strict: the atom holds when its expression is below
    zero, and its negation holds when the expression is at or above zero.
    """
    if not 0 <= position < len(word):
        raise ValueError(f"position {position} outside the word")
    state, belief = word[position]
    if isinstance(formula, StateAtom):
        inside = state in formula.indices
        return inside != formula.negated
    if isinstance(formula, BeliefAtom):
        below = eval_belief_expr(formula.expr, belief) < 0
        return below != formula.negated
    if isinstance(formula, And):
        return semantics_eval(formula.left, word, position) and semantics_eval(
            formula.right, word, position
        )
    if isinstance(formula, Or):
        return semantics_eval(formula.left, word, position) or semantics_eval(
            formula.right, word, position
        )
    if isinstance(formula, Next):
        if position + 1 >= len(word):
            return False
        return semantics_eval(formula.child, word, position + 1)
    if isinstance(formula, Until):
        for j in range(position, len(word)):
            if semantics_eval(formula.right, word, j):
                return True
            if not semantics_eval(formula.left, word, j):
                return False
        return False
    if isinstance(formula, Eventually):
        return any(semantics_eval(formula.child, word, j) for j in range(position, len(word)))
    raise TypeError(f"not a formula: {formula!r}")
