import math

import numpy as np
import pytest
from scipy.special import logsumexp as sp_lse

from helpers import make_rules, random_rules, random_term_lp
from pairgram import chart
from pairgram.autodiff import Tensor, backward
from pairgram.chart import (
    MinimumLengthError,
    ParseTree,
    ZeroProbabilityError,
    brute_force_logZ,
    enumerate_spans,
    inside,
    iter_tree_shapes,
    marginals_via_inside_gradient,
    mbr_decode,
    outside_and_marginals,
    viterbi_decode,
)

NEG = -1e30  # effectively log 0 while keeping arrays finite


def single_parse_rules():
    # |N|=1, |P|=1; S->A and A->TT are certain
    binary = np.full((1, 2, 2), -np.inf)
    binary[0, 1, 1] = 0.0
    return make_rules([0.0], binary)


def test_inside_single_parse_hand_enumeration():
    rules = single_parse_rules()
    term = Tensor(np.log([[0.3], [0.2]]))
    _, log_z = inside(rules, term)
    assert abs(log_z.item() - math.log(0.06)) < 1e-12


def test_catalan_shape_count_and_brute_force_agreement():
    assert len(iter_tree_shapes(0, 4)) == 5  # C_3
    rng = np.random.default_rng(0)
    rules = random_rules(rng, 2, 2, 5)
    term, _ = random_term_lp(rules, rng, 4)
    _, log_z = inside(rules, term)
    assert abs(log_z.item() - brute_force_logZ(rules, term)) < 1e-12


def test_zero_probability_input_is_structured():
    rules = single_parse_rules()
    term = Tensor(np.array([[math.log(0.3)], [-np.inf]]))
    with pytest.raises(ZeroProbabilityError):
        inside(rules, term)


def test_minimum_length_two():
    rules = single_parse_rules()
    with pytest.raises(MinimumLengthError):
        inside(rules, Tensor(np.zeros((1, 1))))


def test_inside_matches_brute_force_randomly():
    rng = np.random.default_rng(11)
    for trial in range(30):
        n_nt = rng.integers(1, 5)
        n_pt = rng.integers(1, 4)
        rules = random_rules(rng, n_nt, n_pt, rng.integers(2, 11))
        n = rng.integers(2, 7)
        term, _ = random_term_lp(rules, rng, n)
        _, log_z = inside(rules, term)
        assert abs(log_z.item() - brute_force_logZ(rules, term)) < 1e-9, trial


def test_brute_force_vs_fully_naive_labeling_enumeration():
    # doubly-naive oracle: loop every shape x every labeling explicitly
    rng = np.random.default_rng(5)
    rules = random_rules(rng, 2, 2, 4)
    n_nt = rules.n_nonterminals
    term, _ = random_term_lp(rules, rng, 3)
    binary, start, t = rules.binary.data, rules.start.data, term.data

    def tree_logps(shape, sym):
        a, b, left, right = shape
        if left is None:
            yield t[a, sym - n_nt] if sym >= n_nt else -np.inf
            return
        if sym >= n_nt:
            yield -np.inf
            return
        s = binary.shape[1]
        for bs in range(s):
            for cs in range(s):
                for lp in tree_logps(left, bs):
                    for rp in tree_logps(right, cs):
                        yield binary[sym, bs, cs] + lp + rp

    logps = []
    for shape in iter_tree_shapes(0, 3):
        for a_sym in range(n_nt):
            logps.extend(start[a_sym] + p for p in tree_logps(shape, a_sym))
    naive = sp_lse(np.array(logps))
    assert abs(naive - brute_force_logZ(rules, term)) < 1e-9


def test_brute_force_refuses_above_cap():
    rng = np.random.default_rng(1)
    rules = random_rules(rng, 2, 2, 4)
    term, _ = random_term_lp(rules, rng, 8)
    with pytest.raises(ValueError, match="refused"):
        brute_force_logZ(rules, term)


def enum_marginals(rules, term):
    """Span marginals by explicit enumeration over all labeled trees."""
    n = term.shape[0]
    n_nt = rules.n_nonterminals
    binary, start, t = rules.binary.data, rules.start.data, np.asarray(term.data)

    def shape_logp(node):
        a, b, left, right = node
        if left is None:
            return t[a], True
        lv, lleaf = shape_logp(left)
        rv, rleaf = shape_logp(right)
        lsl = slice(n_nt, None) if lleaf else slice(0, n_nt)
        rsl = slice(n_nt, None) if rleaf else slice(0, n_nt)
        cand = binary[:, lsl, rsl] + lv[None, :, None] + rv[None, None, :]
        return sp_lse(cand.reshape(n_nt, -1), axis=1), False

    def spans_of(node, acc):
        a, b, left, right = node
        if left is not None:
            acc.append((a, b))
            spans_of(left, acc)
            spans_of(right, acc)
        return acc

    totals = {}
    z_terms = []
    for shape in iter_tree_shapes(0, n):
        vec, _ = shape_logp(shape)
        lp = sp_lse(start + vec)
        z_terms.append(lp)
        for span in spans_of(shape, []):
            totals.setdefault(span, []).append(lp)
    z = sp_lse(np.array(z_terms))
    return {s: math.exp(sp_lse(np.array(v)) - z) for s, v in totals.items()}


def test_marginals_forced_cases():
    rng = np.random.default_rng(2)
    rules = random_rules(rng, 3, 2, 6)
    term, _ = random_term_lp(rules, rng, 2)
    ch, _ = inside(rules, term)
    marg = outside_and_marginals(ch)
    assert marg.spans == [(0, 2)]
    assert abs(marg.value(0, 2) - 1.0) < 1e-12

    term5, _ = random_term_lp(rules, rng, 5)
    ch5, _ = inside(rules, term5)
    marg5 = outside_and_marginals(ch5)
    assert abs(marg5.value(0, 5) - 1.0) < 1e-9  # root always present
    assert abs(marg5.total() - 4.0) < 1e-6  # n - 1 internal spans


def test_marginals_match_enumeration_oracle():
    rng = np.random.default_rng(3)
    for trial in range(10):
        rules = random_rules(rng, rng.integers(1, 4), rng.integers(1, 3), 5)
        n = rng.integers(2, 6)
        term, _ = random_term_lp(rules, rng, n)
        ch, _ = inside(rules, term)
        marg = outside_and_marginals(ch)
        expected = enum_marginals(rules, term)
        for (a, b), want in expected.items():
            assert abs(marg.value(a, b) - want) < 1e-9, (trial, a, b)


def test_outside_marginals_match_chart_differentiation():
    rng = np.random.default_rng(4)
    for trial in range(10):
        rules = random_rules(rng, rng.integers(1, 5), rng.integers(1, 4), 6)
        n = rng.integers(2, 8)
        term, _ = random_term_lp(rules, rng, n)
        ch, _ = inside(rules, term)
        marg = outside_and_marginals(ch)
        oracle = marginals_via_inside_gradient(rules, term)
        assert marg.spans == oracle.spans
        diff = np.abs(marg.values.data - oracle.values.data).max()
        assert diff < 1e-8, trial
        assert np.all(marg.values.data <= 1.0 + 1e-9)
        assert np.all(marg.values.data >= 0.0)
        assert abs(marg.total() - (n - 1)) < 1e-6


def _marginals_from_matrix(m):
    n = m.shape[0] - 1
    spans = enumerate_spans(n, 2)
    return chart.SpanMarginals(
        n=n, spans=spans, values=Tensor(np.array([m[a, b] for a, b in spans]))
    )


def test_mbr_forced_right_branching():
    n = 5
    m = np.zeros((n + 1, n + 1))
    for a in range(n - 1):
        m[a, n] = 1.0
    tree = mbr_decode(_marginals_from_matrix(m))
    tree.validate(n)
    assert set(tree.internal_spans()) == {(a, n) for a in range(n - 1)}


def test_mbr_two_option_comparison():
    m = np.zeros((4, 4))
    m[0, 3] = 1.0
    m[0, 2] = 0.7
    m[1, 3] = 0.4
    tree = mbr_decode(_marginals_from_matrix(m))
    assert sorted(tree.internal_spans()) == [(0, 2), (0, 3)]


def test_mbr_matches_exhaustive_search():
    rng = np.random.default_rng(6)
    n = 6
    shapes = iter_tree_shapes(0, n)
    assert len(shapes) == 42  # C_5
    for trial in range(20):
        m = np.zeros((n + 1, n + 1))
        for a, b in enumerate_spans(n, 2):
            m[a, b] = rng.uniform()
        tree = mbr_decode(_marginals_from_matrix(m))

        def shape_score(node, acc=0.0):
            a, b, left, right = node
            if left is None:
                return 0.0
            return m[a, b] + shape_score(left) + shape_score(right)

        best = max(shape_score(s) for s in shapes)
        got = sum(m[a, b] for a, b in tree.internal_spans())
        assert abs(got - best) < 1e-12, trial


def test_viterbi_deterministic_grammar():
    # S->A certain; A -> T T certain; emissions certain
    rules = single_parse_rules()
    term = Tensor(np.log([[1.0], [1.0]]))
    tree, log_p = viterbi_decode(rules, term)
    tree.validate(2)
    assert abs(log_p) < 1e-12
    assert tree.label == 0
    assert tree.left.label == 0 and tree.right.label == 0  # preterminal ids


def test_viterbi_n2_direct_enumeration():
    rng = np.random.default_rng(7)
    rules = random_rules(rng, 3, 2, 5)
    term, _ = random_term_lp(rules, rng, 2)
    tree, log_p = viterbi_decode(rules, term)
    # direct argmax over A, T1, T2
    best = -np.inf
    for a_sym in range(3):
        for t1 in range(2):
            for t2 in range(2):
                v = (
                    rules.start.data[a_sym]
                    + rules.binary.data[a_sym, 3 + t1, 3 + t2]
                    + term.data[0, t1]
                    + term.data[1, t2]
                )
                best = max(best, v)
    assert abs(log_p - best) < 1e-12
    assert tree.label == int(
        np.argmax(
            rules.start.data
            + np.array(
                [
                    max(
                        rules.binary.data[a, 3 + t1, 3 + t2]
                        + term.data[0, t1]
                        + term.data[1, t2]
                        for t1 in range(2)
                        for t2 in range(2)
                    )
                    for a in range(3)
                ]
            )
        )
    )


def test_viterbi_probability_below_total():
    rng = np.random.default_rng(8)
    for trial in range(10):
        rules = random_rules(rng, 2, 2, 5)
        term, _ = random_term_lp(rules, rng, rng.integers(2, 7))
        _, log_z = inside(rules, term)
        _, log_p = viterbi_decode(rules, term)
        assert log_p <= log_z.item() + 1e-12, trial


def test_monotonicity_in_rule_mass():
    # raising an unnormalized binary rule used by some parse cannot lower log Z
    rng = np.random.default_rng(9)
    rules = random_rules(rng, 2, 2, 5)
    term, _ = random_term_lp(rules, rng, 4)
    _, base = inside(rules, term)
    bumped = rules.binary.data.copy()
    bumped[0, 0, 1] += 0.5  # more mass on A0 -> A0 T1 before renormalization
    rules2 = make_rules(rules.start.data, bumped, rules.terminal.data)
    _, more = inside(rules2, term)
    assert more.item() >= base.item() - 1e-12


def test_span_invariants():
    from pairgram.chart import Span

    s = Span(1, 4, symbol=2)
    assert s.width == 3
    with pytest.raises(ValueError):
        Span(3, 3)
    with pytest.raises(ValueError):
        Span(-1, 2)


def test_parse_tree_validation_and_serialization():
    tree = ParseTree(
        0,
        3,
        left=ParseTree(0, 2, left=ParseTree(0, 1), right=ParseTree(1, 2)),
        right=ParseTree(2, 3),
    )
    tree.validate(3)
    assert tree.internal_spans() == [(0, 2), (0, 3)]
    assert tree.to_span_text() == "(0,2) (0,3)"
    assert tree.to_sexpr(["a", "b", "c"]) == "((a b) c)"
    bad = ParseTree(0, 3, left=ParseTree(0, 1), right=ParseTree(2, 3))
    with pytest.raises(ValueError):
        bad.validate(3)


def test_inside_gradients_flow_to_rules():
    rng = np.random.default_rng(10)
    rules = random_rules(rng, 2, 2, 5, requires_grad=True)
    term, _ = random_term_lp(rules, rng, 4)
    _, log_z = inside(rules, term)
    grads = backward(log_z, wrt=[rules.binary, rules.start])
    assert np.abs(grads[rules.binary]).sum() > 0
    assert np.abs(grads[rules.start]).sum() > 0
