import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmix.mixpolicy import (
    Dataset,
    LabeledExample,
    MixPolicy,
    aggregate_soft_labels,
    build_batch,
    fair_sampling_spec,
    load_dataset,
    prevalence_ranking,
    real_weights,
    save_dataset,
    skew_dataset,
    threshold_confident,
    weight_w1,
    weight_w2,
)

SEX = ("sex", ("F", "M"))


def make_dataset(cells, n_classes=None, cats=("a0", "a1", "a2")):
    """cells: {(label, attr or None): count}."""
    examples = []
    for (y, a), n in sorted(cells.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
        examples += [LabeledExample([float(y), 0.0], y, None, [a]) for _ in range(n)]
    c = n_classes or 1 + max(y for y, _ in cells)
    return Dataset(examples, [f"c{i}" for i in range(c)], [("attr", cats)])


def sex_dataset(f=8972, m=1157, unknown=0):
    ex = [LabeledExample([0.0], i % 3, None, [0]) for i in range(f)]
    ex += [LabeledExample([1.0], i % 3, None, [1]) for i in range(m)]
    ex += [LabeledExample([2.0], 0, None, [None]) for _ in range(unknown)]
    return Dataset(ex, ["x", "y", "z"], [SEX])


class TestTypes:
    def test_soft_label_must_normalize(self):
        with pytest.raises(ValueError):
            LabeledExample([0.0], soft=[0.5, 0.6])

    def test_label_out_of_schema(self):
        with pytest.raises(ValueError):
            Dataset([LabeledExample([0.0], 3, None, [0])], ["a", "b"], [SEX])

    def test_attribute_out_of_schema(self):
        with pytest.raises(ValueError):
            Dataset([LabeledExample([0.0], 0, None, [2])], ["a"], [SEX])

    def test_policy_bounds(self):
        with pytest.raises(ValueError):
            MixPolicy(alpha_real=1.5)
        with pytest.raises(ValueError):
            MixPolicy(alpha_real=0.5, equality_level_l=-1)


class TestFairSpec:
    def test_product_construction(self):
        d = make_dataset({(0, 0): 70, (1, 1): 30})
        spec = fair_sampling_spec(d, 0)
        np.testing.assert_allclose(spec, [[0.7 / 3] * 3, [0.3 / 3] * 3], atol=1e-15)

    def test_point_mass(self):
        d = make_dataset({(0, 0): 5}, cats=("only",))
        np.testing.assert_array_equal(fair_sampling_spec(d, "attr"), [[1.0]])

    def test_skewed_sex_split_is_uniform(self):
        spec = fair_sampling_spec(sex_dataset(), "sex", exact=True)
        col = [sum(row[j] for row in spec) for j in range(2)]
        assert col == [Fraction(1, 2), Fraction(1, 2)]

    def test_exact_marginals(self):
        cells = {(0, 0): 3, (0, 2): 4, (1, 1): 2, (2, None): 5, (2, 0): 1}
        d = make_dataset(cells)
        spec = fair_sampling_spec(d, 0, exact=True)
        n = sum(cells.values())
        counts = [7, 2, 6]
        assert [sum(row) for row in spec] == [Fraction(c, n) for c in counts]
        assert [sum(row[j] for row in spec) for j in range(3)] == [Fraction(1, 3)] * 3
        assert all(isinstance(v, Fraction) for row in spec for v in row)

    def test_empty(self):
        with pytest.raises(ValueError):
            fair_sampling_spec(Dataset([], ["a"], [SEX]), 0)

    def test_missing_class(self):
        with pytest.raises(ValueError):
            fair_sampling_spec(make_dataset({(0, 0): 3}, n_classes=2), 0)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            fair_sampling_spec(make_dataset({(0, 0): 3}), 2)


class TestWeights:
    def test_w1_off(self):
        assert weight_w1(0.5, 0.1, 0.0) == 1.0

    def test_w1_importance(self):
        assert weight_w1(0.5, 0.1, 1.0) == pytest.approx(5.0, abs=1e-12)

    def test_w1_half(self):
        assert weight_w1(0.5, 0.1, 0.5) == pytest.approx(math.sqrt(5), abs=1e-12)
        assert round(weight_w1(0.5, 0.1, 0.5), 4) == 2.2361

    def test_w1_zero_train(self):
        with pytest.raises(ValueError):
            weight_w1(0.5, 0.0, 1.0)

    @given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0, 3), st.floats(0, 3))
    def test_w1_monotone_in_l(self, pf, pt, l1, l2):
        lo, hi = sorted((l1, l2))
        a, b = weight_w1(pf, pt, lo), weight_w1(pf, pt, hi)
        if pf > pt:
            assert b >= a
        elif pf < pt:
            assert b <= a

    def test_w2(self):
        rank = [3, 1, 0, 4, 2, 5]
        assert weight_w2(3, rank, 0) == 1.0
        assert weight_w2(3, rank, 4) == 0.0
        assert weight_w2(2, rank, 4) == 1.0
        assert weight_w2(4, rank, 4) == 0.0

    def test_prevalence_ranking_ties(self):
        d = make_dataset({(0, 0): 2, (1, 0): 5, (2, 0): 2})
        assert prevalence_ranking(d) == [1, 0, 2]

    def test_unknown_gets_unit_weight(self):
        d = make_dataset({(0, 0): 9, (0, 1): 1, (0, None): 4}, cats=("p", "q"))
        w = real_weights(d, MixPolicy(0.5, 1.0, 4, "attr"))
        attrs = np.array([ex.attrs[0] if ex.attrs[0] is not None else -1 for ex in d.examples])
        np.testing.assert_allclose(w[attrs == 0], 0.5 / 0.9)
        np.testing.assert_allclose(w[attrs == 1], 5.0)
        np.testing.assert_array_equal(w[attrs == -1], 1.0)


def constant_generator(calls):
    def gen(y, a, rng):
        calls.append((y, a))
        return [float(y), float(rng.random())]

    return gen


class TestBuildBatch:
    def setup_method(self):
        self.d = make_dataset({(0, 0): 30, (0, 1): 10, (1, 2): 20, (1, None): 5})

    def test_all_real_skips_generator(self):
        calls = []
        out = build_batch(self.d, constant_generator(calls), MixPolicy(1.0, 1.0, 4, "attr"), 200, 0)
        assert not calls
        assert all(ex.origin == "real" for ex, _ in out)
        w = real_weights(self.d, MixPolicy(1.0, 1.0, 4, "attr"))
        lookup = {id(ex): wi for ex, wi in zip(self.d.examples, w)}
        assert all(weight == lookup[id(ex)] for ex, weight in out)

    def test_filter_everything(self):
        out = build_batch(self.d, constant_generator([]), MixPolicy(0.0, 0.0, 2, "attr"), 50, 0)
        assert all(ex.origin == "generated" and w == 0.0 for ex, w in out)

    def test_real_fraction_concentrates(self):
        out = build_batch(self.d, constant_generator([]), MixPolicy(0.5, 0.0, 4, "attr"), 100_000, 1)
        frac = np.mean([ex.origin == "real" for ex, _ in out])
        assert abs(frac - 0.5) <= 0.01

    def test_generated_cells_follow_fair_target(self):
        calls = []
        build_batch(self.d, constant_generator(calls), MixPolicy(0.0, 0.0, 0, "attr"), 30_000, 2)
        freq = np.zeros((2, 3))
        for y, a in calls:
            freq[y, a] += 1
        np.testing.assert_allclose(freq / len(calls), fair_sampling_spec(self.d, 0), atol=0.01)

    def test_needs_generator(self):
        with pytest.raises(ValueError):
            build_batch(self.d, None, MixPolicy(0.9), 10, 0)

    def test_deterministic(self):
        a = build_batch(self.d, constant_generator([]), MixPolicy(0.3, 0.5, 1, "attr"), 100, 5)
        b = build_batch(self.d, constant_generator([]), MixPolicy(0.3, 0.5, 1, "attr"), 100, 5)
        assert [(e.features.tolist(), e.label, w) for e, w in a] == [(e.features.tolist(), e.label, w) for e, w in b]

    def test_no_axis_keeps_label_prior(self):
        calls = []
        build_batch(self.d, constant_generator(calls), MixPolicy(0.0), 20_000, 3)
        assert all(a is None for _, a in calls)
        assert np.mean([y == 0 for y, _ in calls]) == pytest.approx(40 / 65, abs=0.01)


class TestSkew:
    def test_cap_above_count(self):
        d = sex_dataset(50, 20)
        assert skew_dataset(d, "sex", {"M": 20}, 0) == d

    def test_table_split(self):
        out = skew_dataset(sex_dataset(), "sex", {"M": 115}, 0)
        assert out.attribute_counts("sex") == {0: 8972, 1: 115}

    def test_cap_zero(self):
        out = skew_dataset(sex_dataset(100, 40), 0, {1: 0}, 0)
        assert out.attribute_counts(0) == {0: 100}

    def test_unknown_never_removed(self):
        out = skew_dataset(sex_dataset(30, 30, unknown=7), "sex", {"F": 0, "M": 0, "UNKNOWN": 0}, 0)
        assert out.attribute_counts("sex") == {None: 7}

    def test_deterministic_and_order_preserving(self):
        d = sex_dataset(10, 300)
        a = skew_dataset(d, "sex", {"M": 50}, 4)
        b = skew_dataset(d, "sex", {"M": 50}, 4)
        assert a == b
        ids = {id(ex): i for i, ex in enumerate(d.examples)}
        pos = [ids[id(ex)] for ex in a.examples]
        assert pos == sorted(pos)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 50), st.integers(0, 100))
    def test_never_increases_and_leaves_uncapped(self, f, m, cap, seed):
        d = sex_dataset(f, m, unknown=3)
        out = skew_dataset(d, "sex", {"M": cap}, seed)
        counts = out.attribute_counts("sex")
        assert counts.get(1, 0) == min(m, cap)
        assert counts.get(0, 0) == f and counts[None] == 3


WORKED = [[("A", 4), ("B", 3)], [("A", 3), ("D", 4)]]


class TestSoftLabels:
    def test_worked_example(self):
        soft = aggregate_soft_labels(WORKED, ["A", "B", "C", "D"])
        np.testing.assert_allclose(soft, [0.5, 0.1667, 0.0, 0.3333], atol=5e-4)
        np.testing.assert_allclose(soft, [1 / 2, 1 / 6, 0, 1 / 3], atol=1e-15)

    def test_single_rater(self):
        np.testing.assert_array_equal(aggregate_soft_labels([[(2, 5)]], 4), [0, 0, 1, 0])

    def test_agreeing_raters(self):
        np.testing.assert_array_equal(aggregate_soft_labels([[(1, 2)], [(1, 4)]], 3), [0, 1, 0])

    def test_ties_by_listing_order(self):
        soft = aggregate_soft_labels([[(0, 3), (1, 3)]], 2)
        np.testing.assert_allclose(soft, [2 / 3, 1 / 3])

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate_soft_labels([], 3)
        with pytest.raises(ValueError):
            aggregate_soft_labels([[(0, 6)]], 3)
        with pytest.raises(ValueError):
            aggregate_soft_labels([[(0, 1), (1, 1), (2, 1), (3, 1)]], 4)
        with pytest.raises(ValueError):
            aggregate_soft_labels([[(0, 1), (0, 2)]], 4)

    @given(st.permutations(range(5)), st.data())
    def test_permutation_equivariant(self, perm, data):
        rater = st.lists(st.tuples(st.integers(0, 4), st.integers(1, 5)), min_size=1, max_size=3,
                         unique_by=lambda p: p[0])
        ratings = data.draw(st.lists(rater, min_size=1, max_size=4))
        base = aggregate_soft_labels(ratings, 5)
        moved = aggregate_soft_labels([[(perm[c], k) for c, k in r] for r in ratings], 5)
        np.testing.assert_allclose(moved[list(perm)], base, atol=1e-15)


class TestThreshold:
    def setup_method(self):
        soft = aggregate_soft_labels(WORKED, ["A", "B", "C", "D"])
        ex = [LabeledExample([0.0], soft=soft), LabeledExample([1.0], 3)]
        self.d = Dataset(ex, ["A", "B", "C", "D"])

    def test_strict_threshold_excludes(self):
        assert len(threshold_confident(self.d, 0, 0.9)) == 0

    def test_lower_threshold_includes(self):
        out = threshold_confident(self.d, 0, 0.5)
        assert len(out) == 1 and out.examples[0].soft is not None

    def test_point_mass_at_one(self):
        assert len(threshold_confident(self.d, 3, 1.0)) == 1

    def test_no_condition_passes_strict(self):
        assert all(len(threshold_confident(self.d.with_examples(self.d.examples[:1]), c, 0.9)) == 0 for c in range(4))

    def test_errors(self):
        with pytest.raises(ValueError):
            threshold_confident(self.d, 4, 0.5)
        with pytest.raises(ValueError):
            threshold_confident(self.d, 0, 0.0)


class TestJsonLines:
    def test_round_trip(self, tmp_path):
        ex = [LabeledExample([1.0, 2.0], 1, None, [1]),
              LabeledExample([0.5, 0.5], None, [0.25, 0.75], [None], "generated")]
        d = Dataset(ex, ["neg", "pos"], [SEX])
        save_dataset(d, tmp_path / "d.jsonl")
        back = load_dataset(tmp_path / "d.jsonl")
        assert back.class_names == d.class_names and back.attribute_schemas == d.attribute_schemas
        assert [e.attrs for e in back.examples] == [(1,), (None,)]
        np.testing.assert_array_equal(back.examples[1].soft, [0.25, 0.75])
        assert back.examples[1].origin == "generated"

    def test_without_schema(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"features":[0],"label":2,"attrs":{"sex":"M"}}\n'
                     '{"features":[1],"label":0,"attrs":{"sex":"UNKNOWN"}}\n'
                     '{"features":[1],"label":1,"attrs":{"sex":"F"}}\n')
        d = load_dataset(p)
        assert d.n_classes == 3 and d.categories("sex") == ("F", "M")
        assert [e.attrs[0] for e in d.examples] == [1, None, 0]

    def test_bad_line_reports_number(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"features":[0],"label":0}\n{"features": oops}\n')
        with pytest.raises(ValueError, match="line 2"):
            load_dataset(p)

    def test_bad_soft_reports_number(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"features":[0],"label":0}\n\n{"features":[0],"soft":[0.5,0.6]}\n')
        with pytest.raises(ValueError, match="line 3"):
            load_dataset(p)
