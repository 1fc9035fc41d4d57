import numpy as np
import pytest

from pairgram import synthgen
from pairgram.synthgen import (
    DatasetFormatError,
    GrammarNotTightError,
    GroundTruthGrammar,
    corpus_stats,
    default_categories,
    generate_corpus,
    read_dataset,
    sample_instance,
    validate_instance,
    write_dataset,
)


def tiny_grammar(**kw):
    defaults = dict(
        category="toy",
        start_rules=[("ROOT", 1.0)],
        binary_rules={"ROOT": [(("leg", "leg"), 1.0)]},
        tags=["leg", "bar"],
        tag_means=np.array([[4.0, 0.0], [0.0, 4.0]]),
        feature_scale=0.0,
        phrase_templates={
            "leg": [((0, 1), 1.0)],
            "bar": [((2,), 1.0)],
        },
        vocab_size=3,
    )
    defaults.update(kw)
    return GroundTruthGrammar(**defaults)


def test_deterministic_grammar_identical_every_seed():
    gt = tiny_grammar()
    a = sample_instance(gt, seed=1)
    b = sample_instance(gt, seed=999)
    assert a.tokens == b.tokens == [0, 1, 0, 1]
    assert np.array_equal(a.parts, b.parts)
    assert a.gold_lang_tree == b.gold_lang_tree == [(0, 2), (0, 4), (2, 4)]
    assert a.gold_vis_tree == b.gold_vis_tree == [(0, 2)]
    assert a.gold_part_tags == [0, 0]


def test_default_sizes_follow_desk_scale_medians():
    train, _ = generate_corpus(default_categories(seed=0), 400, 40, seed=7)
    stats = corpus_stats(train)
    assert stats["median_parts"] == 7
    assert 6 <= stats["median_rules"] <= 9
    assert 13 <= stats["median_tokens"] <= 19
    per_cat = {
        c: corpus_stats([i for i in train if i.category == c])["median_parts"]
        for c in ("alpha", "beta", "gamma", "delta")
    }
    assert per_cat == {"alpha": 8, "beta": 6, "gamma": 9, "delta": 3}


def test_rule_frequency_estimation():
    gt = tiny_grammar(
        binary_rules={"ROOT": [(("leg", "leg"), 0.6), (("bar", "bar"), 0.4)]}
    )
    seeds = np.random.SeedSequence(5).spawn(1000)
    hits = sum(sample_instance(gt, s).gold_part_tags == [0, 0] for s in seeds)
    assert abs(hits / 1000 - 0.6) <= 0.03


def test_split_sizes_and_determinism(tmp_path):
    gts = default_categories(seed=0)
    train, test = generate_corpus(gts, 80, 20, seed=3)
    assert len(train) == 80 and len(test) == 20
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(p1, train)
    train2, _ = generate_corpus(gts, 80, 20, seed=3)
    write_dataset(p2, train2)
    assert p1.read_bytes() == p2.read_bytes()


def test_holdout_categories_excluded_from_train_only():
    gts = default_categories(seed=0)
    train, test = generate_corpus(
        gts, 40, 40, seed=3, holdout_categories=("gamma", "delta")
    )
    assert {i.category for i in train} == {"alpha", "beta"}
    assert {i.category for i in test} == {"alpha", "beta", "gamma", "delta"}
    with pytest.raises(ValueError):
        generate_corpus(gts, 10, 10, seed=0, holdout_categories=("nope",))
    with pytest.raises(ValueError):
        generate_corpus(gts, 0, 10, seed=0)


def test_round_trip_identity(tmp_path):
    _, test = generate_corpus(default_categories(seed=1), 10, 100, seed=11)
    path = tmp_path / "d.jsonl"
    write_dataset(path, test)
    back = read_dataset(path)
    assert len(back) == len(test)
    for x, y in zip(test, back):
        assert x.id == y.id and x.category == y.category
        assert x.tokens == y.tokens
        assert np.array_equal(x.parts, y.parts)  # exact float round-trip
        assert x.gold_lang_tree == y.gold_lang_tree
        assert x.gold_vis_tree == y.gold_vis_tree
        assert x.gold_part_tags == y.gold_part_tags


def test_malformed_record_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = (
        '{"id": "x", "category": "c", "tokens": [1, 2], "parts": [[0.0], [1.0]], '
        '"gold_lang_tree": [[0, 2]], "gold_vis_tree": [[0, 2]], "gold_part_tags": [0, 1]}'
    )
    path.write_text(good + "\n" + "{not json}\n")
    with pytest.raises(DatasetFormatError, match="line 2"):
        read_dataset(path)
    path.write_text(good.replace('"gold_part_tags": [0, 1]', '"oops": 1') + "\n")
    with pytest.raises(DatasetFormatError, match="line 1.*gold_part_tags"):
        read_dataset(path)


def test_empty_file_is_empty_corpus(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_dataset(path) == []


def test_gold_trees_satisfy_structural_invariants():
    train, test = generate_corpus(default_categories(seed=2), 60, 20, seed=5)
    for inst in train + test:
        validate_instance(inst)


def test_four_sigma_features_nearest_mean_separable():
    gts = default_categories(seed=4, separation=4.0)
    train, _ = generate_corpus(gts, 200, 10, seed=6)
    means = gts[0].tag_means
    feats = np.concatenate([i.parts for i in train])
    tags = np.concatenate([i.gold_part_tags for i in train])
    pred = np.argmin(((feats[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    assert (pred == tags).mean() >= 0.99


def test_depth_cap_resamples_and_counts():
    synthgen.reset_depth_rejections()
    gt = tiny_grammar(
        binary_rules={
            "ROOT": [(("ROOT", "ROOT"), 0.6), (("leg", "leg"), 0.4)],
        },
        max_depth=3,
    )
    inst = sample_instance(gt, seed=12)
    validate_instance(inst)
    assert synthgen.depth_rejections() >= 0  # counter exists and did not explode

    hopeless = tiny_grammar(
        binary_rules={"ROOT": [(("ROOT", "ROOT"), 1.0)]}, max_depth=4
    )
    with pytest.raises(GrammarNotTightError):
        sample_instance(hopeless, seed=0)


def test_untight_probabilities_rejected():
    gt = tiny_grammar(binary_rules={"ROOT": [(("leg", "leg"), 0.5)]})
    with pytest.raises(GrammarNotTightError):
        sample_instance(gt, seed=0)


def test_token_swap_breaks_language_order_only():
    gt = tiny_grammar(
        binary_rules={"ROOT": [(("leg", "bar"), 1.0)]},
        token_swap_prob=1.0,
    )
    inst = sample_instance(gt, seed=3)
    assert inst.gold_part_tags == [0, 1]  # vision order untouched
    assert inst.tokens == [2, 0, 1]  # bar phrase now precedes leg phrase
