import json
import random

import pytest

from cirque import QueryAnnotation, average_precision_at_k, evaluate, recall_at_k
from cirque.errors import EmptyTargets, MissingRanking, MissingSubset
from cirque.metrics import (
    circo_to_annotations,
    cirr_to_annotations,
    fashioniq_to_annotations,
    genecis_to_annotations,
    load_annotations,
    parse_metric_spec,
    render_table,
    report_to_dict,
    save_annotations,
)


def ap_oracle(ranking, targets, k):
    """Independent brute force: direct summation straight from the definition."""
    hits = 0
    total = 0.0
    for j in range(min(k, len(ranking))):
        if ranking[j] in targets:
            hits += 1
            total += hits / (j + 1)
    return total / min(len(targets), k)


def _ann(qid, targets, subset=None, group=None):
    return QueryAnnotation(
        query_id=qid,
        reference_id=f"ref-{qid}",
        modification_text="change it",
        target_ids=frozenset(targets),
        subset_ids=tuple(subset) if subset else None,
        group=group,
    )


# recall ---------------------------------------------------------------------


def test_recall_hit_at_rank_zero():
    assert recall_at_k(["t", "x"], {"t"}, 1) == 1


def test_recall_boundary_is_exclusive():
    # rank 5 (0-based) is outside the top-5 window
    ranking = ["a", "b", "c", "d", "e", "t"]
    assert recall_at_k(ranking, {"t"}, 5) == 0
    assert recall_at_k(ranking, {"t"}, 6) == 1


def test_recall_any_of_multiple_targets():
    assert recall_at_k(["a", "t2", "b"], {"t1", "t2"}, 3) == 1


def test_recall_monotone_in_k():
    rng = random.Random(5)
    for _ in range(100):
        ranking = [f"i{j}" for j in range(20)]
        rng.shuffle(ranking)
        targets = set(rng.sample(ranking, 3))
        values = [recall_at_k(ranking, targets, k) for k in range(1, 21)]
        assert values == sorted(values)


# average precision ------------------------------------------------------------


def test_ap_perfect_single_target():
    assert average_precision_at_k(["t", "a", "b", "c", "d"], {"t"}, 5) == 1.0


def test_ap_single_target_at_rank_one():
    assert average_precision_at_k(["a", "t", "b", "c", "d"], {"t"}, 5) == 0.5


def test_ap_two_targets_worked_example():
    value = average_precision_at_k(["t1", "a", "t2", "b", "c"], {"t1", "t2"}, 5)
    assert value == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)
    assert value == pytest.approx(0.8333, abs=5e-5)


def test_ap_empty_targets_rejected():
    with pytest.raises(EmptyTargets):
        average_precision_at_k(["a"], set(), 5)


def test_ap_best_order_with_all_targets_in_window_is_one():
    assert average_precision_at_k(["t1", "t2", "t3", "a", "b"], {"t1", "t2", "t3"}, 5) == 1.0


def test_ap_matches_brute_force_oracle():
    rng = random.Random(99)
    for _ in range(1000):
        n = rng.randrange(1, 50)
        ranking = [f"i{j}" for j in range(n)]
        rng.shuffle(ranking)
        targets = set(rng.sample(ranking, rng.randrange(1, min(5, n) + 1)))
        k = rng.randrange(1, 60)
        got = average_precision_at_k(ranking, targets, k)
        assert got == pytest.approx(ap_oracle(ranking, targets, k), abs=1e-9)


def test_ap_promoting_a_target_never_hurts():
    rng = random.Random(17)
    for _ in range(200):
        ranking = [f"i{j}" for j in range(12)]
        rng.shuffle(ranking)
        targets = set(rng.sample(ranking, 3))
        k = rng.randrange(1, 14)
        target_positions = [i for i, gid in enumerate(ranking) if gid in targets and i > 0]
        if not target_positions:
            continue
        pos = rng.choice(target_positions)
        promoted = ranking.copy()
        promoted[pos - 1], promoted[pos] = promoted[pos], promoted[pos - 1]
        assert average_precision_at_k(promoted, targets, k) >= average_precision_at_k(
            ranking, targets, k
        ) - 1e-12


# evaluate ----------------------------------------------------------------------


def test_evaluate_simple_mean():
    annotations = [_ann("q1", {"t1"}), _ann("q2", {"t2"})]
    rankings = {"q1": ["t1", "x"], "q2": ["x", "t2"]}
    report = evaluate(rankings, annotations, [("recall", 1)])
    assert report.per_metric == {"R@1": 50.0}
    assert report.query_count == 2


def test_evaluate_five_query_fixture_frozen_values():
    # frozen via the ap_oracle + hand recall counts
    annotations = [
        _ann("q1", {"t1"}),
        _ann("q2", {"t2"}),
        _ann("q3", {"t3"}),
        _ann("q4", {"t4a", "t4b"}),
        _ann("q5", {"t5a", "t5b", "t5c"}),
    ]
    rankings = {
        "q1": ["t1", "a", "b", "c", "d", "e", "f", "g"],
        "q2": ["a", "t2", "b", "c", "d", "e", "f", "g"],
        "q3": ["a", "b", "c", "d", "e", "f", "g", "t3"],
        "q4": ["t4a", "a", "t4b", "b", "c", "d", "e", "f"],
        "q5": ["a", "t5a", "b", "t5b", "t5c", "c", "d", "e"],
    }
    report = evaluate(
        rankings, annotations, [("recall", 1), ("recall", 5), ("map", 5)]
    )
    assert report.per_metric["R@1"] == 40.0
    assert report.per_metric["R@5"] == 80.0
    assert report.per_metric["mAP@5"] == 57.33


def test_evaluate_groups_and_cross_group_average():
    annotations = [
        _ann("d1", {"t1"}, group="dress"),
        _ann("d2", {"t2"}, group="dress"),
        _ann("s1", {"t3"}, group="shirt"),
        _ann("p1", {"t4"}, group="toptee"),
    ]
    rankings = {
        "d1": ["t1"], "d2": ["x"], "s1": ["t3"], "p1": ["t4"],
    }
    report = evaluate(rankings, annotations, [("recall", 1)])
    assert report.per_group == {
        "dress": {"R@1": 50.0},
        "shirt": {"R@1": 100.0},
        "toptee": {"R@1": 100.0},
    }
    # cross-group average weighs each category once, not each query
    assert report.group_average == {"R@1": pytest.approx(83.33)}
    assert report.per_metric == {"R@1": 75.0}


def test_evaluate_subset_metric_uses_restricted_ranking():
    ann = _ann("q", {"t"}, subset=["t", "n1", "n2"])
    rankings = {"q": ["x1", "n1", "x2", "t", "n2"]}
    report = evaluate(rankings, [ann], [("recall_subset", 1), ("recall", 1)])
    # restricted order is [n1, t, n2], so subset R@1 misses but R@2 would hit
    assert report.per_metric["R_subset@1"] == 0.0
    report2 = evaluate(rankings, [ann], [("recall_subset", 2)])
    assert report2.per_metric["R_subset@2"] == 100.0


def test_evaluate_missing_inputs():
    ann = _ann("q", {"t"})
    with pytest.raises(MissingRanking):
        evaluate({}, [ann], [("recall", 1)])
    with pytest.raises(MissingSubset):
        evaluate({"q": ["t"]}, [ann], [("recall_subset", 1)])


def test_subset_without_target_warns(caplog):
    import logging

    with caplog.at_level(logging.WARNING):
        _ann("q", {"t"}, subset=["a", "b"])
    assert any("none of its targets" in rec.message for rec in caplog.records)


def test_report_rendering_and_parse_spec(tmp_path):
    annotations = [_ann("q1", {"t"}, group="g1"), _ann("q2", {"t"}, group="g2")]
    report = evaluate({"q1": ["t"], "q2": ["x"]}, annotations, parse_metric_spec("R@1,mAP@1"))
    table = render_table(report)
    assert "R@1" in table and "overall" in table and "average" in table
    payload = report_to_dict(report)
    assert payload["metrics"]["R@1"] == 50.0
    assert payload["query_count"] == 2


# annotation ingestion -------------------------------------------------------------


def test_generic_annotation_round_trip(tmp_path):
    annotations = [
        _ann("q1", {"t1", "t2"}, subset=["t1", "n"], group="g"),
        _ann("q2", {"t3"}),
    ]
    path = tmp_path / "ann.json"
    save_annotations(annotations, path)
    loaded = load_annotations(path)
    assert loaded == annotations


def test_cirr_adapter_drops_reference_from_subset():
    raw = [
        {
            "pairid": 7,
            "reference": "ref.png",
            "caption": "add a second bird",
            "target_hard": "tgt.png",
            "img_set": {"members": ["ref.png", "tgt.png", "n1.png", "n2.png"]},
        }
    ]
    (ann,) = cirr_to_annotations(raw)
    assert ann.query_id == "7"
    assert ann.subset_ids == ("tgt.png", "n1.png", "n2.png")
    assert ann.target_ids == frozenset({"tgt.png"})


def test_circo_adapter_collects_all_ground_truths():
    raw = [
        {
            "id": 3,
            "reference_img_id": 111,
            "relative_caption": "has two dogs instead",
            "target_img_id": 222,
            "gt_img_ids": [222, 333, 444],
        }
    ]
    (ann,) = circo_to_annotations(raw)
    assert ann.target_ids == frozenset({"222", "333", "444"})
    assert ann.subset_ids is None


def test_fashioniq_adapter_joins_two_captions_in_order():
    raw = [{"candidate": "B001", "target": "B002", "captions": ["is red", "has long sleeves"]}]
    (ann,) = fashioniq_to_annotations(raw, "dress")
    assert ann.modification_text == "is red, has long sleeves"
    assert ann.group == "dress"


def test_genecis_adapter_sets_task_group_and_gallery_subset():
    raw = [{"reference": "r1", "condition": "focus on color", "target": "g2",
            "gallery": ["g1", "g2", "g3"]}]
    (ann,) = genecis_to_annotations(raw, "focus_attribute")
    assert ann.group == "focus_attribute"
    assert ann.subset_ids == ("g1", "g2", "g3")
