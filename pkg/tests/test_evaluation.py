import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echoview.evaluation import (
    UNDEFINED,
    ConfusionMatrix,
    aggregate_splits,
    compare_methods,
    comparison_svg,
    evaluate,
    format_mean_std,
    median_pct_diff,
    metrics_from_confusion,
    pct_diff,
    predict,
    read_report_csv,
    table2_text,
    table3_text,
    write_comparison_csv,
    write_report_csv,
)
from echoview.model import ModelConfig, build_model

K = 13


def cm_from(grid):
    c = np.zeros((K, K), np.int64)
    g = np.asarray(grid)
    c[: g.shape[0], : g.shape[1]] = g
    return ConfusionMatrix(c)


def random_cm(rng, low=0, high=20):
    return ConfusionMatrix(rng.integers(low, high, size=(K, K)))


def test_perfect_and_constant_predictors():
    truth = np.repeat(np.arange(K), 2)
    cm = ConfusionMatrix.from_predictions(truth, truth)
    assert np.array_equal(cm.counts, np.diag(np.full(K, 2))) and np.trace(cm.counts) == 26
    const = ConfusionMatrix.from_predictions(truth, np.full(26, 4))
    assert np.count_nonzero(const.counts.sum(axis=0)) == 1 and const.counts[:, 4].sum() == 26


def test_confusion_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(-np.ones((K, K), np.int64))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((3, 3), np.int64))


def test_hand_computed_two_class():
    r = metrics_from_confusion(cm_from([[8, 2], [1, 9]]))
    c0 = r.per_class[0]
    assert c0.precision == pytest.approx(8 / 9, abs=1e-12)
    assert c0.recall == pytest.approx(0.8, abs=1e-12)
    assert c0.f1 == pytest.approx(0.8421, abs=1e-4)
    assert r.macro["f1"] == pytest.approx((c0.f1 + r.per_class[1].f1) / 2)


def test_empty_class_zero_and_excluded_from_macro():
    r = metrics_from_confusion(cm_from([[5, 0], [0, 5]]))
    assert r.per_class[7].precision == r.per_class[7].recall == r.per_class[7].f1 == 0.0
    assert not r.per_class[7].present
    assert r.macro["f1"] == 1.0


def test_predicted_but_absent_class_counts_in_macro():
    r = metrics_from_confusion(cm_from([[4, 1], [0, 0]]))
    assert r.per_class[1].present
    assert r.macro["f1"] == pytest.approx((r.per_class[0].f1 + 0.0) / 2)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_diagonal_always_one(seed):
    d = np.random.default_rng(seed).integers(1, 50, size=K)
    r = metrics_from_confusion(ConfusionMatrix(np.diag(d)))
    assert all(c.precision == c.recall == c.f1 == 1.0 for c in r.per_class)
    assert r.macro["f1"] == r.accuracy == 1.0


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_accuracy_equals_weighted_recall(seed):
    cm = random_cm(np.random.default_rng(seed))
    r = metrics_from_confusion(cm)
    assert r.accuracy == pytest.approx(r.weighted["recall"], abs=1e-12)
    assert r.accuracy == pytest.approx(np.trace(cm.counts) / cm.total, abs=1e-15)
    for c in r.per_class:
        assert 0 <= c.precision <= 1 and 0 <= c.recall <= 1 and 0 <= c.f1 <= 1


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_f1_invariant_to_evaluation_order(seed):
    rng = np.random.default_rng(seed)
    t, p = rng.integers(0, K, 200), rng.integers(0, K, 200)
    perm = rng.permutation(200)
    a = metrics_from_confusion(ConfusionMatrix.from_predictions(t, p))
    b = metrics_from_confusion(ConfusionMatrix.from_predictions(t[perm], p[perm]))
    assert np.array_equal(a.f1s(), b.f1s())


def test_model_evaluation_counts_every_frame(tiny_dataset, rng):
    from echoview.dataset import load_frames, load_manifest

    fs = load_frames(load_manifest(tiny_dataset / "manifest.csv"), 32)
    enc, _, cls = build_model(ModelConfig(input_size=32, block_channels=(2, 2, 2, 2, 2), fc_hidden=4), seed=1)
    cm = evaluate(enc, cls, fs)
    assert cm.total == len(fs)
    assert np.array_equal(cm.counts.sum(axis=1), np.bincount(fs.labels, minlength=K))
    assert len(predict(enc, cls, fs.images[:3])) == 3
    with pytest.raises(ValueError):
        evaluate(enc, cls, fs.subset([]))


def test_argmax_ties_pick_lowest_index(rng):
    enc, _, cls = build_model(ModelConfig(input_size=32, block_channels=(2, 2, 2, 2, 2), fc_hidden=4), seed=1)
    cls.params["classifier.fc1.weight"].data[...] = 0
    cls.params["classifier.fc1.bias"].data[...] = 0
    assert np.array_equal(predict(enc, cls, rng.random((5, 1, 32, 32)).astype(np.float32)), np.zeros(5))


# ---- aggregation


def test_identical_reports_zero_std(rng):
    r = metrics_from_confusion(random_cm(rng))
    agg = aggregate_splits([r, r, r])
    assert np.all(agg.class_std == 0) and agg.macro_std["f1"] == 0


def test_two_point_mean_std():
    a = metrics_from_confusion(cm_from([[8, 2], [2, 8]]))  # F1 0.8
    b = metrics_from_confusion(cm_from([[9, 1], [1, 9]]))  # F1 0.9
    agg = aggregate_splits([a, b])
    assert agg.macro_mean["f1"] == pytest.approx(0.85)
    assert agg.macro_std["f1"] == pytest.approx(0.05)


def test_eight_reports_match_direct(rng):
    reports = [metrics_from_confusion(random_cm(rng)) for _ in range(8)]
    agg = aggregate_splits(reports)
    f1 = np.stack([r.f1s() for r in reports])
    np.testing.assert_allclose(agg.class_mean[:, 2], f1.mean(0), rtol=1e-12)
    np.testing.assert_allclose(agg.class_std[:, 2], f1.std(0), rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        aggregate_splits([])


def test_mean_std_formatting():
    assert format_mean_std(0.874, 0.01) == "0.874₍.₀₁₎"
    assert format_mean_std(0.5, 0.0) == "0.500₍.₀₀₎"


# ---- comparison


def test_pct_diff_table_values():
    assert pct_diff(0.570, 0.719) == pytest.approx(26.1, abs=0.05)
    assert pct_diff(0.990, 0.952) == pytest.approx(-3.8, abs=0.05)
    assert pct_diff(0.0, 0.4) == UNDEFINED


def test_compare_self_is_zero(rng):
    r = metrics_from_confusion(random_cm(rng, low=1))
    cmp = compare_methods(r, r)
    assert all(d == 0 for d in cmp.pct_diff) and not any(cmp.flagged)


def test_compare_flags_and_undefined():
    a = metrics_from_confusion(cm_from([[5, 5, 0], [0, 10, 0], [0, 0, 0]]))
    b = metrics_from_confusion(cm_from([[10, 0, 0], [0, 10, 0], [0, 0, 0]]))
    cmp = compare_methods(a, b, threshold=10)
    assert cmp.flagged[0] and cmp.pct_diff[0] > 10
    assert cmp.flagged == [d != UNDEFINED and abs(d) > 10 for d in cmp.pct_diff]
    assert cmp.pct_diff[2] == UNDEFINED and not cmp.flagged[2]
    text = table3_text(cmp)
    assert "undefined" in text and text.splitlines()[1].split()[:2] == ["2ch", "yes"]


def test_median_pct_diff():
    assert median_pct_diff([1.0, 3.0, UNDEFINED]) == 2.0
    assert median_pct_diff([UNDEFINED]) == UNDEFINED


def test_report_csv_round_trip(tmp_path, rng):
    reports = {f"split_{i}": metrics_from_confusion(random_cm(rng)) for i in range(2)}
    write_report_csv(tmp_path / "r.csv", reports)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "class,contrast,split,precision,recall,f1"
    rows = read_report_csv(tmp_path / "r.csv")
    for split, rep in reports.items():
        mine = [r for r in rows if r["split"] == split and r["class"] not in ("macro", "weighted")]
        assert len(mine) == K
        for row, c in zip(mine, rep.per_class):
            assert (row["precision"], row["recall"], row["f1"]) == (c.precision, c.recall, c.f1)
        macro = next(r for r in rows if r["split"] == split and r["class"] == "macro")
        assert macro["f1"] == rep.macro["f1"]


def test_comparison_outputs(tmp_path, rng):
    a = aggregate_splits([metrics_from_confusion(random_cm(rng, low=1)) for _ in range(2)])
    b = aggregate_splits([metrics_from_confusion(random_cm(rng, low=1)) for _ in range(2)])
    cmp = compare_methods(a, b, sizes=list(range(K)))
    write_comparison_csv(tmp_path / "c.csv", cmp)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].split(",")[:5] == ["class", "contrast", "f1_baseline", "f1_supcon", "pct_diff"]
    assert len(lines) == K + 1
    svg = comparison_svg(cmp)
    assert svg.startswith("<svg") and svg.count("<rect") >= K
    t2 = table2_text({"baseline": a, "supcon": b})
    assert "₍" in t2 and "baseline" in t2
