import pytest
from hypothesis import given, strategies as st

from formkie.assignment import KeyValue
from formkie.evaluation import (
    Metrics,
    Sample,
    TemplateMismatch,
    evaluate,
    format_table,
    pooled,
    run_ablation,
    score_extraction,
)
from formkie.synth import EntryTruth, GroundTruth, NoiseModel, generate_filled_form


def test_table_row_arithmetic():
    m = Metrics(2312, 92, 172)
    assert m.precision == pytest.approx(0.962, abs=1e-3)
    assert m.recall == pytest.approx(0.931, abs=1e-3)
    assert m.f1 == pytest.approx(0.946, abs=1e-3)


def test_degenerate_metrics():
    assert Metrics(5, 0, 0).f1 == 1.0
    z = Metrics(0, 0, 7)
    assert (z.precision, z.recall, z.f1) == (0, 0, 0)
    assert Metrics().f1 == 0


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_metric_identities(tp, fp, fn):
    m = Metrics(tp, fp, fn)
    for v in (m.precision, m.recall, m.f1):
        assert 0 <= v <= 1
    if tp:
        assert m.precision == tp / (tp + fp) and m.recall == tp / (tp + fn)
        assert m.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn))
        assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12
    else:
        assert m.f1 == 0


def _truth(*entries):
    return GroundTruth("s", "c", tuple(EntryTruth(k, v is not None, v) for k, v in entries))


def _out(*pairs):
    return [KeyValue(k, v, None, None) for k, v in pairs]


def test_scoring_rules():
    truth = _truth(("a", "1"), ("b", "2"), ("c", None), ("d", "4"))
    out = _out(("a", "1"), ("b", "x"), ("c", "y"), ("d", None))
    assert score_extraction(truth, out) == Metrics(tp=1, fp=2, fn=2)
    assert score_extraction(truth, _out(("a", "1"), ("b", "2"), ("c", None), ("d", "4"))) == Metrics(3, 0, 0)
    none = score_extraction(truth, _out(("a", None), ("b", None), ("c", None), ("d", None)))
    assert (none.precision, none.recall) == (0, 0)


def test_mismatch():
    with pytest.raises(TemplateMismatch):
        score_extraction(_truth(("a", "1")), _out(("a", "1"), ("b", None)))
    with pytest.raises(TemplateMismatch):
        score_extraction(_truth(("a", "1")), _out(("z", "1")))


def test_pooled_mean_row():
    # six per-class (tp, tp+fp, tp+fn) rows; pooling the counts gives the mean row
    raw = {
        "aicf_pg1": (2312, 2404, 2484),
        "aicf_pg2": (1304, 1372, 1390),
        "aicf_v1": (182, 205, 217),
        "hicf_pg1": (393, 412, 422),
        "hicf_pg2": (307, 319, 352),
        "pvbcf": (275, 293, 279),
    }
    rows = {k: Metrics(tp, pred - tp, gold - tp) for k, (tp, pred, gold) in raw.items()}
    total = pooled(rows.values())
    assert total == Metrics(4773, 232, 371)
    assert round(total.precision, 3) == 0.954
    assert round(total.recall, 3) == 0.928
    assert round(total.f1, 3) == 0.941
    table = format_table(rows)
    assert "0.962 (2312/2404)" in table and "0.931 (2312/2484)" in table
    last = table.splitlines()[-1].split()
    assert last == ["Mean", "0.954", "0.928", "0.941"]


def _dataset(templates, noise, per=2):
    out = []
    for ti, t in enumerate(templates):
        for k in range(per):
            doc, truth = generate_filled_form(t, noise.with_seed(100 * ti + k))
            out.append(Sample(t.kie, doc, truth))
    return out


def test_noiseless_variants_are_perfect(templates):
    res = run_ablation(_dataset(templates, NoiseModel.noiseless()))
    assert set(res) == {"full", "no_align", "no_scale"}
    for per_class in res.values():
        assert pooled(per_class.values()).f1 == 1.0
        assert list(per_class) == [t.label for t in templates]


def test_ablation_edge_cases(templates):
    data = _dataset(templates[:1], NoiseModel.noiseless(), per=1)
    assert run_ablation(data, []) == {}
    with pytest.raises(ValueError):
        run_ablation(data, ["no_ocr"])


def test_parallel_matches_serial(templates):
    data = _dataset(templates[:2], NoiseModel(), per=3)
    assert evaluate(data, jobs=2) == evaluate(data, jobs=1)
