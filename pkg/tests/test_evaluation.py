import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from highlight_stgcn.evaluation import (
    AlignmentError,
    Annotation,
    UndefinedMetricError,
    average_precision,
    evaluate_video,
    f_score,
    load_annotation,
    mean_ap,
    representativeness,
    write_report,
)
from highlight_stgcn.numeric import smooth_l1_values

from oracles import ap_bruteforce, f_bruteforce


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.1, 0.9, 0.8], [1, 0, 0]) == pytest.approx(1 / 3, abs=0)


def test_ap_tie_rule():
    # equal scores: earlier frame ranks first
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


def test_ap_errors():
    with pytest.raises(UndefinedMetricError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(AlignmentError):
        average_precision([0.1, 0.2], [1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), min_size=20, max_size=20),
       st.lists(st.booleans(), min_size=20, max_size=20).filter(any))
def test_ap_matches_oracle(scores, positives):
    # identical up to summation order
    assert average_precision(scores, positives) == pytest.approx(ap_bruteforce(scores, positives), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=8, max_size=8),
       st.lists(st.booleans(), min_size=8, max_size=8).filter(any))
def test_ap_rank_invariance(scores, positives):
    s = np.array(scores, dtype=float)
    assert average_precision(s, positives) == average_precision(np.exp(s / 2) - 7, positives)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=6, max_size=6).filter(lambda p: any(p) and not all(p)))
def test_ap_one_iff_positives_first(positives):
    pos = np.array(positives)
    perfect = np.where(pos, 1.0, 0.0)
    assert average_precision(perfect, pos) == 1.0
    assert average_precision(1.0 - perfect, pos) < 1.0


def test_mean_ap_examples():
    assert mean_ap([([0.9, 0.1], [1, 0])]) == 1.0
    assert mean_ap([([0.9, 0.1], [1, 0]), ([0.9, 0.1], [0, 1])]) == 0.75
    assert mean_ap([([0.9, 0.1], [1, 0]), ([0.9, 0.1], [0, 0])]) == 1.0
    with pytest.raises(UndefinedMetricError):
        mean_ap([([0.9, 0.1], [0, 0])])


def test_f_score_examples():
    pos = np.array([1, 1, 0, 0], dtype=bool)
    assert f_score(pos, pos) == 1.0
    assert f_score(~pos, pos) == 0.0
    assert f_score(np.ones(4, bool), pos) == pytest.approx(2 / 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=20, max_size=20),
       st.lists(st.booleans(), min_size=20, max_size=20).filter(any))
def test_f_matches_oracle(pred, positives):
    assert f_score(pred, positives) == pytest.approx(f_bruteforce(pred, positives), rel=1e-12)


def test_f_recall_one_at_zero_threshold(rng):
    s = rng.random(30)
    pos = rng.random(30) > 0.5
    pos[0] = True
    pred = s >= 0.0
    assert np.count_nonzero(pred & pos) == np.count_nonzero(pos)


def test_representativeness_examples(rng):
    x = rng.normal(size=(4, 6, 2, 3)) * 2
    assert representativeness(x, np.ones(6)) == 0.0
    assert representativeness(x, np.zeros(6)) == pytest.approx(smooth_l1_values(x).sum(), rel=1e-13)
    for t in range(6):
        h = np.ones(6)
        h[t] = 0.0
        assert representativeness(x, h) == pytest.approx(smooth_l1_values(x[:, t]).sum(), rel=1e-13)
    with pytest.raises(ValueError):
        representativeness(x, np.full(6, 1.1))


def test_representativeness_monotone(rng):
    x = rng.normal(size=(3, 5, 2, 2))
    h = rng.random(5)
    base = representativeness(x, h)
    for t in range(5):
        up = h.copy()
        up[t] = min(1.0, up[t] + 0.1)
        assert representativeness(x, up) <= base


def test_annotation_loading(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"source_id": "v", "fps": 5, "positive_intervals": [[2, 4], [7, 7]]}))
    ann = load_annotation(p, 10)
    assert ann.positive_frames.nonzero()[0].tolist() == [2, 3, 4, 7]
    with pytest.raises(AlignmentError):
        Annotation.from_intervals("v", [[8, 12]], 10)


def test_report_csv(tmp_path):
    res = [evaluate_video("a", [0.9, 0.1, 0.2], [1, 0, 0], 0.5), evaluate_video("b", [0.3, 0.3, 0.3], [0, 0, 0], 0.5)]
    agg = write_report(res, tmp_path / "r.csv", {"config_digest": "x"})
    assert agg == {"mAP": 1.0, "mean_F": 1.0, "evaluated": 1, "skipped": 1}
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# config_digest: x"
    assert lines[1] == "source_id,AP,F,positives,predicted_frames"
    assert lines[-1].startswith("MEAN,1.000000")
