import json
import math

import numpy as np
import pytest

import moelab


CRAFTED = [[0.5, 0.45, 0.05], [0.34, 0.33, 0.33]]


def test_softmax_rows_sum_to_one():
    s = moelab.softmax_scores([[0.0, math.log(2.0), 0.0], [1000.0, 0.0, 0.0]])
    assert s[0] == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    assert s[1] == [1.0, 0.0, 0.0]


def test_topk_and_ties():
    assert moelab.topk_route([[0.1, 0.6, 0.3]], 2) == [[0, 1, 1]]
    assert moelab.topk_route([[0.4, 0.4, 0.2]], 1) == [[1, 0, 0]]


def test_seqtopk_unbounded_and_bounded():
    assert moelab.seqtopk_route(CRAFTED, 1) == [[1, 1, 0], [0, 0, 0]]
    assert moelab.seqtopk_route_bounded(CRAFTED, 1) == [[1, 0, 0], [1, 0, 0]]


def test_accepts_numpy_arrays():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 5))
    scores = np.asarray(moelab.softmax_scores(logits))
    mask = np.asarray(moelab.seqtopk_route_bounded(scores, 2, lower_bound=1, upper_bound=4))
    assert mask.sum() == 12
    assert mask.sum(axis=1).min() >= 1 and mask.sum(axis=1).max() <= 4


def test_batchtopk_dominance():
    a = [[0.5, 0.45, 0.05]] * 2
    b = [[0.34, 0.33, 0.33]] * 2
    masks = moelab.batchtopk_route([a, b], 1)
    assert [sum(map(sum, m)) for m in masks] == [4, 0]


def test_online_router_budget_and_snapshot():
    rng = np.random.default_rng(1)
    router = moelab.OnlineRouter(n_experts=8, k=2)
    for m in range(1, 41):
        row = np.exp(rng.normal(size=8) * 3)
        step = router.step(list(row / row.sum()))
        assert step["cumulative"] <= 2 * m
    assert router.audit()["max_ratio"] <= 1.0
    restored = moelab.OnlineRouter.from_json(router.to_json())
    assert restored.steps == 40
    assert restored.horizon_selection() == router.horizon_selection()
    assert json.loads(router.to_json())["format"] == "moelab.expert_cache"


def test_online_route_matches_stepwise():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(10, 4)) * 2
    scores = moelab.softmax_scores(logits)
    router = moelab.OnlineRouter(4, 1)
    stepwise = [router.step(row)["experts"] for row in scores]
    mask = moelab.online_route(scores, 1)
    assert [[e for e, v in enumerate(r) if v] for r in mask] == stepwise


def test_entropy_and_balance():
    assert moelab.routing_entropy([[0.25] * 4]) == 1.0
    assert moelab.routing_entropy([[0.5, 0.5, 0.0, 0.0]]) == pytest.approx(0.5, abs=1e-15)
    assert moelab.normalized_entropy([0.0, 1.0]) == 0.0
    one_hot = [[1.0, 0.0, 0.0]] * 2
    assert moelab.load_balance_loss(moelab.topk_route(one_hot, 1), one_hot) == pytest.approx(3.0)


def test_errors_map_to_value_error():
    with pytest.raises(moelab.BudgetInfeasible):
        moelab.topk_route([[0.5, 0.5]], 3)
    with pytest.raises(ValueError):
        moelab.topk_route([[0.5, 0.6]], 1)
    with pytest.raises(ValueError):
        moelab.OnlineRouter(4, 2, lower_bound=3)
