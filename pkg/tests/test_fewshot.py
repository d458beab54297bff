import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from seppmix.datakit import LabeledDataset, make_synthetic
from seppmix.errors import InputDomainError
from seppmix.fewshot import (DEFAULT_EPISODES, EvalReport, LinearProbe, _softmax, evaluate,
                             evaluate_embeddings, evaluate_episode, extract_embeddings,
                             fit_linear_probe, format_mean_ci, mean_ci95, sample_episode)
from seppmix.mixkit import make_rng
from seppmix.nettrain import FewShotNet


def fake_dataset(num_classes, per_class, dim=4, seed=0):
    rng = make_rng(seed)
    n = num_classes * per_class
    return LabeledDataset(rng.random((n, 3, 2, 2)), np.repeat(np.arange(num_classes), per_class),
                          [f"c{k}" for k in range(num_classes)], [f"i{i}" for i in range(n)],
                          "novel")


class TestSampleEpisode:
    def test_counts_and_disjoint(self):
        ds = fake_dataset(8, 20)
        ep = sample_episode(ds, 5, 1, 15, make_rng(0))
        assert len(ep.support) == 5 and len(ep.query) == 75
        assert not set(ep.support) & set(ep.query)
        assert len(set(ep.classes)) == 5

    def test_each_class_contributes_k_and_h(self):
        ds = fake_dataset(6, 10)
        ep = sample_episode(ds, 3, 2, 4, make_rng(1))
        for local, cls in enumerate(ep.classes):
            assert np.all(ds.labels[ep.support[ep.support_labels == local]] == cls)
            assert (ep.support_labels == local).sum() == 2
            assert (ep.query_labels == local).sum() == 4

    def test_too_few_classes(self):
        with pytest.raises(InputDomainError):
            sample_episode(fake_dataset(4, 20), 5, 1, 15, make_rng(0))

    def test_too_few_images(self):
        with pytest.raises(InputDomainError):
            sample_episode(fake_dataset(5, 10), 5, 1, 15, make_rng(0))

    def test_deterministic(self):
        ds = fake_dataset(8, 20)
        a = sample_episode(ds, 5, 5, 15, make_rng(4))
        b = sample_episode(ds, 5, 5, 15, make_rng(4))
        np.testing.assert_array_equal(a.support, b.support)
        np.testing.assert_array_equal(a.query, b.query)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 5), h=st.integers(0, 10))
    def test_disjoint_property(self, seed, k, h):
        ds = fake_dataset(7, 16)
        ep = sample_episode(ds, 5, k, h, make_rng(seed))
        ids_s = {ds.instance_ids[i] for i in ep.support}
        ids_q = {ds.instance_ids[i] for i in ep.query}
        assert not ids_s & ids_q
        assert len(ids_s) == 5 * k and len(ids_q) == 5 * h


class TestExtractEmbeddings:
    def test_deterministic_and_unit_norm(self):
        net = FewShotNet(3, channels=(4, 4))
        x = make_rng(0).random((6, 3, 8, 8)).astype(np.float32)
        a = extract_embeddings(net, x)
        b = extract_embeddings(net, x[[0, 0]])
        np.testing.assert_array_equal(b[0], b[1])
        np.testing.assert_allclose(b[0], a[0], atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-6)

    def test_zero_net_scalar_oracle(self):
        net = FewShotNet(3, channels=(3,))
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
            bn = net.embedding.blocks[1]
            bn.bias.copy_(torch.tensor([0.5, -0.2, 1.5]))
        emb = extract_embeddings(net, np.zeros((1, 3, 4, 4), np.float32), normalize=False)
        # conv output 0 -> BN gives its bias -> ReLU -> constant pooled value
        np.testing.assert_allclose(emb[0], [0.5, 0.0, 1.5], atol=1e-7)


class TestLinearProbe:
    def test_separable_two_class(self):
        x = np.array([[1.0, 0.2], [0.9, -0.1], [-1.0, 0.0], [-0.8, 0.3]])
        y = np.array([0, 0, 1, 1])
        probe = fit_linear_probe(x, y, l2=0.01)
        assert evaluate_episode(probe, x, y) == 1.0
        assert probe.grad_norm < 1e-6

    def test_ridge_limit(self):
        rng = make_rng(0)
        x = rng.normal(size=(10, 6))
        y = np.arange(10) % 5
        probe = fit_linear_probe(x, y, l2=1e6)
        assert np.abs(probe.weight).max() < 1e-3
        p = _softmax(probe.logits(x))
        np.testing.assert_allclose(p, 0.2, atol=1e-3)

    def test_orthogonal_one_shot(self):
        x = np.eye(5)
        probe = fit_linear_probe(x, np.arange(5), l2=1.0)
        np.testing.assert_array_equal(probe.predict(x), np.arange(5))

    def test_degenerate_flagged(self):
        probe = fit_linear_probe(np.ones((5, 3)), np.arange(5))
        assert probe.degenerate
        # identical logits: tie goes to the lowest index
        np.testing.assert_array_equal(probe.predict(np.ones((2, 3))), [0, 0])

    def test_deterministic(self):
        rng = make_rng(2)
        x, y = rng.normal(size=(25, 8)), np.repeat(np.arange(5), 5)
        a, b = fit_linear_probe(x, y), fit_linear_probe(x, y)
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_missing_class(self):
        with pytest.raises(InputDomainError):
            fit_linear_probe(np.eye(3), [0, 1, 1], n_way=3)

    @pytest.mark.parametrize("l2", [0.1, 1.0, 5.0])
    def test_matches_sklearn(self, l2):
        rng = make_rng(int(l2 * 10))
        x = rng.normal(size=(25, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        y = np.repeat(np.arange(5), 5)
        ours = fit_linear_probe(x, y, l2=l2)
        # sklearn minimises C * sum CE + 0.5 ||W||^2, so C = 1 / (2 * l2)
        ref = LogisticRegression(C=1 / (2 * l2), tol=1e-12, max_iter=10_000).fit(x, y)
        np.testing.assert_allclose(_softmax(ours.logits(x)), ref.predict_proba(x), atol=1e-5)
        np.testing.assert_allclose(ours.weight, ref.coef_, atol=1e-4)


class TestEvaluateEpisode:
    def test_query_equal_to_support(self):
        x = np.eye(5)
        probe = fit_linear_probe(x, np.arange(5))
        assert evaluate_episode(probe, x[[3, 3]], [3, 3]) == 1.0

    def test_empty_query(self):
        probe = fit_linear_probe(np.eye(2), [0, 1])
        with pytest.raises(InputDomainError):
            evaluate_episode(probe, np.zeros((0, 2)), [])

    def test_random_embeddings_chance(self):
        rng = make_rng(0)
        ds = fake_dataset(10, 30)
        emb = rng.normal(size=(len(ds), 16))
        rep = evaluate_embeddings(emb, ds, num_episodes=500, seed=3)
        # Monte-Carlo chance oracle: 500 episodes x 75 queries, 3 sigma
        sigma = math.sqrt(0.2 * 0.8 / (500 * 75))
        assert abs(rep.mean_accuracy - 0.2) <= 3 * sigma + 0.01


class TestAggregation:
    def test_hand_oracle(self):
        acc = [0.8, 0.6, 0.7, 0.9, 0.5]
        mean, hw = mean_ci95(acc)
        s = math.sqrt(sum((a - 0.7) ** 2 for a in acc) / 4)
        assert mean == pytest.approx(0.70, abs=1e-12)
        assert hw == pytest.approx(1.96 * s / math.sqrt(5), abs=1e-12)
        assert hw == pytest.approx(0.1385929291, abs=1e-9)

    def test_constant(self):
        assert mean_ci95([0.4] * 10) == (pytest.approx(0.4), 0.0)

    def test_format(self):
        assert format_mean_ci(0.6698, 0.0081) == "66.98±0.81"

    def test_defaults(self):
        assert DEFAULT_EPISODES == 600


@pytest.fixture(scope="module")
def novel():
    return make_synthetic(6, 20, 16, 1)


class TestEvaluate:
    def test_report_json_keys(self, novel):
        rep = evaluate(FewShotNet(3, channels=(4,)), novel, num_episodes=5, checkpoint_id="abc")
        d = json.loads(rep.to_json())
        assert set(d) == {"n_way", "k_shot", "h_query", "episodes", "mean_accuracy",
                          "ci95_halfwidth", "seed", "checkpoint_id"}
        assert 0 <= d["mean_accuracy"] <= 1 and d["ci95_halfwidth"] >= 0

    def test_workers_do_not_change_report(self, novel):
        torch.manual_seed(0)
        net = FewShotNet(3, channels=(4,))
        a = evaluate(net, novel, num_episodes=20, seed=5, workers=1)
        b = evaluate(net, novel, num_episodes=20, seed=5, workers=4)
        assert a.accuracies == b.accuracies and a.to_json() == b.to_json()
