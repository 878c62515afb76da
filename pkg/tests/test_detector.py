import unittest

import torch
from hypothesis import given, settings, strategies as st

from lib.detector import (
    AttentionScorer,
    ClassifierHead,
    DetectorModel,
    aggregate_user,
    attention_scores,
    classify,
    predict,
    select_topk_questions,
    topk_pool,
)
from lib.exceptions import ConfigError
from lib.gradcheck import max_relative_error
from lib.graph_tensors import collate_graphs
from tests.support import small_config, small_corpus


class AttentionTestCase(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.scorer = AttentionScorer(4)
        self.h_questions = torch.randn(3, 6, 4)
        self.h_user = torch.randn(3, 4)

    def test_weights_sum_to_one(self):
        alpha = attention_scores(self.h_questions, self.h_user, self.scorer)
        self.assertEqual(tuple(alpha.shape), (3, 6))
        self.assertTrue(torch.allclose(alpha.sum(dim=-1), torch.ones(3)))
        self.assertTrue(bool((alpha > 0).all()))

    def test_shift_invariance(self):
        alpha = attention_scores(self.h_questions, self.h_user, self.scorer)
        with torch.no_grad():
            self.scorer.out.bias += 5.0
        shifted = attention_scores(self.h_questions, self.h_user, self.scorer)
        self.assertTrue(torch.allclose(alpha, shifted, atol=1e-6))
        self.assertTrue(torch.equal(select_topk_questions(alpha, 3), select_topk_questions(shifted, 3)))

    def test_no_questions(self):
        with self.assertRaises(ValueError):
            attention_scores(torch.zeros(1, 0, 4), torch.zeros(1, 4), self.scorer)

    def test_aggregate(self):
        h = torch.tensor([[1.0, 2.0], [-1.0, -2.0]])
        self.assertEqual(aggregate_user(torch.tensor([1.0, 0.0]), h).tolist(), [1.0, 2.0])
        self.assertEqual(aggregate_user(torch.tensor([0.5, 0.5]), h).tolist(), [0.0, 0.0])
        with self.assertRaises(ValueError):
            aggregate_user(torch.tensor([1.0]), h)

    def test_aggregate_matches_weighted_sum(self):
        alpha = torch.softmax(torch.randn(5, dtype=torch.float64), dim=0)
        h = torch.randn(5, 3, dtype=torch.float64)
        expected = sum(alpha[q] * h[q] for q in range(5))
        self.assertLess(float((aggregate_user(alpha, h) - expected).abs().max()), 1e-12)

    def test_classify(self):
        head = ClassifierHead(3)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        self.assertEqual(float(classify(torch.randn(3), head)), 0.5)
        with torch.no_grad():
            head.linear.bias.fill_(50.0)
        self.assertGreater(float(classify(torch.randn(3), head)), 0.999)

    def test_scorer_and_head_gradients(self):
        scorer = AttentionScorer(3).double()
        head = ClassifierHead(3).double()
        h_questions = torch.randn(2, 4, 3, dtype=torch.float64)
        h_user = torch.randn(2, 3, dtype=torch.float64)
        labels = torch.tensor([1.0, 0.0], dtype=torch.float64)

        def loss():
            alpha = attention_scores(h_questions, h_user, scorer)
            logits = head(aggregate_user(alpha, h_questions))
            return torch.nn.functional.binary_cross_entropy_with_logits(logits, labels)

        parameters = list(scorer.parameters()) + list(head.parameters())
        self.assertLess(max_relative_error(loss, parameters), 1e-4)


class SelectionTestCase(unittest.TestCase):
    def test_top_questions(self):
        alpha = torch.tensor([0.1, 0.7, 0.2])
        self.assertEqual(select_topk_questions(alpha, 2).tolist(), [1, 2])
        self.assertEqual(select_topk_questions(alpha, 3).tolist(), [1, 2, 0])
        self.assertEqual(select_topk_questions(torch.full((4,), 0.25), 2).tolist(), [0, 1])

    def test_bad_k(self):
        with self.assertRaises(ConfigError):
            select_topk_questions(torch.ones(3) / 3, 0)
        with self.assertRaises(ConfigError):
            select_topk_questions(torch.ones(3) / 3, 4)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=20, max_size=40, unique=True))
    def test_matches_sort(self, values):
        alpha = torch.tensor(values, dtype=torch.float64)
        expected = sorted(range(len(values)), key=lambda q: -values[q])[:20]
        self.assertEqual(select_topk_questions(alpha, 20).tolist(), expected)

    def test_topk_pool(self):
        alpha = torch.tensor([[0.1, 0.6, 0.3]])
        pooled = topk_pool(alpha, 2)
        self.assertTrue(torch.allclose(pooled, torch.tensor([[0.0, 0.6 / 0.9, 0.3 / 0.9]])))


class DetectorModelTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus, _ = small_corpus(n_graphs=8)
        cls.config = small_config()
        torch.manual_seed(0)
        cls.model = DetectorModel(cls.corpus.d_in, cls.corpus.registry, cls.config)

    def test_forward(self):
        batch = collate_graphs(self.corpus.graphs[:3])
        output = self.model(batch)
        self.assertEqual(tuple(output.logits.shape), (3,))
        self.assertEqual(tuple(output.alpha.shape), (3, 8))
        self.assertTrue(torch.allclose(output.alpha.sum(dim=-1), torch.ones(3)))
        self.assertTrue(bool(((output.probabilities > 0) & (output.probabilities < 1)).all()))

    def test_predict(self):
        predictions = predict(self.model, self.corpus.graphs, self.config.k_att, batch_size=3)
        self.assertEqual([p.respondent_id for p in predictions], [g.respondent_id for g in self.corpus.graphs])
        for prediction, g in zip(predictions, self.corpus.graphs):
            self.assertEqual(prediction.true_label, g.label)
            self.assertEqual(prediction.label, prediction.probability >= 0.5)
            weights = [q["alpha"] for q in prediction.top_questions]
            self.assertEqual(len(weights), 4)
            self.assertEqual(weights, sorted(weights, reverse=True))
            self.assertEqual(set(prediction.to_dict()), {"respondent_id", "probability", "label", "true_label", "top_questions"})

    def test_topk_pooling_variant(self):
        config = small_config(topk_pooling=True)
        torch.manual_seed(0)
        model = DetectorModel(self.corpus.d_in, self.corpus.registry, config)
        output = model(collate_graphs(self.corpus.graphs[:2]))
        self.assertTrue(torch.isfinite(output.logits).all())


if __name__ == "__main__":
    unittest.main()
