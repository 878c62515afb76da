import os
import tempfile
import unittest

import numpy as np

from lib.constants import internal_path
from lib.embedders.hashing import HashingEmbedder
from lib.exceptions import ConfigError, InfeasibleBaseRateError
from lib.graph_model import validate_graph
from lib.synthetic import (
    PlantedPair,
    SynthSpec,
    answer_dependency,
    generate_synthetic_corpus,
    generate_synthetic_records,
    load_ground_truth,
    load_synth_spec,
    planted_pair_recovery,
    random_recovery_baseline,
    synth_spec_from_dict,
    synthetic_codebook,
)
from tests.support import small_corpus, small_spec


class SyntheticTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = small_spec(n_graphs=600)
        cls.records, cls.ground_truth = generate_synthetic_records(cls.spec)

    def test_same_seed_same_records(self):
        records, ground_truth = generate_synthetic_records(self.spec)
        self.assertEqual(records, self.records)
        self.assertEqual(ground_truth.bias, self.ground_truth.bias)
        other, _ = generate_synthetic_records(small_spec(n_graphs=600, seed=1))
        self.assertNotEqual(other, self.records)

    def test_planted_pairs_are_dependent(self):
        planted = answer_dependency(self.records, "S01", "S06")
        unrelated = answer_dependency(self.records, "S01", "S02")
        self.assertGreater(planted, 5 * unrelated)
        self.assertEqual(self.ground_truth.planted_question_pairs(), [("S01", "S06"), ("S03", "S08")])

    def test_full_strength_copies_answers(self):
        spec = SynthSpec(
            n_questions=4,
            n_topics=2,
            n_answer_categories=3,
            n_graphs=50,
            planted_pairs=[PlantedPair(0, 1, 1.0)],
            label_weights={0: 1.0},
            base_rate=0.5,
        )
        records, _ = generate_synthetic_records(spec)
        self.assertTrue(all(r["S01"] == r["S02"] for r in records))

    def test_dependency_grows_with_strength(self):
        dependencies = []
        for strength in [0.2, 0.6, 1.0]:
            spec = SynthSpec(
                n_questions=4,
                n_topics=2,
                n_answer_categories=4,
                n_graphs=2000,
                planted_pairs=[PlantedPair(0, 1, strength)],
                label_weights={0: 1.0},
                base_rate=0.5,
            )
            records, _ = generate_synthetic_records(spec)
            dependencies.append(answer_dependency(records, "S01", "S02"))
        self.assertLess(dependencies[0], dependencies[1])
        self.assertLess(dependencies[1], dependencies[2])

    def test_base_rate(self):
        self.assertLessEqual(abs(self.ground_truth.expected_base_rate - 0.4), 0.05)
        positives = np.mean([r["LABEL"] == "1" for r in self.records])
        self.assertLess(abs(positives - 0.4), 0.08)

    def test_infeasible_base_rate(self):
        spec = SynthSpec(
            n_questions=4,
            n_topics=2,
            n_answer_categories=3,
            n_graphs=300,
            planted_pairs=[],
            label_weights={0: 200.0},
            base_rate=0.9,
        )
        with self.assertRaises(InfeasibleBaseRateError):
            generate_synthetic_records(spec)
        with self.assertRaises(InfeasibleBaseRateError):
            SynthSpec(base_rate=1.0)

    def test_spec_checks(self):
        with self.assertRaises(ConfigError):
            SynthSpec(n_topics=1)
        with self.assertRaises(ConfigError):
            # questions 0 and 4 share topic 0
            SynthSpec(planted_pairs=[PlantedPair(0, 4, 0.5)], label_weights={})
        with self.assertRaises(ConfigError):
            SynthSpec(planted_pairs=[PlantedPair(0, 99, 0.5)], label_weights={})
        with self.assertRaises(ConfigError):
            synth_spec_from_dict({"n_questions": 10, "n_nodes": 3})

    def test_shipped_config_matches_defaults(self):
        spec = load_synth_spec(internal_path("config", "synth.yaml"))
        self.assertEqual(spec.to_dict(), SynthSpec().to_dict())

    def test_ground_truth_sidecar(self):
        with tempfile.TemporaryDirectory() as tmp:
            sidecar = os.path.join(tmp, "ground_truth.yaml")
            self.ground_truth.save(sidecar)
            loaded = load_ground_truth(sidecar)
        self.assertEqual(loaded.to_dict(), self.ground_truth.to_dict())

    def test_codebook(self):
        codebook = synthetic_codebook(self.spec)
        self.assertEqual(len(codebook.node_questions()), 8)
        self.assertEqual(codebook.question("S06").topic_id, "T2")
        self.assertEqual(
            [q.question_id for q in codebook.user_feature_questions()],
            ["AGE", "SEX", "HEIGHT", "WEIGHT"],
        )

    def test_corpus_graphs_are_valid(self):
        corpus, _ = small_corpus(n_graphs=20)
        self.assertEqual(len(corpus), 20)
        for g in corpus.graphs:
            self.assertTrue(validate_graph(g, corpus.registry).ok)

    def test_default_shape_node_count(self):
        corpus, _ = generate_synthetic_corpus(SynthSpec(n_graphs=200), HashingEmbedder(16))
        self.assertEqual(len(corpus), 200)
        self.assertEqual({g.n_nodes for g in corpus.graphs}, {25})

    def test_recovery(self):
        question_ids = ["S01", "S02", "S03", "S04"]
        planted = [("S01", "S03")]
        hit = np.zeros((4, 4))
        hit[0, 2] = hit[2, 0] = 1.0
        half = np.zeros((4, 4))
        half[0, 2] = 1.0
        self.assertEqual(planted_pair_recovery([hit, half], question_ids, planted), 0.75)
        topic_mask = np.ones((4, 4), dtype=bool)
        np.fill_diagonal(topic_mask, False)
        self.assertAlmostEqual(random_recovery_baseline(1, topic_mask, question_ids, planted), 1.0 / 3.0)


if __name__ == "__main__":
    unittest.main()
