import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from lib.constants import NodeKind, LATENT_RELATION, QUESTION_TOPIC_RELATION
from lib.exceptions import DataError, HeterogeneousCorpusError
from lib.graph_model import (
    RelationalGraph,
    corpus_stats,
    deserialize_graph,
    read_corpus,
    serialize_graph,
    validate_graph,
    write_corpus,
)
from tests.support import small_corpus


class GraphModelTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus, cls.ground_truth = small_corpus(n_graphs=12)
        cls.registry = cls.corpus.registry

    def setUp(self):
        self.g = self.corpus.graphs[0]

    def test_built_graphs_are_valid(self):
        for g in self.corpus.graphs:
            report = validate_graph(g, self.registry)
            self.assertTrue(report.ok, report.codes())

    def test_node_layout(self):
        self.assertEqual(self.g.node_kinds[0], NodeKind.USER)
        self.assertEqual(self.g.question_nodes(), list(range(1, 9)))
        self.assertEqual(self.g.topic_nodes(), list(range(9, 13)))
        self.assertEqual(self.g.question_ids()[0], "S01")

    def test_registry_layout(self):
        self.assertEqual(self.registry.names[-2:], [QUESTION_TOPIC_RELATION, LATENT_RELATION])
        # 8 questions, 3 categories plus MISSING each
        self.assertEqual(self.registry.n_answer_relations, 32)
        self.assertEqual(len(self.registry), 34)

    def test_category_of_inverts_answer_relation(self):
        relation = self.registry.answer_relation("S03", "2")
        self.assertEqual(self.registry.category_of("S03", relation.id), "2")
        with self.assertRaises(DataError):
            self.registry.category_of("S04", relation.id)

    def test_features_are_read_only(self):
        self.assertFalse(self.g.features.flags.writeable)
        with self.assertRaises(ValueError):
            self.g.features[0, 0] = 1.0

    def test_missing_reverse_edge(self):
        edge = (0, 1, self.g.user_relation(1))
        broken = self.g.replace(edges=[e for e in self.g.edges if e != edge])
        self.assertIn("pair-symmetry", validate_graph(broken, self.registry).codes())

    def test_self_loop_and_duplicate(self):
        topic_id = self.registry.question_topic.id
        edges = list(self.g.edges) + [(1, 1, topic_id), self.g.edges[0]]
        codes = validate_graph(self.g.replace(edges=edges), self.registry).codes()
        self.assertIn("self-loop", codes)
        self.assertIn("duplicate-edge", codes)

    def test_latent_edge_inside_topic(self):
        latent = self.registry.latent.id
        # S01 and S05 share topic T1
        edges = list(self.g.edges) + [(1, 5, latent), (5, 1, latent)]
        codes = validate_graph(self.g.replace(edges=edges), self.registry).codes()
        self.assertIn("latent-endpoint", codes)

    def test_cross_topic_latent_edge_is_valid(self):
        latent = self.registry.latent.id
        edges = list(self.g.edges) + [(1, 6, latent), (6, 1, latent)]
        self.assertTrue(validate_graph(self.g.replace(edges=edges), self.registry).ok)

    def test_corpus_stats(self):
        stats = corpus_stats(self.corpus.graphs)
        self.assertEqual(stats.n_graphs, 12)
        self.assertEqual(stats.n_positive + stats.n_negative, 12)
        self.assertEqual(stats.questions_per_graph, 8)
        self.assertEqual(stats.topics_per_graph, 4)
        self.assertLessEqual(stats.unique_relations, 32)

    def test_corpus_stats_errors(self):
        with self.assertRaises(DataError):
            corpus_stats([])
        other = RelationalGraph(
            "X1",
            "another-codebook",
            self.g.node_kinds,
            self.g.node_keys,
            self.g.features,
            self.g.edges,
            label=True,
        )
        with self.assertRaises(HeterogeneousCorpusError):
            corpus_stats([self.g, other])
        with self.assertRaises(DataError):
            corpus_stats([self.g.replace(label=None)])

    def test_serialized_graph_is_identical(self):
        line = serialize_graph(self.g)
        self.assertEqual(deserialize_graph(line), self.g)
        self.assertEqual(serialize_graph(deserialize_graph(line)), line)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=32, max_size=32),
        st.sampled_from([None, True, False]),
        st.sets(st.integers(1, 8), max_size=8),
        st.dictionaries(
            st.sampled_from(["HEIGHT", "WEIGHT"]),
            st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)),
        ),
    )
    def test_serialization_keeps_every_field(self, user_row, label, masked, user_numeric):
        features = np.array(self.g.features)
        features[0] = user_row
        g = RelationalGraph(
            self.g.respondent_id,
            self.g.codebook_id,
            self.g.node_kinds,
            self.g.node_keys,
            features,
            self.g.edges,
            label=label,
            masked=masked,
            user_numeric=user_numeric,
        )
        line = serialize_graph(g)
        self.assertEqual(deserialize_graph(line), g)
        self.assertEqual(serialize_graph(deserialize_graph(line)), line)

    def test_corpus_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = os.path.join(tmp, "first.jsonl")
            second = os.path.join(tmp, "second.jsonl")
            write_corpus(self.corpus, first)
            loaded = read_corpus(first)
            self.assertEqual(loaded.graphs, self.corpus.graphs)
            self.assertEqual(loaded.registry, self.registry)
            self.assertEqual(loaded.codebook.codebook_id, self.corpus.codebook.codebook_id)
            write_corpus(loaded, second)
            with open(first, "rb") as a, open(second, "rb") as b:
                self.assertEqual(a.read(), b.read())

    def test_bad_corpus_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            corpus_path = os.path.join(tmp, "corpus.jsonl")
            write_corpus(self.corpus, corpus_path)
            with open(corpus_path, "a") as corpus_file:
                corpus_file.write("{not json\n")
            with self.assertRaises(DataError) as raised:
                read_corpus(corpus_path)
            self.assertIn("line 14", str(raised.exception))

    def test_edge_arrays(self):
        src, dst, etype = self.g.edge_arrays()
        self.assertEqual(len(src), len(self.g.edges))
        self.assertTrue(np.all(src != dst))
        self.assertEqual(int(etype.max()), self.registry.question_topic.id)


if __name__ == "__main__":
    unittest.main()
