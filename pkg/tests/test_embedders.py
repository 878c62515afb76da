import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from lib.embedders.embedder_setup import embedder_setup
from lib.embedders.hashing import HashingEmbedder
from lib.embedders.precomputed import PrecomputedEmbedder, write_precomputed_vectors
from lib.exceptions import ConfigError, DataError, EmbeddingLookupError


class HashingEmbedderTestCase(unittest.TestCase):
    def setUp(self):
        self.embedder = HashingEmbedder(64)

    def test_deterministic_unit_vectors(self):
        first = self.embedder.embed_text("How often did you wear a seat belt?")
        second = HashingEmbedder(64).embed_text("How often did you wear a seat belt?")
        self.assertEqual(first.dtype, np.float32)
        self.assertTrue(np.array_equal(first, second))
        self.assertAlmostEqual(float(np.linalg.norm(first)), 1.0, places=5)

    def test_similar_texts_are_closer(self):
        a = self.embedder.embed_text("During the past 30 days, how often did you smoke cigarettes?")
        b = self.embedder.embed_text("During the past 30 days, how often did you smoke cigars?")
        c = self.embedder.embed_text("Have you ever been bullied on school property?")
        self.assertGreater(float(a @ b), float(a @ c))

    def test_distinct_question_texts_stay_apart(self):
        slots = [
            ["smoke", "drink", "vape", "fight", "skip", "text", "sleep", "swim", "run", "eat"],
            ["school", "home", "work", "park", "car", "bus", "gym", "mall", "church", "camp"],
            ["daily", "weekly", "monthly", "rarely", "often", "never", "twice", "once", "always", "seldom"],
            ["alone", "friends", "family", "strangers", "peers", "teammates", "siblings", "cousins", "neighbors", "classmates"],
        ]
        texts = []
        for n in range(1000):
            a, b, c = n // 100, (n // 10) % 10, n % 10
            # The last word depends on all three, so any two texts differ in two words or more
            texts.append(
                "How often do you " + " ".join([slots[0][a], slots[1][b], slots[2][c], slots[3][(a + b + c) % 10]])
            )
        embedder = HashingEmbedder(128)
        vectors = np.stack([embedder.embed_text(text) for text in texts]).astype(np.float64)
        cosine = vectors @ vectors.T
        np.fill_diagonal(cosine, -1.0)
        self.assertLess(float(cosine.max()), 0.99)

    def test_cached_vectors_are_copies(self):
        vector = self.embedder.embed_text("School")
        vector[:] = 0.0
        self.assertAlmostEqual(float(np.linalg.norm(self.embedder.embed_text("School"))), 1.0, places=5)

    def test_empty_text(self):
        with self.assertRaises(DataError):
            self.embedder.embed_text("   ")
        with self.assertRaises(DataError):
            HashingEmbedder(0)

    @settings(max_examples=50, deadline=None)
    @given(st.text(min_size=1, max_size=80).filter(lambda text: text.strip()))
    def test_any_text_has_unit_norm(self, text):
        vector = self.embedder.embed_text(text)
        self.assertEqual(vector.shape, (64,))
        self.assertAlmostEqual(float(np.linalg.norm(vector)), 1.0, places=4)


class PrecomputedEmbedderTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.vectors_path = os.path.join(self.tmp.name, "vectors.tsv")

    def tearDown(self):
        self.tmp.cleanup()

    def test_lookup(self):
        write_precomputed_vectors(
            self.vectors_path,
            [("Tobacco use", np.array([1.0, 0.0, 0.5])), ("School", np.array([0.0, 2.0, 0.0]))],
        )
        embedder = PrecomputedEmbedder(self.vectors_path)
        self.assertEqual(embedder.dim, 3)
        self.assertEqual(embedder.embed_text("School").tolist(), [0.0, 2.0, 0.0])
        with self.assertRaises(EmbeddingLookupError):
            embedder.embed_text("Nutrition")
        self.assertEqual(embedder.describe()["mode"], "PRECOMPUTED")

    def test_ragged_file(self):
        with open(self.vectors_path, "w") as vectors_file:
            vectors_file.write("a\t1 2 3\nb\t1 2\n")
        with self.assertRaises(DataError):
            PrecomputedEmbedder(self.vectors_path)

    def test_setup(self):
        self.assertIsInstance(embedder_setup("hashing", 32), HashingEmbedder)
        with self.assertRaises(ConfigError):
            embedder_setup("PRECOMPUTED", 32)
        with self.assertRaises(ConfigError):
            embedder_setup("WORD2VEC", 32)
        write_precomputed_vectors(self.vectors_path, [("School", np.ones(4))])
        with self.assertRaises(ConfigError):
            embedder_setup("PRECOMPUTED", 32, self.vectors_path)
        self.assertEqual(embedder_setup("PRECOMPUTED", 4, self.vectors_path).dim, 4)


if __name__ == "__main__":
    unittest.main()
