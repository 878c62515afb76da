import unittest

import numpy as np
import torch

from lib.tiny_lm import (
    RESERVED_TOKENS,
    TinyDecoderLM,
    Tokenizer,
    build_tokenizer,
    tokenizer_from_dict,
    warm_train,
)


class TokenizerTestCase(unittest.TestCase):
    def setUp(self):
        self.tokenizer = build_tokenizer(["Have you EVER smoked?", "Answer: 1 - Yes", "No, never."])

    def test_vocabulary(self):
        self.assertEqual(self.tokenizer.vocabulary[: len(RESERVED_TOKENS)], RESERVED_TOKENS)
        self.assertIn("ever", self.tokenizer.ids)
        self.assertNotIn("EVER", self.tokenizer.ids)
        self.assertEqual(len(set(self.tokenizer.vocabulary)), len(self.tokenizer))
        with self.assertRaises(ValueError):
            Tokenizer(["a", "b"])

    def test_split_keeps_label_tokens(self):
        self.assertEqual(Tokenizer.split("Yes. yes NO No"), ["Yes", ".", "yes", "no", "No"])

    def test_encode(self):
        ids = self.tokenizer.encode("Have you smoked")
        self.assertEqual(ids[0], self.tokenizer.ids["<bos>"])
        self.assertEqual(self.tokenizer.encode("Have you smoked", bos=False), ids[1:])
        self.assertEqual(self.tokenizer.encode("cigars", bos=False), [self.tokenizer.ids["<unk>"]])

    def test_decode(self):
        ids = self.tokenizer.encode("No, never smoked.") + [self.tokenizer.eos_id]
        self.assertEqual(self.tokenizer.decode(ids), "No, never smoked.")
        self.assertEqual(self.tokenizer.decode([self.tokenizer.yes_id]), "Yes")

    def test_dict(self):
        self.assertEqual(tokenizer_from_dict(self.tokenizer.to_dict()).vocabulary, self.tokenizer.vocabulary)


class TinyDecoderLMTestCase(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.lm = TinyDecoderLM(20, d_lm=16, n_heads=2, n_blocks=2, max_positions=32)
        self.ids = torch.randint(0, 20, (1, 10))
        self.prefix = torch.randn(1, 1, 16)

    def test_shapes(self):
        self.assertEqual(tuple(self.lm(self.ids).shape), (1, 10, 20))
        self.assertEqual(tuple(self.lm(self.ids, prefix=self.prefix).shape), (1, 11, 20))

    def test_causal(self):
        self.lm.eval()
        full = self.lm(self.ids, prefix=self.prefix)
        changed = self.ids.clone()
        changed[0, 6:] = (changed[0, 6:] + 1) % 20
        altered = self.lm(changed, prefix=self.prefix)
        # Prefix plus six tokens are unaffected by later tokens
        self.assertTrue(torch.allclose(full[:, :7], altered[:, :7], atol=1e-6))
        self.assertFalse(torch.allclose(full[:, 7:], altered[:, 7:]))

    def test_prefix_reaches_every_position(self):
        self.lm.eval()
        first = self.lm(self.ids, prefix=self.prefix)
        second = self.lm(self.ids, prefix=self.prefix + 1.0)
        self.assertFalse(torch.allclose(first[0, -1], second[0, -1]))

    def test_limits(self):
        with self.assertRaises(ValueError):
            self.lm(torch.zeros(1, 32, dtype=torch.long), prefix=self.prefix)
        with self.assertRaises(ValueError):
            self.lm(self.ids, prefix=torch.zeros(1, 1, 8))
        with self.assertRaises(ValueError):
            TinyDecoderLM(20, d_lm=16, n_heads=3)

    def test_freeze(self):
        digest = self.lm.parameter_digest()
        self.lm.freeze()
        self.assertTrue(self.lm.frozen)
        self.assertFalse(self.lm.training)
        self.assertTrue(all(not p.requires_grad for p in self.lm.parameters()))
        self.assertEqual(self.lm.parameter_digest(), digest)
        with self.assertRaises(ValueError):
            warm_train(self.lm, [[1, 2, 3]], 1, 1e-3, np.random.default_rng(0))

    def test_warm_train_lowers_loss(self):
        sequences = [[2, 5, 6, 7, 4, 3], [2, 5, 6, 8, 5, 3]] * 4
        log = warm_train(self.lm, sequences, 15, 1e-2, np.random.default_rng(0), batch_size=4)
        self.assertEqual(len(log), 15)
        self.assertLess(log[-1]["lm_loss"], log[0]["lm_loss"])
        self.assertFalse(self.lm.frozen)


if __name__ == "__main__":
    unittest.main()
