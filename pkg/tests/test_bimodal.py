import math
import os
import unittest

import numpy as np
import torch

from lib.bimodal import (
    ProjectionHead,
    answer_text,
    bimodal_loss,
    build_warmup_sequences,
    explain_graph,
    explanation_agreement,
    generate_explanation,
    generation_loss,
    label_token_id,
    project_graph_token,
    prompt_tokenizer,
    rationale_text,
    textualize,
    train_bimodal,
)
from lib.detector import DetectorModel
from lib.exceptions import ConfigError, DataError, FreezeViolationError, UnknownQuestionError
from lib.pretext import mask_user_edge
from lib.tiny_lm import TinyDecoderLM
from tests.support import FIXTURES, prompt_graph, small_config, small_corpus


def read_fixture(name):
    with open(os.path.join(FIXTURES, name), encoding="utf-8", newline="") as fixture:
        return fixture.read()


def frozen_lm(tokenizer, max_positions=256, seed=0):
    torch.manual_seed(seed)
    return TinyDecoderLM(len(tokenizer), d_lm=16, n_heads=2, n_blocks=1, max_positions=max_positions).freeze()


class TextualizeTestCase(unittest.TestCase):
    def setUp(self):
        self.g, self.codebook, self.registry = prompt_graph()

    def test_golden_prompt_a(self):
        prompt = textualize(self.g, ["S01", "S02"], self.codebook, self.registry, "A")
        self.assertEqual(prompt.text, read_fixture("prompt_variant_a.txt"))
        self.assertEqual(prompt.cue_pairs, [("S01", "S02")])

    def test_golden_prompt_b(self):
        prompt = textualize(self.g, ["S01", "S02"], self.codebook, self.registry, "B")
        self.assertEqual(prompt.text, read_fixture("prompt_variant_b.txt"))

    def test_attention_order(self):
        prompt = textualize(self.g, ["S02", "S01"], self.codebook, self.registry)
        self.assertEqual(prompt.qa_pairs[0][0], "HOW DO YOU FEEL ABOUT GOING TO SCHOOL")
        self.assertEqual(prompt.cue_pairs, [("S02", "S01")])

    def test_no_cues_without_latent_edges(self):
        g, codebook, registry = prompt_graph(with_latent=False)
        prompt = textualize(g, ["S01", "S02"], codebook, registry)
        self.assertEqual(prompt.cue_pairs, [])
        self.assertNotIn("Think about", prompt.text)

    def test_single_question(self):
        prompt = textualize(self.g, ["S02"], self.codebook, self.registry)
        self.assertEqual(prompt.cue_pairs, [])
        self.assertEqual(len(prompt.lines()), 6)

    def test_masked_answer(self):
        masked = mask_user_edge(self.g, 1, self.registry).graph
        prompt = textualize(masked, ["S01"], self.codebook, self.registry)
        self.assertEqual(prompt.qa_pairs, [("EVER SMOKED A CIGARETTE", "Missing")])

    def test_errors(self):
        with self.assertRaises(UnknownQuestionError):
            textualize(self.g, ["S01", "S99"], self.codebook, self.registry)
        with self.assertRaises(UnknownQuestionError):
            textualize(self.g, ["AGE"], self.codebook, self.registry)
        with self.assertRaises(DataError):
            textualize(self.g, [], self.codebook, self.registry)
        with self.assertRaises(ValueError):
            textualize(self.g, ["S01"], self.codebook, self.registry, "C")

    def test_answer_text(self):
        self.assertEqual(answer_text(self.codebook, "S01", "2"), "2 - No")
        self.assertEqual(answer_text(self.codebook, "S01", "MISSING"), "Missing")

    def test_rationale(self):
        self.assertEqual(
            rationale_text(True, self.codebook, "S01"),
            "Yes. The answers about ever smoked a cigarette point to illicit drug use.",
        )

    def test_prompt_tokens_are_known(self):
        tokenizer = prompt_tokenizer(self.codebook)
        prompt = textualize(self.g, ["S01", "S02"], self.codebook, self.registry, "B")
        ids = prompt.encode(tokenizer)
        self.assertNotIn(tokenizer.ids["<unk>"], ids)
        self.assertIs(prompt.encode(tokenizer), ids)
        self.assertEqual(label_token_id(tokenizer, True), tokenizer.yes_id)
        self.assertEqual(label_token_id(tokenizer, False), tokenizer.no_id)


class ProjectionTestCase(unittest.TestCase):
    def test_identity_and_zero(self):
        head = ProjectionHead(4, 4)
        h = torch.randn(4)
        with torch.no_grad():
            head.linear.weight.copy_(torch.eye(4))
        self.assertTrue(torch.equal(project_graph_token(h, head), h))
        with torch.no_grad():
            head.linear.weight.zero_()
        self.assertTrue(torch.equal(project_graph_token(h, head), torch.zeros(4)))

    def test_hand_computed(self):
        head = ProjectionHead(2, 3)
        with torch.no_grad():
            head.linear.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 2.0], [1.0, -1.0]]))
        self.assertEqual(project_graph_token(torch.tensor([3.0, 4.0]), head).tolist(), [3.0, 8.0, -1.0])

    def test_width_mismatch(self):
        with self.assertRaises(ValueError):
            project_graph_token(torch.zeros(5), ProjectionHead(4, 4))


class GenerationLossTestCase(unittest.TestCase):
    def setUp(self):
        self.g, self.codebook, self.registry = prompt_graph()
        self.tokenizer = prompt_tokenizer(self.codebook)
        self.prompt = textualize(self.g, ["S01", "S02"], self.codebook, self.registry, "A")
        self.lm = frozen_lm(self.tokenizer)

    def test_uniform_logits(self):
        with torch.no_grad():
            self.lm.ln_f.weight.zero_()
            self.lm.ln_f.bias.zero_()
        loss = generation_loss(self.lm, self.prompt, torch.randn(16), True, self.tokenizer)
        self.assertAlmostEqual(float(loss), math.log(len(self.tokenizer)), places=5)

    def test_only_projection_receives_gradients(self):
        head = ProjectionHead(8, 16)
        loss = generation_loss(self.lm, self.prompt, head(torch.randn(8)), False, self.tokenizer)
        loss.backward()
        self.assertTrue(all(p.grad is None for p in self.lm.parameters()))
        self.assertIsNotNone(head.linear.weight.grad)
        self.assertGreater(float(head.linear.weight.grad.abs().sum()), 0.0)

    def test_unfrozen_model(self):
        lm = TinyDecoderLM(len(self.tokenizer), d_lm=16, n_heads=2, n_blocks=1, max_positions=256)
        with self.assertRaises(FreezeViolationError):
            generation_loss(lm, self.prompt, torch.randn(16), True, self.tokenizer)

    def test_prompt_too_long(self):
        lm = frozen_lm(self.tokenizer, max_positions=16)
        with self.assertRaises(ConfigError):
            generation_loss(lm, self.prompt, torch.randn(16), True, self.tokenizer)

    def test_bimodal_loss(self):
        self.assertEqual(float(bimodal_loss(torch.tensor(1.25), torch.tensor(0.5))), 1.75)


class GenerateExplanationTestCase(unittest.TestCase):
    def setUp(self):
        self.g, self.codebook, self.registry = prompt_graph()
        self.tokenizer = prompt_tokenizer(self.codebook)
        self.prompt = textualize(self.g, ["S01", "S02"], self.codebook, self.registry, "B")
        self.lm = frozen_lm(self.tokenizer)
        self.z_u = torch.randn(16)

    def test_first_token_is_a_label(self):
        explanation = generate_explanation(self.lm, self.tokenizer, self.prompt, self.z_u, max_new_tokens=6)
        self.assertIn(explanation.label, ("Yes", "No"))
        self.assertIn(explanation.token_ids[0], (self.tokenizer.yes_id, self.tokenizer.no_id))
        self.assertTrue(explanation.text.startswith(explanation.label))

    def test_greedy_is_deterministic(self):
        first = generate_explanation(self.lm, self.tokenizer, self.prompt, self.z_u, max_new_tokens=6)
        second = generate_explanation(self.lm, self.tokenizer, self.prompt, self.z_u, max_new_tokens=6)
        self.assertEqual(first.token_ids, second.token_ids)

    def test_seeded_sampling(self):
        runs = [
            generate_explanation(
                self.lm,
                self.tokenizer,
                self.prompt,
                self.z_u,
                max_new_tokens=6,
                decoding="sample",
                generator=torch.Generator().manual_seed(3),
            ).token_ids
            for _ in range(2)
        ]
        self.assertEqual(runs[0], runs[1])

    def test_truncation_is_flagged(self):
        with self.assertLogs("Bimodal", level="WARNING"):
            explanation = generate_explanation(
                self.lm, self.tokenizer, self.prompt, self.z_u, max_new_tokens=1
            )
        self.assertTrue(explanation.truncated)
        self.assertEqual(explanation.text, explanation.label)

    def test_bad_settings(self):
        with self.assertRaises(ConfigError):
            generate_explanation(self.lm, self.tokenizer, self.prompt, self.z_u, max_new_tokens=0)
        with self.assertRaises(ConfigError):
            generate_explanation(self.lm, self.tokenizer, self.prompt, self.z_u, decoding="beam")

    def test_explain_graph(self):
        config = small_config()
        torch.manual_seed(0)
        detector = DetectorModel(16, self.registry, config)
        record = explain_graph(
            self.g,
            detector,
            ProjectionHead(config.hidden_dim, 16),
            self.lm,
            self.tokenizer,
            self.codebook,
            self.registry,
            config,
        )
        self.assertEqual(record["respondent_id"], "R1")
        self.assertIn(record["label"], ("Yes", "No"))
        self.assertIn(record["explanation_label"], ("Yes", "No"))
        self.assertEqual(len(record["top_questions"]), 2)
        self.assertEqual(len(record["cue_pairs"]), 1)
        self.assertEqual(sorted(record["cue_pairs"][0]), ["S01", "S02"])

    def test_agreement(self):
        records = [
            {"label": "Yes", "explanation_label": "Yes"},
            {"label": "No", "explanation_label": "Yes"},
        ]
        self.assertEqual(explanation_agreement(records), 0.5)
        self.assertEqual(explanation_agreement([]), 0.0)


class WarmupSequencesTestCase(unittest.TestCase):
    def test_alternating_variants(self):
        corpus, _ = small_corpus(n_graphs=10)
        tokenizer = prompt_tokenizer(corpus.codebook)
        sequences = build_warmup_sequences(
            corpus.graphs, corpus.codebook, corpus.registry, tokenizer, 3, np.random.default_rng(0), 4
        )
        self.assertEqual(len(sequences), 4)
        labels = (tokenizer.yes_id, tokenizer.no_id)
        for n, ids in enumerate(sequences):
            self.assertEqual(ids[-1], tokenizer.eos_id)
            self.assertNotIn(tokenizer.ids["<unk>"], ids)
            if n % 2 == 0:
                self.assertIn(ids[-2], labels)
            else:
                self.assertEqual(tokenizer.vocabulary[ids[-2]], ".")


class TrainBimodalTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus, _ = small_corpus(n_graphs=24)
        cls.config = small_config(bimodal={"batch_size": 4, "epochs": 1})
        cls.tokenizer = prompt_tokenizer(cls.corpus.codebook)

    def test_frozen_model_is_untouched(self):
        lm = frozen_lm(self.tokenizer, max_positions=512)
        digest = lm.parameter_digest()
        result = train_bimodal(self.corpus, self.config, lm=lm, tokenizer=self.tokenizer)
        self.assertEqual(lm.parameter_digest(), digest)
        self.assertIs(result.lm, lm)
        record = result.log[0]
        self.assertEqual(record["l_bi"], record["l_gen"] + record["l_cls"])
        self.assertTrue(np.isfinite(record["l_gen"]))
        self.assertIn("validation_accuracy", record)
        self.assertIsNotNone(result.projection)

    def test_unfrozen_model_is_refused(self):
        lm = TinyDecoderLM(len(self.tokenizer), d_lm=16, n_heads=2, n_blocks=1, max_positions=512)
        with self.assertRaises(FreezeViolationError):
            train_bimodal(self.corpus, self.config, lm=lm, tokenizer=self.tokenizer)

    def test_without_language_model(self):
        result = train_bimodal(self.corpus, small_config(["no_llm"], bimodal={"epochs": 2}))
        self.assertEqual(len(result.log), 2)
        self.assertNotIn("l_gen", result.log[0])
        self.assertIsNone(result.projection)
        self.assertIsNone(result.lm)

    def test_classification_loss_decreases(self):
        lm = frozen_lm(self.tokenizer, max_positions=512)
        config = small_config(bimodal={"batch_size": 4, "epochs": 10})
        result = train_bimodal(self.corpus, config, lm=lm, tokenizer=self.tokenizer)
        self.assertEqual([record["epoch"] for record in result.log], list(range(1, 11)))
        self.assertLess(result.log[9]["l_cls"], result.log[0]["l_cls"])

    def test_warm_up_path(self):
        result = train_bimodal(self.corpus, self.config)
        self.assertTrue(result.lm.frozen)
        self.assertEqual(len(result.warm_log), self.config.lm.warm_epochs)


if __name__ == "__main__":
    unittest.main()
