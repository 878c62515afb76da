import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import Codebook
from .constants import MISSING_CATEGORY
from .detector import DetectorModel, predict, selected_question_ids
from .exceptions import (
    ConfigError,
    DataError,
    DivergenceError,
    FreezeViolationError,
    MetricsError,
    UnknownQuestionError,
)
from .graph_model import Corpus, RelationRegistry, RelationalGraph
from .graph_tensors import collate_graphs
from .metrics import compute_metrics
from .rgcn import RgcnEncoder
from .run_config import RunConfig, stream_rng, sub_seed
from .splits import stratified_split
from .tiny_lm import (
    NO_TOKEN,
    YES_TOKEN,
    TinyDecoderLM,
    Tokenizer,
    build_tokenizer,
    warm_train,
)

logger = logging.getLogger("Bimodal")

SYSTEM_INSTRUCTION = (
    "Here are some question-answer pairs provided by a user aged between 15 and 25 years old. "
    "Based on these facts, infer whether this user uses illicit drugs."
)
QA_HEADER = "Here are the question-answer pairs:"
CUE_TEMPLATE = "Think about the possible relations between {} and {} given the user's answers to them."
INFERENCE_QUESTION = "Based on these facts, can you infer whether this user uses illicit drugs?"
FOLLOWING_PROMPTS = {
    "A": 'Please answer with only "Yes" or "No".',
    "B": 'Please answer "Yes" or "No" and explain why.',
}
RATIONALES = {
    True: "Yes. The answers about {} point to illicit drug use.",
    False: "No. The answers about {} do not point to illicit drug use.",
}


def answer_text(codebook: Codebook, question_id: str, category: str) -> str:
    """Coded answers read "code - label", as in the public codebooks"""
    question = codebook.question(question_id)
    label = question.label_of(category)
    if category == MISSING_CATEGORY or label == category:
        return label
    return category + " - " + label


class PromptBundle:
    variant: str
    system: str
    qa_pairs: List[Tuple[str, str]]
    cue_pairs: List[Tuple[str, str]]
    question_ids: List[str]

    def __init__(self, variant, system, qa_pairs, cue_pairs, cue_texts, question_ids):
        self.variant = variant
        self.system = system
        self.qa_pairs = list(qa_pairs)
        self.cue_pairs = list(cue_pairs)
        self.cue_texts = list(cue_texts)
        self.question_ids = list(question_ids)
        self.token_ids: Optional[List[int]] = None

    def lines(self) -> List[str]:
        lines = [self.system, QA_HEADER]
        for question, answer in self.qa_pairs:
            lines.append("Question: " + question)
            lines.append("Answer: " + answer)
        for a, b in self.cue_texts:
            lines.append(CUE_TEMPLATE.format(a, b))
        lines.append(INFERENCE_QUESTION)
        lines.append(FOLLOWING_PROMPTS[self.variant])
        return lines

    @property
    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def encode(self, tokenizer: Tokenizer) -> List[int]:
        if self.token_ids is None:
            self.token_ids = tokenizer.encode(self.text)
        return self.token_ids


def textualize(
    g: RelationalGraph,
    selected: Sequence[str],
    codebook: Codebook,
    registry: RelationRegistry,
    variant: str = "A",
) -> PromptBundle:
    """Prompt for the selected questions, in the given (attention) order.

    A cue line is emitted for every LATENT edge joining two selected
    questions, earlier question first.
    """
    if variant not in FOLLOWING_PROMPTS:
        raise ValueError("Prompt variant must be A or B, got " + str(variant))
    if not selected:
        raise DataError("No questions selected for the prompt of " + g.respondent_id)
    graph_questions = set(g.question_ids())
    nodes = []
    qa_pairs = []
    for question_id in selected:
        if question_id not in graph_questions or not codebook.has_question(question_id):
            raise UnknownQuestionError(
                "Question " + str(question_id) + " is not part of graph " + g.respondent_id
            )
        node = g.node_of_question(question_id)
        relation = g.user_relation(node)
        category = (
            MISSING_CATEGORY if relation is None else registry.category_of(question_id, relation)
        )
        nodes.append(node)
        qa_pairs.append(
            (codebook.question(question_id).text, answer_text(codebook, question_id, category))
        )

    latent = registry.latent.id
    edges = set(g.edges)
    cue_pairs = []
    for i, a in enumerate(nodes):
        for j in range(i + 1, len(nodes)):
            if (a, nodes[j], latent) in edges:
                cue_pairs.append((selected[i], selected[j]))
    cue_texts = [
        (codebook.question(a).text, codebook.question(b).text) for a, b in cue_pairs
    ]
    return PromptBundle(variant, SYSTEM_INSTRUCTION, qa_pairs, cue_pairs, cue_texts, selected)


def rationale_text(label: bool, codebook: Codebook, question_id: str) -> str:
    subject = codebook.question(question_id).text.rstrip(" ?.").lower()
    return RATIONALES[bool(label)].format(subject)


def prompt_tokenizer(codebook: Codebook) -> Tokenizer:
    """Vocabulary of every text a prompt or warm-up target can contain"""
    texts = [SYSTEM_INSTRUCTION, QA_HEADER, CUE_TEMPLATE, INFERENCE_QUESTION]
    texts += list(FOLLOWING_PROMPTS.values()) + list(RATIONALES.values())
    for question in codebook.node_questions():
        texts.append(question.text)
        for category in question.categories + [MISSING_CATEGORY]:
            texts.append(answer_text(codebook, question.question_id, category))
    return build_tokenizer(texts)


def label_token_id(tokenizer: Tokenizer, label: bool) -> int:
    token = YES_TOKEN if label else NO_TOKEN
    if token not in tokenizer.ids:
        raise DataError("Label token " + token + " is missing from the vocabulary")
    return tokenizer.ids[token]


class ProjectionHead(nn.Module):
    """Linear map from the aggregated user embedding to one LM input vector"""

    def __init__(self, dim: int, d_lm: int):
        super().__init__()
        self.linear = nn.Linear(dim, d_lm, bias=False)

    def forward(self, h_agg: torch.Tensor) -> torch.Tensor:
        return self.linear(h_agg)


def project_graph_token(h_agg: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    if h_agg.shape[-1] != head.linear.in_features:
        raise ValueError(
            "Graph embedding width "
            + str(h_agg.shape[-1])
            + " does not match the projection input "
            + str(head.linear.in_features)
        )
    return head(h_agg)


def _check_prompt_length(lm: TinyDecoderLM, n_tokens: int, extra: int = 0):
    if 1 + n_tokens + extra > lm.max_positions:
        raise ConfigError(
            "Prompt of "
            + str(n_tokens)
            + " tokens does not fit lm.max_positions "
            + str(lm.max_positions)
            + "; lower k_att or raise max_positions"
        )


def generation_loss(
    lm: TinyDecoderLM,
    prompt: PromptBundle,
    z_u: torch.Tensor,
    true_label: bool,
    tokenizer: Tokenizer,
) -> torch.Tensor:
    """Negative log-likelihood of the label token right after the prompt"""
    if not lm.frozen:
        raise FreezeViolationError("The language model must be frozen to compute the generation loss")
    target = label_token_id(tokenizer, true_label)
    ids = prompt.encode(tokenizer)
    _check_prompt_length(lm, len(ids))
    logits = lm(torch.tensor([ids], dtype=torch.long), prefix=z_u.reshape(1, 1, -1))
    return F.cross_entropy(logits[0, -1].unsqueeze(0), torch.tensor([target]))


def bimodal_loss(l_gen: torch.Tensor, l_cls: torch.Tensor) -> torch.Tensor:
    return l_gen + l_cls


class Explanation:
    text: str
    label: str
    truncated: bool

    def __init__(self, text, label, truncated, token_ids):
        self.text = text
        self.label = label
        self.truncated = truncated
        self.token_ids = token_ids


def generate_explanation(
    lm: TinyDecoderLM,
    tokenizer: Tokenizer,
    prompt: PromptBundle,
    z_u: torch.Tensor,
    max_new_tokens: int = 48,
    decoding: str = "greedy",
    generator: Optional[torch.Generator] = None,
    temperature: float = 1.0,
) -> Explanation:
    """Decodes an answer; the first token is restricted to Yes or No"""
    if decoding not in ("greedy", "sample"):
        raise ConfigError("Decoding must be greedy or sample, got " + str(decoding))
    if max_new_tokens < 1:
        raise ConfigError("max_new_tokens must be positive")
    ids = list(prompt.encode(tokenizer))
    _check_prompt_length(lm, len(ids))
    prefix = z_u.detach().reshape(1, 1, -1)
    label_ids = torch.tensor([tokenizer.yes_id, tokenizer.no_id])
    generated = []
    truncated = True
    with torch.no_grad():
        for step in range(max_new_tokens):
            if 1 + len(ids) + len(generated) > lm.max_positions:
                break
            logits = lm(torch.tensor([ids + generated], dtype=torch.long), prefix=prefix)[0, -1]
            if step == 0:
                allowed = torch.full_like(logits, float("-inf"))
                allowed[label_ids] = logits[label_ids]
                logits = allowed
            if decoding == "greedy":
                token = int(torch.argmax(logits))
            else:
                probabilities = torch.softmax(logits / temperature, dim=-1)
                token = int(torch.multinomial(probabilities, 1, generator=generator))
            if token == tokenizer.eos_id:
                truncated = False
                break
            generated.append(token)
    if truncated:
        logger.warning("Explanation stopped at " + str(len(generated)) + " tokens without a terminator")
    return Explanation(
        tokenizer.decode(generated), tokenizer.vocabulary[generated[0]], truncated, generated
    )


def build_warmup_sequences(
    graphs: Sequence[RelationalGraph],
    codebook: Codebook,
    registry: RelationRegistry,
    tokenizer: Tokenizer,
    k_att: int,
    rng: np.random.Generator,
    n_samples: int,
) -> List[List[int]]:
    """Templated prompts followed by the gold answer, alternating variants A and B"""
    sequences = []
    for sample in range(n_samples):
        g = graphs[int(rng.integers(len(graphs)))]
        question_ids = g.question_ids()
        k = min(k_att, len(question_ids))
        chosen = [question_ids[i] for i in rng.choice(len(question_ids), size=k, replace=False)]
        variant = "A" if sample % 2 == 0 else "B"
        prompt = textualize(g, chosen, codebook, registry, variant)
        ids = list(prompt.encode(tokenizer))
        if variant == "A":
            ids.append(label_token_id(tokenizer, bool(g.label)))
        else:
            ids += tokenizer.encode(rationale_text(bool(g.label), codebook, chosen[0]), bos=False)
        ids.append(tokenizer.eos_id)
        sequences.append(ids)
    return sequences


def prepare_language_model(
    corpus: Corpus,
    config: RunConfig,
    graphs: Sequence[RelationalGraph],
    callback: Optional[Callable] = None,
) -> Tuple[TinyDecoderLM, Tokenizer, List[dict]]:
    """Builds the tokenizer and LM, warm-trains it on training prompts, then freezes it"""
    tokenizer = prompt_tokenizer(corpus.codebook)
    torch.manual_seed(sub_seed(config.seed, "warmup"))
    lm = TinyDecoderLM(
        len(tokenizer),
        d_lm=config.lm.d_lm,
        n_heads=config.lm.n_heads,
        n_blocks=config.lm.n_blocks,
        max_positions=config.lm.max_positions,
    )
    rng = stream_rng(config.seed, "warmup")
    sequences = build_warmup_sequences(
        graphs,
        corpus.codebook,
        corpus.registry,
        tokenizer,
        config.k_att,
        rng,
        config.lm.warm_samples,
    )
    longest = max(len(s) for s in sequences)
    _check_prompt_length(lm, longest)
    logger.info(
        "Warm-training the language model: vocabulary "
        + str(len(tokenizer))
        + ", "
        + str(len(sequences))
        + " sequences"
    )
    warm_log = warm_train(
        lm, sequences, config.lm.warm_epochs, config.lm.warm_lr, rng, callback=callback
    )
    lm.freeze()
    return lm, tokenizer, warm_log


class BimodalResult:
    def __init__(self, detector, projection, lm, tokenizer, log, warm_log, split):
        self.detector = detector
        self.projection = projection
        self.lm = lm
        self.tokenizer = tokenizer
        self.log = log
        self.warm_log = warm_log
        self.split = split


def validation_scores(
    detector: DetectorModel, graphs: Sequence[RelationalGraph], k_att: int
) -> Dict[str, Optional[float]]:
    if not graphs:
        return {"validation_accuracy": None, "validation_auc": None}
    predictions = predict(detector, graphs, k_att)
    probabilities = np.array([p.probability for p in predictions])
    labels = np.array([bool(g.label) for g in graphs])
    try:
        report = compute_metrics(probabilities, labels)
        return {"validation_accuracy": report.accuracy, "validation_auc": report.auc}
    except MetricsError:
        accuracy = float(np.mean((probabilities >= 0.5) == labels))
        return {"validation_accuracy": accuracy, "validation_auc": None}


def train_bimodal(
    corpus: Corpus,
    config: RunConfig,
    split=None,
    lm: Optional[TinyDecoderLM] = None,
    tokenizer: Optional[Tokenizer] = None,
    pretext_encoder: Optional[RgcnEncoder] = None,
    callback: Optional[Callable] = None,
) -> BimodalResult:
    """Optimizes the classification loss plus, unless no_llm, the label-token generation loss.

    Only the detector and the projection head receive updates; the LM
    digest is compared before and after.
    """
    registry = corpus.registry
    codebook = corpus.codebook
    if split is None:
        split = stratified_split(corpus.labels(), config.split, config.seed)
    train_graphs = [corpus.graphs[i] for i in split["train"]]
    validation_graphs = [corpus.graphs[i] for i in split["validation"]]
    if any(g.label is None for g in train_graphs):
        raise DataError("Bimodal training needs labeled graphs")

    use_llm = not config.ablation.no_llm
    warm_log = []
    if use_llm and (lm is None or tokenizer is None):
        lm, tokenizer, warm_log = prepare_language_model(corpus, config, train_graphs, callback)
    if not use_llm:
        lm = tokenizer = None
        logger.info("Language model disabled, training on the classification loss only")

    torch.manual_seed(sub_seed(config.seed, "init"))
    detector = DetectorModel(corpus.d_in, registry, config)
    if config.warm_start and pretext_encoder is not None:
        detector.warm_start(pretext_encoder)
    parameters = list(detector.parameters())
    projection = None
    digest_before = None
    if use_llm:
        if not lm.frozen:
            raise FreezeViolationError("The language model must be frozen before bimodal training")
        projection = ProjectionHead(config.hidden_dim, lm.d_lm)
        parameters += list(projection.parameters())
        digest_before = lm.parameter_digest()

    optimizer = torch.optim.Adam(parameters, lr=config.lr, weight_decay=config.weight_decay)
    order_rng = stream_rng(config.seed, "init")
    batch_size = config.bimodal.batch_size
    epochs = config.bimodal.epochs
    log = []
    for epoch in range(1, epochs + 1):
        detector.train()
        order = order_rng.permutation(len(train_graphs))
        cls_total = 0.0
        gen_total = 0.0
        for start in range(0, len(order), batch_size):
            chosen = [train_graphs[i] for i in order[start : start + batch_size]]
            batch = collate_graphs(chosen)
            output = detector(batch)
            l_cls = F.binary_cross_entropy_with_logits(output.logits, batch.labels)
            loss = l_cls
            if use_llm:
                selected = selected_question_ids(batch, output.alpha, config.k_att)
                losses = []
                for b, g in enumerate(chosen):
                    prompt = textualize(g, selected[b], codebook, registry, "A")
                    z_u = project_graph_token(output.h_agg[b], projection)
                    losses.append(generation_loss(lm, prompt, z_u, bool(g.label), tokenizer))
                l_gen = torch.stack(losses).mean()
                loss = bimodal_loss(l_gen, l_cls)
                gen_total += float(l_gen) * len(chosen)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    "Bimodal loss became " + str(float(loss)) + " at epoch " + str(epoch) + "; try a lower lr"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            cls_total += float(l_cls) * len(chosen)

        record = {"epoch": epoch, "l_cls": cls_total / len(train_graphs)}
        if use_llm:
            record["l_gen"] = gen_total / len(train_graphs)
            record["l_bi"] = record["l_gen"] + record["l_cls"]
        record.update(validation_scores(detector, validation_graphs, config.k_att))
        log.append(record)
        logger.info(
            "Bimodal epoch "
            + str(epoch)
            + " L_cls "
            + str(round(record["l_cls"], 5))
            + (" L_gen " + str(round(record["l_gen"], 5)) if use_llm else "")
        )
        if callback:
            callback(step="Bimodal", status="epoch " + str(epoch), progress=100.0 * epoch / epochs)

    if use_llm and lm.parameter_digest() != digest_before:
        raise FreezeViolationError("Language model parameters changed during bimodal training")
    return BimodalResult(detector, projection, lm, tokenizer, log, warm_log, split)


def explain_graph(
    g: RelationalGraph,
    detector: DetectorModel,
    projection: ProjectionHead,
    lm: TinyDecoderLM,
    tokenizer: Tokenizer,
    codebook: Codebook,
    registry: RelationRegistry,
    config: RunConfig,
    generator: Optional[torch.Generator] = None,
) -> dict:
    """Prediction, top questions, relation cues and generated text for one respondent"""
    detector.eval()
    batch = collate_graphs([g])
    with torch.no_grad():
        output = detector(batch)
        selected = selected_question_ids(batch, output.alpha, config.k_att)[0]
        prompt = textualize(g, selected, codebook, registry, "B")
        z_u = project_graph_token(output.h_agg[0], projection)
    explanation = generate_explanation(
        lm,
        tokenizer,
        prompt,
        z_u,
        max_new_tokens=config.lm.max_new_tokens,
        decoding=config.lm.decoding,
        generator=generator,
        temperature=config.lm.temperature,
    )
    probability = float(output.probabilities[0])
    positions = {q: i for i, q in enumerate(batch.question_ids)}
    return {
        "respondent_id": g.respondent_id,
        "probability": probability,
        "label": YES_TOKEN if probability >= 0.5 else NO_TOKEN,
        "explanation": explanation.text,
        "explanation_label": explanation.label,
        "truncated": explanation.truncated,
        "top_questions": [
            {"question_id": q, "alpha": float(output.alpha[0, positions[q]])} for q in selected
        ],
        "cue_pairs": [list(pair) for pair in prompt.cue_pairs],
    }


def decoding_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(sub_seed(seed, "decoding"))


def explanation_agreement(records: Sequence[dict]) -> float:
    """Share of explanations whose first token matches the graph classifier"""
    if not records:
        return 0.0
    return sum(r["explanation_label"] == r["label"] for r in records) / len(records)
