import logging
from typing import List, Optional, Sequence

import torch
import torch.nn as nn

from .exceptions import ConfigError
from .graph_model import RelationRegistry, RelationalGraph
from .graph_tensors import GraphBatch, collate_graphs
from .rgcn import RgcnEncoder
from .run_config import RunConfig

logger = logging.getLogger("Detector")


class AttentionScorer(nn.Module):
    """Two-layer perceptron scoring [h_i || h_u]"""

    def __init__(self, dim: int):
        super().__init__()
        self.hidden = nn.Linear(2 * dim, dim)
        self.out = nn.Linear(dim, 1)

    def forward(self, h_questions: torch.Tensor, h_user: torch.Tensor) -> torch.Tensor:
        h_user = h_user.unsqueeze(-2).expand_as(h_questions)
        return self.out(torch.relu(self.hidden(torch.cat([h_questions, h_user], dim=-1)))).squeeze(-1)


class ClassifierHead(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, 1)

    def forward(self, h_agg: torch.Tensor) -> torch.Tensor:
        """Logit of illicit drug use"""
        return self.linear(h_agg).squeeze(-1)


def attention_scores(h_questions, h_user, scorer: AttentionScorer) -> torch.Tensor:
    if h_questions.shape[-2] < 1:
        raise ValueError("Attention needs at least one question")
    return torch.softmax(scorer(h_questions, h_user), dim=-1)


def aggregate_user(alpha: torch.Tensor, h_questions: torch.Tensor) -> torch.Tensor:
    if alpha.shape[-1] != h_questions.shape[-2]:
        raise ValueError(
            str(alpha.shape[-1]) + " attention weights for " + str(h_questions.shape[-2]) + " questions"
        )
    return torch.einsum("...q,...qd->...d", alpha, h_questions)


def classify(h_agg: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    return torch.sigmoid(head(h_agg))


def select_topk_questions(alpha: torch.Tensor, k_att: int) -> torch.Tensor:
    """Positions of the k_att largest weights, descending, ties to the lower position"""
    if k_att < 1 or k_att > alpha.shape[-1]:
        raise ConfigError(
            "k_att " + str(k_att) + " must lie between 1 and the question count " + str(alpha.shape[-1])
        )
    return torch.sort(alpha.detach(), dim=-1, descending=True, stable=True).indices[..., :k_att]


def topk_pool(alpha: torch.Tensor, k_att: int) -> torch.Tensor:
    """Attention renormalized over the top-k_att questions, zero elsewhere"""
    keep = torch.zeros_like(alpha, dtype=torch.bool)
    keep.scatter_(-1, select_topk_questions(alpha, k_att), True)
    kept = alpha * keep
    return kept / kept.sum(dim=-1, keepdim=True)


class DetectorOutput:
    def __init__(self, logits, probabilities, alpha, h_agg, h_user, h_questions):
        self.logits = logits
        self.probabilities = probabilities
        self.alpha = alpha
        self.h_agg = h_agg
        self.h_user = h_user
        self.h_questions = h_questions


class DetectorModel(nn.Module):
    """RGCN over the enriched graph, attention pooling and a logistic classifier"""

    def __init__(self, d_in: int, registry: RelationRegistry, config: RunConfig):
        super().__init__()
        self.k_att = config.k_att
        self.topk_pooling = config.topk_pooling
        self.encoder = RgcnEncoder(
            d_in,
            config.hidden_dim,
            len(registry),
            config.rgcn_layers,
            config.basis_threshold,
            config.num_bases,
        )
        self.scorer = AttentionScorer(config.hidden_dim)
        self.classifier = ClassifierHead(config.hidden_dim)

    def warm_start(self, pretext_encoder: RgcnEncoder):
        logger.info("Initializing the detection encoder from the pretext encoder")
        self.encoder.load_state_dict(pretext_encoder.state_dict())

    def forward(self, batch: GraphBatch) -> DetectorOutput:
        h = self.encoder(batch)
        h_user = h[batch.user_index]
        h_questions = h[batch.question_index]
        alpha = attention_scores(h_questions, h_user, self.scorer)
        pooled = topk_pool(alpha, min(self.k_att, alpha.shape[-1])) if self.topk_pooling else alpha
        h_agg = aggregate_user(pooled, h_questions)
        logits = self.classifier(h_agg)
        return DetectorOutput(logits, torch.sigmoid(logits), alpha, h_agg, h_user, h_questions)


class Prediction:
    respondent_id: str
    probability: float
    label: bool
    true_label: Optional[bool]
    top_questions: List[dict]

    def __init__(self, respondent_id, probability, label, true_label, top_questions):
        self.respondent_id = respondent_id
        self.probability = probability
        self.label = label
        self.true_label = true_label
        self.top_questions = top_questions

    def to_dict(self) -> dict:
        return {
            "respondent_id": self.respondent_id,
            "probability": self.probability,
            "label": self.label,
            "true_label": self.true_label,
            "top_questions": self.top_questions,
        }


def predictions_from_output(
    batch: GraphBatch, output: DetectorOutput, k_att: int, threshold: float = 0.5
) -> List[Prediction]:
    k = min(k_att, batch.n_questions)
    selected = select_topk_questions(output.alpha, k)
    alpha = output.alpha.detach()
    predictions = []
    for b, respondent_id in enumerate(batch.respondent_ids):
        probability = float(output.probabilities[b])
        true_label = None if batch.labels is None else bool(batch.labels[b] > 0.5)
        predictions.append(
            Prediction(
                respondent_id,
                probability,
                probability >= threshold,
                true_label,
                [
                    {"question_id": batch.question_ids[q], "alpha": float(alpha[b, q])}
                    for q in selected[b].tolist()
                ],
            )
        )
    return predictions


def predict(
    model: DetectorModel,
    graphs: Sequence[RelationalGraph],
    k_att: int,
    batch_size: int = 64,
    threshold: float = 0.5,
) -> List[Prediction]:
    model.eval()
    predictions = []
    with torch.no_grad():
        for start in range(0, len(graphs), batch_size):
            batch = collate_graphs(graphs[start : start + batch_size])
            predictions += predictions_from_output(batch, model(batch), k_att, threshold)
    return predictions


def selected_question_ids(batch: GraphBatch, alpha: torch.Tensor, k_att: int) -> List[List[str]]:
    selected = select_topk_questions(alpha, min(k_att, batch.n_questions))
    return [[batch.question_ids[q] for q in row] for row in selected.tolist()]