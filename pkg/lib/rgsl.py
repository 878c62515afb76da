import logging
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn

from .exceptions import InsufficientNeighborsError, StructureError

logger = logging.getLogger("Rgsl")

RELATION_ACTIVATIONS = {
    "sigmoid": torch.sigmoid,
    "identity": lambda v: v,
}


def score_pairs(h_q: torch.Tensor, w_a: torch.Tensor) -> torch.Tensor:
    """S = (H W_a^T)(H W_a^T)^T over the last two dims, batched or not"""
    if h_q.shape[-1] != w_a.shape[1]:
        raise ValueError(
            "Score projection expects width "
            + str(w_a.shape[1])
            + ", got "
            + str(h_q.shape[-1])
        )
    if h_q.shape[-2] < 2:
        raise ValueError("Scoring needs at least 2 questions")
    projected = h_q @ w_a.t()
    return projected @ projected.transpose(-1, -2)


def _eligible(scores: torch.Tensor, topic_mask: torch.Tensor) -> torch.Tensor:
    n = scores.shape[-1]
    diagonal = torch.eye(n, dtype=torch.bool, device=scores.device)
    return topic_mask.to(torch.bool) & ~diagonal


def topk_adjacency(scores: torch.Tensor, k_sim: int, topic_mask: torch.Tensor) -> torch.Tensor:
    """Binary adjacency keeping the k_sim best eligible columns per row.

    Ties go to the lower column index.
    """
    eligible = _eligible(scores, topic_mask).expand_as(scores)
    counts = eligible.sum(dim=-1)
    if k_sim < 1:
        raise ValueError("k_sim must be positive")
    if int(counts.min()) < k_sim:
        raise InsufficientNeighborsError(
            "A question has only "
            + str(int(counts.min()))
            + " eligible neighbours, k_sim is "
            + str(k_sim)
        )
    masked = scores.detach().masked_fill(~eligible, float("-inf"))
    order = torch.sort(masked, dim=-1, descending=True, stable=True).indices
    adjacency = torch.zeros_like(scores)
    adjacency.scatter_(-1, order[..., :k_sim], 1.0)
    return adjacency


def row_normalize(adjacency: torch.Tensor, allow_empty: bool = False) -> torch.Tensor:
    degree = adjacency.sum(dim=-1, keepdim=True)
    if bool((degree == 0).any()):
        if not allow_empty:
            raise StructureError("Adjacency has a row without neighbours")
        degree = torch.where(degree == 0, torch.ones_like(degree), degree)
    return adjacency / degree


def soft_scores(scores: torch.Tensor, topic_mask: torch.Tensor) -> torch.Tensor:
    """Row softmax of S restricted to eligible pairs, zero elsewhere"""
    eligible = _eligible(scores, topic_mask).expand_as(scores)
    masked = scores.masked_fill(~eligible, float("-inf"))
    soft = torch.softmax(masked, dim=-1)
    # Rows with no eligible entry would be NaN
    return torch.nan_to_num(soft, nan=0.0)


def degree_variance_penalty(soft: torch.Tensor, lambda_deg: float) -> torch.Tensor:
    """lambda_deg times the population variance of column sums, averaged over graphs"""
    if lambda_deg == 0:
        return soft.sum() * 0.0
    column_sums = soft.sum(dim=-2)
    variance = column_sums.var(dim=-1, unbiased=False)
    return lambda_deg * variance.mean()


def relation_context(relation_weights: torch.Tensor, axis: str = "row") -> torch.Tensor:
    """Mean of the d rows (or columns) of each W_r, one vector per relation"""
    if axis == "row":
        return relation_weights.mean(dim=-2)
    if axis == "column":
        return relation_weights.mean(dim=-1)
    raise ValueError("Unknown relation mean axis " + axis)


def relation_vector(
    h_i: torch.Tensor,
    h_j: torch.Tensor,
    w_r: Optional[torch.Tensor],
    w_rel: torch.Tensor,
    activation: str = "sigmoid",
    axis: str = "row",
) -> torch.Tensor:
    """r_ij = act(W_rel [(h_i + mean(W_r)) || h_j]); w_r None drops the relation term"""
    d = h_i.shape[-1]
    if h_j.shape[-1] != d or w_rel.shape != (d, 2 * d):
        raise ValueError("Relation transform must map 2d -> d for d = " + str(d))
    left = h_i if w_r is None else h_i + relation_context(w_r, axis)
    return RELATION_ACTIVATIONS[activation](torch.cat([left, h_j], dim=-1) @ w_rel.t())


class LearnedStructure:
    """Per-graph learned question-question structure, as numpy arrays"""

    def __init__(self, respondent_id, question_ids, scores, adjacency, normalized, topic_mask):
        self.respondent_id = respondent_id
        self.question_ids = list(question_ids)
        self.scores = scores
        self.adjacency = adjacency
        self.normalized = normalized
        self.topic_mask = topic_mask

    @property
    def n_questions(self) -> int:
        return len(self.question_ids)

    def selected_edges(self) -> List[dict]:
        rows, columns = np.nonzero(self.adjacency)
        return [
            {
                "target": self.question_ids[i],
                "source": self.question_ids[j],
                "score": float(self.scores[i, j]),
            }
            for i, j in zip(rows.tolist(), columns.tolist())
        ]

    def unordered_pairs(self) -> List[tuple]:
        pairs = set()
        rows, columns = np.nonzero(self.adjacency)
        for i, j in zip(rows.tolist(), columns.tolist()):
            pairs.add((min(i, j), max(i, j)))
        return sorted(pairs)

    def to_dict(self) -> dict:
        return {"respondent_id": self.respondent_id, "edges": self.selected_edges()}


class RgslLayer(nn.Module):
    """Learns a cross-topic question adjacency per graph and passes
    relation-conditioned messages over it.

    The forward pass uses the hard top-k adjacency; gradients reach the
    scores through the row softmax of eligible scores.
    """

    def __init__(
        self,
        dim: int,
        k_sim: int = 5,
        num_answer_relations: int = 0,
        relation_vector_mode: str = "shared",
        relation_mean_axis: str = "row",
        relation_activation: str = "sigmoid",
        use_relation_matrix: bool = True,
        output_activation: str = "relu",
    ):
        super().__init__()
        self.dim = dim
        self.k_sim = k_sim
        self.relation_vector_mode = relation_vector_mode
        self.relation_mean_axis = relation_mean_axis
        self.relation_activation = relation_activation
        self.use_relation_matrix = use_relation_matrix
        self.output_activation = output_activation

        self.w_a = nn.Linear(dim, dim, bias=False)
        self.w_s = nn.Linear(dim, dim, bias=False)
        if relation_vector_mode == "shared":
            self.w_rel = nn.Linear(2 * dim, dim, bias=False)
        elif relation_vector_mode == "per-relation":
            # One extra slot for sources whose relation is masked
            self.w_rel_stack = nn.Parameter(torch.empty(num_answer_relations + 1, dim, 2 * dim))
            nn.init.xavier_uniform_(self.w_rel_stack)
        else:
            raise ValueError("Unknown relation vector mode " + relation_vector_mode)

    def scores(self, h_q: torch.Tensor) -> torch.Tensor:
        return score_pairs(h_q, self.w_a.weight)

    def _source_context(self, user_relations, relation_weights) -> torch.Tensor:
        """(B, Q, d) relation context of each message source, zero when masked or disabled"""
        batch, n_questions = user_relations.shape
        context = torch.zeros(
            batch, n_questions, self.dim, dtype=relation_weights.dtype, device=relation_weights.device
        )
        if not self.use_relation_matrix:
            return context
        known = user_relations >= 0
        if bool(known.any()):
            means = relation_context(relation_weights, self.relation_mean_axis)
            context[known] = means[user_relations[known]]
        return context

    def pair_relation_vectors(self, h_q, user_relations, relation_weights) -> torch.Tensor:
        """r[b, i, j] for every ordered pair, shape (B, Q, Q, d)"""
        d = self.dim
        context = self._source_context(user_relations, relation_weights)
        activation = RELATION_ACTIVATIONS[self.relation_activation]
        if self.relation_vector_mode == "shared":
            left = self.w_rel.weight[:, :d]
            right = self.w_rel.weight[:, d:]
            target_part = h_q @ left.t()
            source_part = context @ left.t() + h_q @ right.t()
            return activation(target_part.unsqueeze(2) + source_part.unsqueeze(1))

        slots = torch.where(
            user_relations >= 0,
            user_relations,
            torch.full_like(user_relations, self.w_rel_stack.shape[0] - 1),
        )
        weights = self.w_rel_stack[slots]
        left = weights[..., :d]
        right = weights[..., d:]
        target_part = torch.einsum("bjok,bik->bijo", left, h_q)
        source_part = torch.einsum("bjok,bjk->bjo", left, context) + torch.einsum(
            "bjok,bjk->bjo", right, h_q
        )
        return activation(target_part + source_part.unsqueeze(1))

    def forward(
        self,
        h_q: torch.Tensor,
        topic_mask: torch.Tensor,
        user_relations: torch.Tensor,
        relation_weights: torch.Tensor,
        adjacency: Optional[torch.Tensor] = None,
    ):
        """Returns (updated question embeddings, scores, hard adjacency, soft scores).

        Passing adjacency overrides the learned selection; an all-zero
        adjacency leaves only the residual term.
        """
        if h_q.dim() == 2:
            h_q = h_q.unsqueeze(0)
            user_relations = user_relations.reshape(1, -1)
        scores = self.scores(h_q)
        soft = soft_scores(scores, topic_mask)
        if adjacency is None:
            adjacency_used = topk_adjacency(scores, self.k_sim, topic_mask)
            hard = row_normalize(adjacency_used)
        else:
            adjacency_used = adjacency.to(h_q.dtype).expand_as(scores)
            hard = row_normalize(adjacency_used, allow_empty=True)
        # Forward value is exactly hard, gradient is that of soft
        straight_through = hard + (soft - soft.detach())

        relation_vectors = self.pair_relation_vectors(h_q, user_relations, relation_weights)
        messages = torch.einsum("bij,bijd,bjd->bid", straight_through, relation_vectors, h_q)
        out = messages + self.w_s(h_q)
        if self.output_activation == "relu":
            out = torch.relu(out)
        return out, scores, adjacency_used, soft


def structures_from_batch(batch, scores, adjacency) -> List[LearnedStructure]:
    scores = scores.detach().cpu().numpy()
    adjacency = adjacency.detach().cpu().numpy()
    topic_mask = batch.topic_mask.cpu().numpy()
    structures = []
    for b, respondent_id in enumerate(batch.respondent_ids):
        degree = adjacency[b].sum(axis=1, keepdims=True)
        structures.append(
            LearnedStructure(
                respondent_id,
                batch.question_ids,
                scores[b],
                adjacency[b].astype(np.int8),
                adjacency[b] / np.where(degree == 0, 1, degree),
                topic_mask,
            )
        )
    return structures
