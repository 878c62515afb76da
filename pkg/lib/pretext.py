import logging
from collections import Counter
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .constants import EdgeTypeId
from .exceptions import DivergenceError, StructureError
from .graph_model import Corpus, RelationRegistry, RelationalGraph
from .graph_tensors import GraphBatch, collate_graphs
from .rgcn import RgcnEncoder
from .rgsl import (
    LearnedStructure,
    RgslLayer,
    degree_variance_penalty,
    structures_from_batch,
)
from .run_config import RunConfig, stream_rng, sub_seed
from .splits import stratified_split

logger = logging.getLogger("Pretext")


class MaskedInstance:
    graph: RelationalGraph
    target_question: int
    target_relation: EdgeTypeId

    def __init__(self, graph, target_question, target_relation):
        self.graph = graph
        self.target_question = target_question
        self.target_relation = target_relation

    @property
    def target_position(self) -> int:
        return self.graph.question_nodes().index(self.target_question)


def mask_user_edge(
    g: RelationalGraph, question_node: int, registry: Optional[RelationRegistry] = None
) -> MaskedInstance:
    relation = g.user_relation(question_node)
    if relation is None:
        raise StructureError(
            "Question node " + str(question_node) + " of " + g.respondent_id + " is already masked"
        )
    user = g.user_node
    edges = [
        edge
        for edge in g.edges
        if edge not in ((user, question_node, relation), (question_node, user, relation))
    ]
    masked = g.replace(edges=edges, masked=tuple(g.masked) + (question_node,))
    name = registry.names[relation] if registry is not None else str(relation)
    return MaskedInstance(masked, question_node, EdgeTypeId(relation, name))


def mask_random_user_edge(
    g: RelationalGraph, rng: np.random.Generator, registry: Optional[RelationRegistry] = None
) -> MaskedInstance:
    """Removes both directions of one uniformly chosen user-question edge"""
    candidates = [q for q in g.question_nodes() if q not in g.masked]
    if not candidates:
        raise StructureError("Graph " + g.respondent_id + " has no question left to mask")
    question_node = candidates[int(rng.integers(len(candidates)))]
    return mask_user_edge(g, question_node, registry)


def edge_type_loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean cross-entropy of the masked edge types"""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    target = torch.as_tensor(target, dtype=torch.long, device=logits.device).reshape(-1)
    if int(target.min()) < 0 or int(target.max()) >= logits.shape[-1]:
        raise ValueError(
            "Target relation out of range for " + str(logits.shape[-1]) + " answer relations"
        )
    return F.cross_entropy(logits, target)


class EdgeTypeHead(nn.Module):
    """Answer-relation logits from [h_u || h_q]"""

    def __init__(self, dim: int, num_answer_relations: int):
        super().__init__()
        self.linear = nn.Linear(2 * dim, num_answer_relations)

    def forward(self, h_u, h_q, candidate_mask: Optional[torch.Tensor] = None):
        logits = self.linear(torch.cat([h_u, h_q], dim=-1))
        if candidate_mask is not None:
            logits = logits.masked_fill(~candidate_mask, float("-inf"))
        return logits


class PretextOutput:
    def __init__(self, logits, scores, adjacency, soft, penalty, h_user):
        self.logits = logits
        self.scores = scores
        self.adjacency = adjacency
        self.soft = soft
        self.penalty = penalty
        self.h_user = h_user


class PretextModel(nn.Module):
    """RGCN encoder with the user inflow restricted, then the RGSL layer over questions"""

    def __init__(self, d_in: int, registry: RelationRegistry, config: RunConfig):
        super().__init__()
        self.lambda_deg = config.lambda_deg
        self.encoder = RgcnEncoder(
            d_in,
            config.hidden_dim,
            len(registry),
            config.rgcn_layers,
            config.basis_threshold,
            config.num_bases,
        )
        self.rgsl = None
        if not config.ablation.no_rgsl:
            self.rgsl = RgslLayer(
                config.hidden_dim,
                k_sim=config.k_sim,
                num_answer_relations=registry.n_answer_relations,
                relation_vector_mode=config.relation_vector_mode,
                relation_mean_axis=config.relation_mean_axis,
                relation_activation=config.relation_activation,
                use_relation_matrix=not config.ablation.no_relation_matrix,
            )
        self.head = EdgeTypeHead(config.hidden_dim, registry.n_answer_relations)

    def forward(
        self,
        batch: GraphBatch,
        target_positions: Optional[torch.Tensor] = None,
        candidate_mask: Optional[torch.Tensor] = None,
    ) -> PretextOutput:
        h = self.encoder(batch, inflow_mask=batch.user_inflow_mask())
        h_user = h[batch.user_index]
        h_q = h[batch.question_index]

        scores = adjacency = soft = None
        penalty = h.sum() * 0.0
        if self.rgsl is not None:
            h_q, scores, adjacency, soft = self.rgsl(
                h_q,
                batch.topic_mask,
                batch.user_relations,
                self.encoder.final_relation_weights(),
            )
            penalty = degree_variance_penalty(soft, self.lambda_deg)

        logits = None
        if target_positions is not None:
            rows = torch.arange(batch.n_graphs)
            logits = self.head(h_user, h_q[rows, target_positions], candidate_mask)
        return PretextOutput(logits, scores, adjacency, soft, penalty, h_user)


def _candidate_mask(registry: RelationRegistry, instances: Sequence[MaskedInstance]):
    if not registry.question_local:
        return None
    question_ids = [m.graph.node_keys[m.target_question] for m in instances]
    return torch.as_tensor(registry.candidate_mask(question_ids))


def masked_batch(instances: Sequence[MaskedInstance], registry: RelationRegistry):
    batch = collate_graphs([m.graph for m in instances])
    positions = torch.tensor([m.target_position for m in instances], dtype=torch.long)
    targets = torch.tensor([m.target_relation.id for m in instances], dtype=torch.long)
    return batch, positions, targets, _candidate_mask(registry, instances)


def column_degree_variance(adjacency: torch.Tensor) -> float:
    """Population variance of learned in-degrees, averaged over graphs"""
    return float(adjacency.sum(dim=-2).var(dim=-1, unbiased=False).mean())


def masked_edge_accuracy(
    model: PretextModel,
    graphs: Sequence[RelationalGraph],
    registry: RelationRegistry,
    rng: np.random.Generator,
    batch_size: int = 64,
) -> float:
    if not graphs:
        return 0.0
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(graphs), batch_size):
            instances = [mask_random_user_edge(g, rng, registry) for g in graphs[start : start + batch_size]]
            batch, positions, targets, candidates = masked_batch(instances, registry)
            logits = model(batch, positions, candidates).logits
            correct += int((logits.argmax(dim=-1) == targets).sum())
    return correct / len(graphs)


def majority_baseline_accuracy(graphs: Sequence[RelationalGraph]) -> float:
    """Accuracy of predicting each question's most common answer, question chosen uniformly"""
    per_question = {}
    for g in graphs:
        user = g.user_node
        for s, d, t in g.edges:
            if s == user:
                per_question.setdefault(g.node_keys[d], Counter())[t] += 1
    shares = [
        counts.most_common(1)[0][1] / sum(counts.values())
        for counts in per_question.values()
    ]
    return float(np.mean(shares))


class PretextResult:
    def __init__(self, model, structures, log, split, baseline):
        self.model = model
        self.structures = structures
        self.log = log
        self.split = split
        self.majority_baseline = baseline


def pretrain(
    corpus: Corpus,
    config: RunConfig,
    callback: Optional[Callable] = None,
    split=None,
) -> PretextResult:
    registry = corpus.registry
    if split is None:
        split = stratified_split(corpus.labels(), config.split, config.seed)
    train_graphs = [corpus.graphs[i] for i in split["train"]]
    validation_graphs = [corpus.graphs[i] for i in split["validation"]]

    torch.manual_seed(sub_seed(config.seed, "init"))
    model = PretextModel(corpus.d_in, registry, config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    masking_rng = stream_rng(config.seed, "masking")
    baseline = majority_baseline_accuracy(train_graphs)
    logger.info(
        "Pretext training on "
        + str(len(train_graphs))
        + " graphs, majority baseline accuracy "
        + str(round(baseline, 4))
    )

    log = []
    batch_size = config.pretext.batch_size
    epochs = config.pretext.epochs
    for epoch in range(1, epochs + 1):
        model.train()
        order = masking_rng.permutation(len(train_graphs))
        total_loss = 0.0
        correct = 0
        variances = []
        for start in range(0, len(order), batch_size):
            chosen = [train_graphs[i] for i in order[start : start + batch_size]]
            instances = [mask_random_user_edge(g, masking_rng, registry) for g in chosen]
            batch, positions, targets, candidates = masked_batch(instances, registry)

            output = model(batch, positions, candidates)
            loss = edge_type_loss(output.logits, targets) + output.penalty
            if not torch.isfinite(loss):
                raise DivergenceError(
                    "Pretext loss became "
                    + str(float(loss))
                    + " at epoch "
                    + str(epoch)
                    + ", batch starting at "
                    + str(start)
                    + "; try a lower lr"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            total_loss += float(loss) * len(chosen)
            correct += int((output.logits.argmax(dim=-1) == targets).sum())
            if output.adjacency is not None:
                variances.append(column_degree_variance(output.adjacency) * len(chosen))

        evaluation_rng = np.random.default_rng(sub_seed(config.seed, "evaluation") + epoch)
        record = {
            "epoch": epoch,
            "loss": total_loss / len(train_graphs),
            "accuracy": correct / len(train_graphs),
            "degree_variance": sum(variances) / len(train_graphs) if variances else 0.0,
            "validation_accuracy": masked_edge_accuracy(
                model, validation_graphs, registry, evaluation_rng
            ),
        }
        log.append(record)
        logger.info(
            "Pretext epoch "
            + str(epoch)
            + " loss "
            + str(round(record["loss"], 5))
            + " accuracy "
            + str(round(record["accuracy"], 4))
        )
        if callback:
            callback(step="Pretext", status="epoch " + str(epoch), progress=100.0 * epoch / epochs)

    structures = compute_structures(model, corpus.graphs) if model.rgsl is not None else []
    return PretextResult(model, structures, log, split, baseline)


def compute_structures(
    model: PretextModel, graphs: Sequence[RelationalGraph], batch_size: int = 64
) -> List[LearnedStructure]:
    """Structure of every graph from the final parameters, no edge masked"""
    model.eval()
    structures = []
    with torch.no_grad():
        for start in range(0, len(graphs), batch_size):
            batch = collate_graphs(graphs[start : start + batch_size])
            output = model(batch)
            structures += structures_from_batch(batch, output.scores, output.adjacency)
    return structures


def enrich_graph(
    g: RelationalGraph, structure: LearnedStructure, registry: RelationRegistry
) -> RelationalGraph:
    """Adds one LATENT edge pair per selected question pair"""
    questions = g.question_nodes()
    if structure.n_questions != len(questions):
        raise StructureError(
            "Structure has "
            + str(structure.n_questions)
            + " questions, graph "
            + g.respondent_id
            + " has "
            + str(len(questions))
        )
    if structure.question_ids != g.question_ids():
        raise StructureError("Structure and graph " + g.respondent_id + " order questions differently")
    invalid = (structure.adjacency > 0) & ~structure.topic_mask.astype(bool)
    if invalid.any():
        raise StructureError("Structure of " + g.respondent_id + " links questions of one topic")

    latent = registry.latent.id
    edges = set(g.edges)
    for i, j in structure.unordered_pairs():
        a, b = questions[i], questions[j]
        edges.add((a, b, latent))
        edges.add((b, a, latent))
    return g.replace(edges=edges)


def enrich_corpus(corpus: Corpus, structures: Sequence[LearnedStructure]) -> Corpus:
    by_respondent = {s.respondent_id: s for s in structures}
    enriched = []
    for g in corpus.graphs:
        if g.respondent_id not in by_respondent:
            raise StructureError("No learned structure for " + g.respondent_id)
        enriched.append(enrich_graph(g, by_respondent[g.respondent_id], corpus.registry))
    return corpus.with_graphs(enriched)


def latent_pair_frequencies(structures: Sequence[LearnedStructure]) -> List[dict]:
    """How often each unordered question pair is selected across graphs, most frequent first"""
    counts = Counter()
    for structure in structures:
        for i, j in structure.unordered_pairs():
            counts[(structure.question_ids[i], structure.question_ids[j])] += 1
    total = max(len(structures), 1)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [
        {"question_a": a, "question_b": b, "graphs": n, "share": n / total}
        for (a, b), n in ranked
    ]
