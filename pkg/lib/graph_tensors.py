from typing import List, Optional, Sequence

import numpy as np
import torch

from .constants import NodeKind, node_kind_index
from .exceptions import DataError
from .graph_model import RelationalGraph


class GraphBatch:
    """Block-diagonal tensors for a list of respondent graphs sharing one codebook"""

    x: torch.Tensor
    node_kind: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    etype: torch.Tensor
    user_index: torch.Tensor
    question_index: torch.Tensor
    user_relations: torch.Tensor
    question_topics: torch.Tensor
    topic_mask: torch.Tensor
    labels: Optional[torch.Tensor]
    respondent_ids: List[str]
    question_ids: List[str]

    def __init__(self, **fields):
        for name, value in fields.items():
            setattr(self, name, value)

    @property
    def n_graphs(self) -> int:
        return len(self.respondent_ids)

    @property
    def n_questions(self) -> int:
        return len(self.question_ids)

    def user_inflow_mask(self) -> torch.Tensor:
        mask = torch.zeros(self.x.shape[0], dtype=torch.bool)
        mask[self.user_index] = True
        return mask


def question_topics(g: RelationalGraph) -> List[int]:
    """Topic position (0-based among topic nodes) of every question node"""
    topic_position = {node: i for i, node in enumerate(g.topic_nodes())}
    topic_of = {}
    for s, d, _ in g.edges:
        if d in topic_position and g.node_kinds[s] == NodeKind.QUESTION:
            topic_of[s] = topic_position[d]
    try:
        return [topic_of[q] for q in g.question_nodes()]
    except KeyError as e:
        raise DataError("Question node " + str(e) + " of " + g.respondent_id + " has no topic")


def topic_mask_of(topics: Sequence[int]) -> torch.Tensor:
    """Eligible question pairs: different topics, which also excludes the diagonal"""
    topics = torch.as_tensor(list(topics), dtype=torch.long)
    return topics.unsqueeze(1) != topics.unsqueeze(0)


def collate_graphs(
    graphs: Sequence[RelationalGraph], dtype: torch.dtype = torch.float32
) -> GraphBatch:
    if not graphs:
        raise DataError("Cannot batch an empty list of graphs")
    first = graphs[0]
    question_ids = first.question_ids()
    topics = question_topics(first)
    n_questions = len(question_ids)

    features, kinds, src, dst, etype = [], [], [], [], []
    user_index, question_index, user_relations = [], [], []
    offset = 0
    for g in graphs:
        if g.question_ids() != question_ids or g.codebook_id != first.codebook_id:
            raise DataError("Graph " + g.respondent_id + " does not share the batch layout")
        features.append(g.features)
        kinds += [node_kind_index[kind] for kind in g.node_kinds]
        s, d, t = g.edge_arrays()
        src.append(s + offset)
        dst.append(d + offset)
        etype.append(t)
        user = g.user_node
        questions = g.question_nodes()
        user_index.append(user + offset)
        question_index.append([q + offset for q in questions])
        relations = {q: -1 for q in questions}
        for a, b, relation in g.edges:
            if a == user and b in relations:
                relations[b] = relation
        user_relations.append([relations[q] for q in questions])
        offset += g.n_nodes

    labels = None
    if all(g.label is not None for g in graphs):
        labels = torch.tensor([float(g.label) for g in graphs], dtype=dtype)

    return GraphBatch(
        x=torch.as_tensor(np.concatenate(features), dtype=dtype),
        node_kind=torch.tensor(kinds, dtype=torch.long),
        src=torch.as_tensor(np.concatenate(src), dtype=torch.long),
        dst=torch.as_tensor(np.concatenate(dst), dtype=torch.long),
        etype=torch.as_tensor(np.concatenate(etype), dtype=torch.long),
        user_index=torch.tensor(user_index, dtype=torch.long),
        question_index=torch.tensor(question_index, dtype=torch.long).reshape(len(graphs), n_questions),
        user_relations=torch.tensor(user_relations, dtype=torch.long).reshape(len(graphs), n_questions),
        question_topics=torch.tensor(topics, dtype=torch.long),
        topic_mask=topic_mask_of(topics),
        labels=labels,
        respondent_ids=[g.respondent_id for g in graphs],
        question_ids=question_ids,
    )
