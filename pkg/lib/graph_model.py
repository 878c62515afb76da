import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    EdgeTypeId,
    NodeKind,
    LATENT_RELATION,
    MISSING_CATEGORY,
    QUESTION_TOPIC_RELATION,
)
from .codebook import Codebook, codebook_from_dict
from .exceptions import DataError, HeterogeneousCorpusError

logger = logging.getLogger("GraphModel")

CORPUS_FORMAT = "surveygraph-corpus"
CORPUS_VERSION = 1

Edge = Tuple[int, int, int]


class RelationRegistry:
    """Corpus-global relation ids.

    Answer relations come first (ids 0..n_answer-1) so they double as the
    output index of the edge type head, then question-topic, then LATENT.
    """

    names: List[str]
    question_local: bool

    def __init__(self, names: List[str], question_local: bool, question_categories):
        if len(set(names)) != len(names):
            raise DataError("Relation names must be unique")
        if names[-2:] != [QUESTION_TOPIC_RELATION, LATENT_RELATION]:
            raise DataError("Relation registry must end with question-topic and LATENT")
        self.names = list(names)
        self.question_local = question_local
        # question id -> ordered categories including MISSING
        self.question_categories: Dict[str, List[str]] = {
            qid: list(cats) for qid, cats in question_categories.items()
        }
        self._ids = {name: i for i, name in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return (
            isinstance(other, RelationRegistry)
            and self.names == other.names
            and self.question_local == other.question_local
            and self.question_categories == other.question_categories
        )

    @property
    def n_answer_relations(self) -> int:
        return len(self.names) - 2

    @property
    def question_topic(self) -> EdgeTypeId:
        return EdgeTypeId(len(self.names) - 2, QUESTION_TOPIC_RELATION)

    @property
    def latent(self) -> EdgeTypeId:
        return EdgeTypeId(len(self.names) - 1, LATENT_RELATION)

    def edge_type(self, type_id: int) -> EdgeTypeId:
        if type_id < 0 or type_id >= len(self.names):
            raise DataError("Unknown relation id " + str(type_id))
        return EdgeTypeId(type_id, self.names[type_id])

    def _answer_name(self, question_id: str, category: str) -> str:
        if self.question_local:
            return question_id + "=" + category
        return category

    def answer_relation(self, question_id: str, category: str) -> EdgeTypeId:
        name = self._answer_name(question_id, category)
        if name not in self._ids:
            raise DataError(
                "No relation for answer " + category + " to question " + question_id
            )
        return EdgeTypeId(self._ids[name], name)

    def category_of(self, question_id: str, type_id: int) -> str:
        for category in self.question_categories[question_id]:
            if self._ids[self._answer_name(question_id, category)] == type_id:
                return category
        raise DataError(
            "Relation " + str(type_id) + " is not an answer to question " + question_id
        )

    def question_relations(self, question_id: str) -> List[int]:
        """Answer relation ids a question can take, MISSING included"""
        return [
            self._ids[self._answer_name(question_id, category)]
            for category in self.question_categories[question_id]
        ]

    def candidate_mask(self, question_ids: Sequence[str]) -> np.ndarray:
        mask = np.zeros((len(question_ids), self.n_answer_relations), dtype=bool)
        for row, question_id in enumerate(question_ids):
            mask[row, self.question_relations(question_id)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "question_local": self.question_local,
            "question_categories": self.question_categories,
        }


def relation_registry_from_dict(data: dict) -> RelationRegistry:
    return RelationRegistry(
        data["names"], bool(data["question_local"]), data["question_categories"]
    )


def build_relation_registry(codebook: Codebook) -> RelationRegistry:
    names: List[str] = []
    question_categories = {}
    for question in codebook.node_questions():
        categories = question.categories + [MISSING_CATEGORY]
        question_categories[question.question_id] = categories
        for category in categories:
            name = (
                question.question_id + "=" + category
                if codebook.question_local_categories
                else category
            )
            if name not in names:
                names.append(name)
    if not codebook.question_local_categories:
        # MISSING is kept last among answer relations
        names.remove(MISSING_CATEGORY)
        names.append(MISSING_CATEGORY)
    names += [QUESTION_TOPIC_RELATION, LATENT_RELATION]
    return RelationRegistry(names, codebook.question_local_categories, question_categories)


class RelationalGraph:
    """One respondent: user node 0, question nodes 1..Q, then topic nodes"""

    respondent_id: str
    codebook_id: str
    node_kinds: Tuple[NodeKind, ...]
    node_keys: Tuple[str, ...]
    features: np.ndarray
    edges: Tuple[Edge, ...]
    label: Optional[bool]
    masked: Tuple[int, ...]
    # Raw numeric user fields, normalized into the user row per run
    user_numeric: Dict[str, Optional[float]]

    def __init__(
        self,
        respondent_id,
        codebook_id,
        node_kinds,
        node_keys,
        features,
        edges,
        label=None,
        masked=(),
        user_numeric=None,
    ):
        self.respondent_id = str(respondent_id)
        self.codebook_id = codebook_id
        self.node_kinds = tuple(node_kinds)
        self.node_keys = tuple(node_keys)
        self.features = np.array(features, dtype=np.float32)
        self.features.setflags(write=False)
        self.edges = tuple(sorted((int(s), int(d), int(t)) for s, d, t in edges))
        self.label = None if label is None else bool(label)
        self.masked = tuple(sorted(masked))
        self.user_numeric = {
            str(k): (None if v is None else float(v)) for k, v in (user_numeric or {}).items()
        }

    def __eq__(self, other):
        return (
            isinstance(other, RelationalGraph)
            and self.respondent_id == other.respondent_id
            and self.codebook_id == other.codebook_id
            and self.node_kinds == other.node_kinds
            and self.node_keys == other.node_keys
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and self.edges == other.edges
            and self.label == other.label
            and self.masked == other.masked
            and self.user_numeric == other.user_numeric
        )

    def __repr__(self):
        return (
            "RelationalGraph("
            + self.respondent_id
            + ", nodes="
            + str(self.n_nodes)
            + ", edges="
            + str(len(self.edges))
            + ")"
        )

    @property
    def n_nodes(self) -> int:
        return len(self.node_kinds)

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def user_node(self) -> int:
        return self.node_kinds.index(NodeKind.USER)

    def nodes_of_kind(self, kind: NodeKind) -> List[int]:
        return [i for i, k in enumerate(self.node_kinds) if k == kind]

    def question_nodes(self) -> List[int]:
        return self.nodes_of_kind(NodeKind.QUESTION)

    def topic_nodes(self) -> List[int]:
        return self.nodes_of_kind(NodeKind.TOPIC)

    def question_ids(self) -> List[str]:
        return [self.node_keys[i] for i in self.question_nodes()]

    def node_of_question(self, question_id: str) -> int:
        for i in self.question_nodes():
            if self.node_keys[i] == question_id:
                return i
        raise KeyError(question_id)

    def edge_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.edges:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), empty.copy()
        array = np.asarray(self.edges, dtype=np.int64)
        return array[:, 0], array[:, 1], array[:, 2]

    def user_relation(self, question_node: int) -> Optional[int]:
        """Relation of the user->question edge, None when masked"""
        user = self.user_node
        for s, d, t in self.edges:
            if s == user and d == question_node:
                return t
        return None

    def topic_of(self, question_node: int) -> Optional[int]:
        for s, d, _ in self.edges:
            if s == question_node and self.node_kinds[d] == NodeKind.TOPIC:
                return d
        return None

    def replace(
        self, edges=None, masked=None, label="keep", features=None, user_numeric=None
    ) -> "RelationalGraph":
        return RelationalGraph(
            self.respondent_id,
            self.codebook_id,
            self.node_kinds,
            self.node_keys,
            self.features if features is None else features,
            self.edges if edges is None else edges,
            self.label if label == "keep" else label,
            self.masked if masked is None else masked,
            self.user_numeric if user_numeric is None else user_numeric,
        )


class Violation:
    code: str
    detail: str

    def __init__(self, code, detail):
        self.code = code
        self.detail = detail

    def __repr__(self):
        return self.code + ": " + self.detail


class ValidationReport:
    def __init__(self, respondent_id: str, violations: List[Violation]):
        self.respondent_id = respondent_id
        self.violations = violations

    def __len__(self):
        return len(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> List[str]:
        return sorted({v.code for v in self.violations})


def validate_graph(
    g: RelationalGraph, registry: Optional[RelationRegistry] = None
) -> ValidationReport:
    violations: List[Violation] = []

    def violate(code, detail):
        violations.append(Violation(code, detail))

    n_nodes = g.n_nodes
    users = g.nodes_of_kind(NodeKind.USER)
    if len(users) != 1:
        violate("user-count", str(len(users)) + " user nodes")

    if len(g.node_keys) != n_nodes:
        violate("feature-dim", "node keys do not match node count")
    if g.features.ndim != 2 or g.features.shape[0] != n_nodes:
        violate(
            "feature-dim",
            "feature matrix shape " + str(g.features.shape) + " for " + str(n_nodes) + " nodes",
        )

    edge_set = set()
    for s, d, t in g.edges:
        if not (0 <= s < n_nodes and 0 <= d < n_nodes):
            violate("unknown-node", str((s, d, t)))
            continue
        if s == d:
            violate("self-loop", "node " + str(s))
        if (s, d, t) in edge_set:
            violate("duplicate-edge", str((s, d, t)))
        edge_set.add((s, d, t))
        if registry is not None and not (0 <= t < len(registry)):
            violate("unknown-relation", "relation id " + str(t))

    for s, d, t in edge_set:
        if (d, s, t) not in edge_set:
            violate("pair-symmetry", "missing reverse of " + str((s, d, t)))

    if violations and any(v.code in ("unknown-node", "user-count") for v in violations):
        return ValidationReport(g.respondent_id, violations)

    user = users[0]
    kinds = g.node_kinds
    masked = set(g.masked)
    answer_limit = registry.n_answer_relations if registry is not None else None
    for q in g.question_nodes():
        to_user = [t for s, d, t in edge_set if s == user and d == q]
        from_user = [t for s, d, t in edge_set if s == q and d == user]
        expected = 0 if q in masked else 1
        if len(to_user) != expected or len(from_user) != expected:
            violate(
                "question-user",
                "question " + g.node_keys[q] + " has " + str(len(to_user)) + " user edges",
            )
        elif answer_limit is not None and to_user and to_user[0] >= answer_limit:
            violate("unknown-relation", "user edge of " + g.node_keys[q] + " is not an answer")
        topic_edges = [(d, t) for s, d, t in edge_set if s == q and kinds[d] == NodeKind.TOPIC]
        if len(topic_edges) != 1:
            violate(
                "question-topic",
                "question " + g.node_keys[q] + " has " + str(len(topic_edges)) + " topic edges",
            )
        elif registry is not None and topic_edges[0][1] != registry.question_topic.id:
            violate("question-topic", "question " + g.node_keys[q] + " topic edge type")

    for s, d, t in edge_set:
        both_questions = kinds[s] == NodeKind.QUESTION and kinds[d] == NodeKind.QUESTION
        is_latent = registry is not None and t == registry.latent.id
        if is_latent and not both_questions:
            violate("latent-endpoint", "LATENT edge " + str((s, d)) + " leaves the question set")
        elif both_questions:
            if registry is not None and not is_latent:
                violate("latent-endpoint", "question-question edge " + str((s, d)) + " is not LATENT")
            elif s < d and g.topic_of(s) is not None and g.topic_of(s) == g.topic_of(d):
                violate("latent-endpoint", "LATENT edge " + str((s, d)) + " stays inside a topic")
        elif kinds[s] == kinds[d]:
            violate("latent-endpoint", "edge " + str((s, d)) + " joins two " + kinds[s].value + " nodes")

    return ValidationReport(g.respondent_id, violations)


class GraphStats:
    n_graphs: int
    n_positive: int
    n_negative: int
    questions_per_graph: float
    topics_per_graph: float
    unique_relations: int

    def __init__(
        self,
        n_graphs,
        n_positive,
        n_negative,
        questions_per_graph,
        topics_per_graph,
        unique_relations,
    ):
        self.n_graphs = n_graphs
        self.n_positive = n_positive
        self.n_negative = n_negative
        self.questions_per_graph = questions_per_graph
        self.topics_per_graph = topics_per_graph
        self.unique_relations = unique_relations

    def to_dict(self) -> dict:
        return dict(vars(self))


def _per_graph(values: List[int]):
    if len(set(values)) == 1:
        return values[0]
    return float(np.mean(values))


def corpus_stats(corpus: Sequence[RelationalGraph]) -> GraphStats:
    if not corpus:
        raise DataError("Cannot compute statistics of an empty corpus")
    codebook_ids = {g.codebook_id for g in corpus}
    if len(codebook_ids) != 1:
        raise HeterogeneousCorpusError(
            "Corpus mixes " + str(len(codebook_ids)) + " codebooks"
        )
    unlabeled = [g.respondent_id for g in corpus if g.label is None]
    if unlabeled:
        raise DataError("Unlabeled graphs in corpus, first: " + unlabeled[0])

    relations = set()
    for g in corpus:
        user = g.user_node
        relations.update(t for s, _, t in g.edges if s == user)

    n_positive = sum(1 for g in corpus if g.label)
    return GraphStats(
        n_graphs=len(corpus),
        n_positive=n_positive,
        n_negative=len(corpus) - n_positive,
        questions_per_graph=_per_graph([len(g.question_nodes()) for g in corpus]),
        topics_per_graph=_per_graph([len(g.topic_nodes()) for g in corpus]),
        unique_relations=len(relations),
    )


def graph_to_dict(g: RelationalGraph) -> dict:
    return {
        "respondent_id": g.respondent_id,
        "codebook_id": g.codebook_id,
        "label": g.label,
        "nodes": [
            {"id": i, "kind": kind.value, "key": key}
            for i, (kind, key) in enumerate(zip(g.node_kinds, g.node_keys))
        ],
        "features": g.features.tolist(),
        "edges": [list(edge) for edge in g.edges],
        "masked": list(g.masked),
        "user_numeric": g.user_numeric,
    }


def graph_from_dict(data: dict) -> RelationalGraph:
    nodes = sorted(data["nodes"], key=lambda node: node["id"])
    if [node["id"] for node in nodes] != list(range(len(nodes))):
        raise DataError("Node ids of " + str(data.get("respondent_id")) + " are not dense")
    features = np.asarray(data["features"], dtype=np.float32)
    if features.ndim != 2:
        features = features.reshape(len(nodes), -1)
    return RelationalGraph(
        respondent_id=data["respondent_id"],
        codebook_id=data["codebook_id"],
        node_kinds=[NodeKind(node["kind"]) for node in nodes],
        node_keys=[node["key"] for node in nodes],
        features=features,
        edges=[tuple(edge) for edge in data["edges"]],
        label=data.get("label"),
        masked=data.get("masked", []),
        user_numeric=data.get("user_numeric"),
    )


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def serialize_graph(g: RelationalGraph) -> str:
    return dumps_record(graph_to_dict(g))


def deserialize_graph(line: str) -> RelationalGraph:
    return graph_from_dict(json.loads(line))


class Corpus:
    """Graphs sharing one codebook and relation registry"""

    codebook: Codebook
    registry: RelationRegistry
    graphs: List[RelationalGraph]
    d_in: int
    normalization: Dict[str, Dict[str, float]]

    def __init__(self, codebook, registry, graphs, d_in, normalization=None):
        self.codebook = codebook
        self.registry = registry
        self.graphs = list(graphs)
        self.d_in = d_in
        self.normalization = normalization if normalization else {}

    def __len__(self):
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.asarray([bool(g.label) for g in self.graphs], dtype=bool)

    def by_respondent(self) -> Dict[str, RelationalGraph]:
        return {g.respondent_id: g for g in self.graphs}

    def with_graphs(self, graphs) -> "Corpus":
        return Corpus(self.codebook, self.registry, graphs, self.d_in, self.normalization)

    def header(self) -> dict:
        return {
            "format": CORPUS_FORMAT,
            "version": CORPUS_VERSION,
            "codebook": self.codebook.to_dict(),
            "codebook_id": self.codebook.codebook_id,
            "relations": self.registry.to_dict(),
            "d_in": self.d_in,
            "normalization": self.normalization,
        }


def write_corpus(corpus: Corpus, corpus_path):
    logger.info(
        "Writing " + str(len(corpus.graphs)) + " graphs to " + str(corpus_path)
    )
    Path(corpus_path).parent.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as corpus_file:
        corpus_file.write(dumps_record(corpus.header()) + "\n")
        for g in corpus.graphs:
            corpus_file.write(serialize_graph(g) + "\n")


def read_corpus(corpus_path) -> Corpus:
    logger.debug("Reading corpus " + str(corpus_path))
    try:
        with open(corpus_path, "r", encoding="utf-8") as corpus_file:
            lines = [line for line in corpus_file.read().split("\n") if line.strip()]
    except OSError as e:
        raise DataError("Cannot read corpus " + str(corpus_path) + ": " + str(e))
    if not lines:
        raise DataError("Corpus " + str(corpus_path) + " is empty")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError("Corpus header is not valid JSON: " + str(e))
    if header.get("format") != CORPUS_FORMAT:
        raise DataError(str(corpus_path) + " is not a SurveyGraph corpus")
    if header.get("version") != CORPUS_VERSION:
        raise DataError("Unsupported corpus version " + str(header.get("version")))

    codebook = codebook_from_dict(header["codebook"])
    registry = relation_registry_from_dict(header["relations"])
    graphs = []
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            g = deserialize_graph(line)
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(
                str(corpus_path) + " line " + str(line_number) + ": " + str(e)
            )
        if g.codebook_id != header["codebook_id"]:
            raise HeterogeneousCorpusError(
                "Graph " + g.respondent_id + " was built from another codebook"
            )
        graphs.append(g)
    return Corpus(
        codebook, registry, graphs, int(header["d_in"]), header.get("normalization")
    )
