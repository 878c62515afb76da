import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import yaml
from sklearn.metrics import mutual_info_score

from .codebook import Codebook, Question, Topic
from .constants import DatasetKind, QuestionFlag, MAX_AGE, MIN_AGE
from .embedders.embedder_interface import EmbedderInterface
from .exceptions import ConfigError, InfeasibleBaseRateError
from .graph_model import Corpus
from .ingestion import ingest_records

logger = logging.getLogger("Synthetic")

BASE_RATE_TOLERANCE = 0.05
BIAS_BOUND = 20.0


def expit(x):
    return 1.0 / (1.0 + np.exp(-x))


_subjects = [
    "skipped breakfast",
    "felt nervous",
    "played team sports",
    "rode in a car",
    "stayed up past midnight",
    "spent time online",
    "argued with family",
    "missed school",
    "ate fast food",
    "felt hopeless",
    "exercised outdoors",
    "worked a paid job",
    "visited a doctor",
    "texted while driving",
    "felt lonely",
    "helped a neighbor",
    "drank soda",
    "read for fun",
    "was bullied",
    "volunteered",
]

_topic_names = [
    "daily routines",
    "mental health",
    "physical activity",
    "safety",
    "social life",
    "school",
    "nutrition",
    "technology use",
]


class PlantedPair:
    question_a: int
    question_b: int
    strength: float

    def __init__(self, question_a, question_b, strength):
        self.question_a = int(question_a)
        self.question_b = int(question_b)
        self.strength = float(strength)

    def __repr__(self):
        return (
            "PlantedPair("
            + str(self.question_a)
            + ", "
            + str(self.question_b)
            + ", "
            + str(self.strength)
            + ")"
        )


class SynthSpec:
    n_questions: int
    n_topics: int
    n_answer_categories: int
    n_graphs: int
    planted_pairs: List[PlantedPair]
    label_weights: Dict[int, float]
    base_rate: float
    seed: int

    def __init__(
        self,
        n_questions=20,
        n_topics=4,
        n_answer_categories=4,
        n_graphs=500,
        planted_pairs=None,
        label_weights=None,
        base_rate=0.35,
        seed=0,
    ):
        self.n_questions = int(n_questions)
        self.n_topics = int(n_topics)
        self.n_answer_categories = int(n_answer_categories)
        self.n_graphs = int(n_graphs)
        if planted_pairs is None:
            planted_pairs = [PlantedPair(0, 5, 0.9), PlantedPair(2, 7, 0.9), PlantedPair(9, 14, 0.9)]
        self.planted_pairs = list(planted_pairs)
        if label_weights is None:
            label_weights = {0: 2.0, 5: 2.0, 2: -1.5, 7: -1.5, 9: 1.0, 14: 1.0}
        self.label_weights = {int(q): float(w) for q, w in label_weights.items()}
        self.base_rate = float(base_rate)
        self.seed = int(seed)
        self._check()

    def topic_of(self, question: int) -> int:
        # Round-robin topics
        return question % self.n_topics

    def _check(self):
        if self.n_topics < 2:
            raise ConfigError("Synthetic corpora need at least 2 topics")
        if self.n_questions < self.n_topics:
            raise ConfigError("Every topic needs at least one question")
        if self.n_answer_categories < 2:
            raise ConfigError("Synthetic questions need at least 2 answer categories")
        if self.n_graphs < 3:
            raise ConfigError("Synthetic corpora need at least 3 graphs")
        if not 0.0 < self.base_rate < 1.0:
            raise InfeasibleBaseRateError("Base rate must lie strictly between 0 and 1")
        for pair in self.planted_pairs:
            for q in (pair.question_a, pair.question_b):
                if q < 0 or q >= self.n_questions:
                    raise ConfigError("Planted pair " + repr(pair) + " is out of range")
            if self.topic_of(pair.question_a) == self.topic_of(pair.question_b):
                raise ConfigError("Planted pair " + repr(pair) + " stays inside one topic")
            if not 0.0 < pair.strength <= 1.0:
                raise ConfigError("Planted pair strength must lie in (0, 1]")
        for q in self.label_weights:
            if q < 0 or q >= self.n_questions:
                raise ConfigError("Label weight on unknown question " + str(q))

    def question_id(self, question: int) -> str:
        return "S" + str(question + 1).zfill(2)

    def topic_id(self, topic: int) -> str:
        return "T" + str(topic + 1)

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "n_topics": self.n_topics,
            "n_answer_categories": self.n_answer_categories,
            "n_graphs": self.n_graphs,
            "planted_pairs": [
                [p.question_a, p.question_b, p.strength] for p in self.planted_pairs
            ],
            "label_weights": dict(self.label_weights),
            "base_rate": self.base_rate,
            "seed": self.seed,
        }


def synth_spec_from_dict(values: dict) -> SynthSpec:
    known = set(SynthSpec().to_dict().keys())
    unknown = set(values) - known
    if unknown:
        raise ConfigError("Unknown synthetic config keys: " + ", ".join(sorted(unknown)))
    values = dict(values)
    if "planted_pairs" in values:
        values["planted_pairs"] = [PlantedPair(*pair) for pair in values["planted_pairs"]]
    return SynthSpec(**values)


def load_synth_spec(spec_path) -> SynthSpec:
    try:
        with open(spec_path, "r") as spec_file:
            values = yaml.safe_load(spec_file) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError("Cannot read synthetic config " + str(spec_path) + ": " + str(e))
    return synth_spec_from_dict(values)


def synthetic_codebook(spec: SynthSpec) -> Codebook:
    topics = [
        Topic(
            spec.topic_id(t),
            "Topic about " + _topic_names[t % len(_topic_names)] + " group " + str(t + 1),
        )
        for t in range(spec.n_topics)
    ]
    categories = [str(c) for c in range(spec.n_answer_categories)]
    labels = ["Level " + str(c) for c in range(spec.n_answer_categories)]
    questions = []
    for q in range(spec.n_questions):
        subject = _subjects[q % len(_subjects)]
        round_number = q // len(_subjects)
        text = "During the past 30 days, how often have you " + subject
        if round_number:
            text += " in setting " + str(round_number + 1)
        questions.append(
            Question(spec.question_id(q), text + "?", spec.topic_id(spec.topic_of(q)), categories, labels)
        )
    questions += [
        Question(
            "AGE",
            "How old are you?",
            None,
            [str(age) for age in range(MIN_AGE, MAX_AGE + 1)],
            flags={QuestionFlag.USER_FEATURE},
        ),
        Question("SEX", "What is your sex?", None, ["1", "2"], ["Female", "Male"], {QuestionFlag.USER_FEATURE}),
        Question("HEIGHT", "How tall are you in inches?", None, [], flags={QuestionFlag.NUMERIC_NORMALIZED}),
        Question("WEIGHT", "How much do you weigh in pounds?", None, [], flags={QuestionFlag.NUMERIC_NORMALIZED}),
        Question("LABEL", "Illicit drug use", None, ["0", "1"], flags={QuestionFlag.LABEL_SOURCE}),
    ]
    return Codebook(DatasetKind.SYNTH, questions, topics, question_local_categories=True)


def _encoded(answers: np.ndarray, n_categories: int) -> np.ndarray:
    return answers / (n_categories - 1) - 0.5


def fit_bias(scores: np.ndarray, base_rate: float) -> Tuple[float, float]:
    """Bias whose expected positive rate over the sampled respondents is base_rate"""
    low, high = -BIAS_BOUND, BIAS_BOUND
    for _ in range(100):
        middle = (low + high) / 2.0
        if float(np.mean(expit(scores + middle))) < base_rate:
            low = middle
        else:
            high = middle
    bias = (low + high) / 2.0
    achieved = float(np.mean(expit(scores + bias)))
    if abs(achieved - base_rate) > BASE_RATE_TOLERANCE:
        raise InfeasibleBaseRateError(
            "Label weights reach a base rate of "
            + str(round(achieved, 4))
            + ", target was "
            + str(base_rate)
        )
    return bias, achieved


class GroundTruth:
    def __init__(self, spec: SynthSpec, bias: float, expected_base_rate: float):
        self.spec = spec
        self.bias = bias
        self.expected_base_rate = expected_base_rate

    def planted_question_pairs(self) -> List[Tuple[str, str]]:
        return [
            (self.spec.question_id(p.question_a), self.spec.question_id(p.question_b))
            for p in self.spec.planted_pairs
        ]

    def to_dict(self) -> dict:
        spec = self.spec
        return {
            "seed": spec.seed,
            "planted_pairs": [
                {
                    "a": spec.question_id(p.question_a),
                    "b": spec.question_id(p.question_b),
                    "strength": p.strength,
                }
                for p in spec.planted_pairs
            ],
            "label_function": {
                "link": "logistic",
                "bias": self.bias,
                "weights": {
                    spec.question_id(q): w for q, w in sorted(spec.label_weights.items())
                },
                "answer_encoding": "category / (categories - 1) - 0.5",
                "base_rate_target": spec.base_rate,
                "expected_base_rate": self.expected_base_rate,
            },
            "spec": spec.to_dict(),
        }

    def save(self, sidecar_path):
        Path(sidecar_path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8"
        )


def load_ground_truth(sidecar_path) -> GroundTruth:
    with open(sidecar_path, "r") as sidecar_file:
        values = yaml.safe_load(sidecar_file)
    spec = synth_spec_from_dict(values["spec"])
    label_function = values["label_function"]
    return GroundTruth(spec, label_function["bias"], label_function["expected_base_rate"])


def sample_answers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    answers = rng.integers(
        0, spec.n_answer_categories, size=(spec.n_graphs, spec.n_questions)
    )
    for pair in spec.planted_pairs:
        copied = rng.random(spec.n_graphs) < pair.strength
        answers[copied, pair.question_b] = answers[copied, pair.question_a]
    return answers


def generate_synthetic_records(spec: SynthSpec) -> Tuple[List[Dict[str, str]], GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    answers = sample_answers(spec, rng)

    weights = np.zeros(spec.n_questions)
    for q, w in spec.label_weights.items():
        weights[q] = w
    scores = _encoded(answers, spec.n_answer_categories) @ weights
    bias, achieved = fit_bias(scores, spec.base_rate)
    labels = rng.random(spec.n_graphs) < expit(scores + bias)

    ages = rng.integers(MIN_AGE, MAX_AGE + 1, size=spec.n_graphs)
    sexes = rng.integers(1, 3, size=spec.n_graphs)
    heights = np.round(rng.normal(66.0, 4.0, size=spec.n_graphs), 1)
    weights_lb = np.round(rng.normal(140.0, 25.0, size=spec.n_graphs), 1)

    records = []
    for n in range(spec.n_graphs):
        record = {"respondent_id": "R" + str(n + 1).zfill(6)}
        for q in range(spec.n_questions):
            record[spec.question_id(q)] = str(int(answers[n, q]))
        record["AGE"] = str(int(ages[n]))
        record["SEX"] = str(int(sexes[n]))
        record["HEIGHT"] = repr(float(heights[n]))
        record["WEIGHT"] = repr(float(weights_lb[n]))
        record["LABEL"] = "1" if labels[n] else "0"
        records.append(record)

    logger.info(
        "Generated "
        + str(spec.n_graphs)
        + " synthetic respondents, "
        + str(int(labels.sum()))
        + " positive"
    )
    return records, GroundTruth(spec, bias, achieved)


def generate_synthetic_corpus(
    spec: SynthSpec,
    embedder: EmbedderInterface,
) -> Tuple[Corpus, GroundTruth]:
    records, ground_truth = generate_synthetic_records(spec)
    codebook = synthetic_codebook(spec)
    rows = [(n + 2, record) for n, record in enumerate(records)]
    corpus = ingest_records(rows, codebook, embedder)
    return corpus, ground_truth


def write_survey(records: Sequence[Dict[str, str]], survey_path):
    with open(survey_path, "w", newline="", encoding="utf-8") as survey_file:
        writer = csv.DictWriter(survey_file, fieldnames=list(records[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)


def answer_dependency(records: Sequence[Dict[str, str]], question_a: str, question_b: str) -> float:
    """Empirical mutual information (nats) between two answer columns"""
    return float(
        mutual_info_score(
            [r[question_a] for r in records], [r[question_b] for r in records]
        )
    )


def planted_pair_recovery(
    adjacencies: Sequence[np.ndarray],
    question_ids: Sequence[str],
    planted: Sequence[Tuple[str, str]],
) -> float:
    """Mean per-graph share of planted directed pairs selected by the learned adjacency"""
    position = {qid: i for i, qid in enumerate(question_ids)}
    directed = []
    for a, b in planted:
        directed += [(position[a], position[b]), (position[b], position[a])]
    per_graph = [
        float(np.mean([adjacency[i, j] > 0 for i, j in directed]))
        for adjacency in adjacencies
    ]
    return float(np.mean(per_graph))


def random_recovery_baseline(
    k_sim: int, topic_mask: np.ndarray, question_ids: Sequence[str], planted: Sequence[Tuple[str, str]]
) -> float:
    """Expected planted_pair_recovery of a uniform top-k choice among eligible neighbors"""
    position = {qid: i for i, qid in enumerate(question_ids)}
    rows = []
    for a, b in planted:
        rows += [position[a], position[b]]
    return float(np.mean([k_sim / topic_mask[i].sum() for i in rows]))
