import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .codebook import Codebook, Question
from .constants import (
    DatasetInfo,
    DatasetKind,
    NodeKind,
    QuestionFlag,
    MAX_AGE,
    MIN_AGE,
    MISSING_CATEGORY,
    USER_NODE_KEY,
)
from .embedders.embedder_interface import EmbedderInterface
from .exceptions import (
    AgeOutOfRangeError,
    CategoryError,
    ConfigError,
    DataError,
    MissingFieldError,
    SurveyParseError,
)
from .graph_model import Corpus, RelationRegistry, RelationalGraph, build_relation_registry
from .profiles import profile_for

logger = logging.getLogger("Ingestion")

Record = Mapping[str, str]


def _is_blank(value) -> bool:
    return value is None or str(value).strip() in ("", ".", "NA", "NaN", "nan")


def _integral_text(value: str) -> Optional[str]:
    try:
        number = float(value)
    except ValueError:
        return None
    if number.is_integer():
        return str(int(number))
    return None


def match_category(question: Question, value) -> str:
    """Codebook category of a raw answer; blank answers map to MISSING"""
    if _is_blank(value):
        return MISSING_CATEGORY
    text = str(value).strip()
    if text in question.categories:
        return text
    # "3.0" written by spreadsheet exports
    integral = _integral_text(text)
    if integral is not None and integral in question.categories:
        return integral
    raise CategoryError(
        "Answer " + repr(text) + " is not a category of question " + question.question_id
    )


def derive_label(record: Record, dataset_kind: Union[DatasetKind, DatasetInfo]) -> bool:
    profile = (
        dataset_kind
        if isinstance(dataset_kind, DatasetInfo)
        else profile_for(dataset_kind)
    )
    positive = False
    for label_field in profile.label_fields:
        if label_field not in record:
            raise MissingFieldError("Label field " + label_field + " is missing")
        value = record[label_field]
        if _is_blank(value):
            continue
        try:
            number = float(value)
        except ValueError:
            raise CategoryError(
                "Label field " + label_field + " has non-numeric value " + repr(value)
            )
        if number == 1.0:
            positive = True
    return positive


def respondent_age(record: Record, codebook: Codebook) -> int:
    if codebook.age_field not in record or _is_blank(record[codebook.age_field]):
        raise MissingFieldError("Age field " + codebook.age_field + " is missing")
    raw = str(record[codebook.age_field]).strip()
    if codebook.age_codes is not None:
        code = _integral_text(raw) or raw
        if code not in codebook.age_codes:
            raise CategoryError("Unknown age code " + raw)
        return codebook.age_codes[code]
    try:
        return int(float(raw))
    except ValueError:
        raise CategoryError("Age " + raw + " is not a number")


def check_age(record: Record, codebook: Codebook) -> int:
    age = respondent_age(record, codebook)
    if age < MIN_AGE or age > MAX_AGE:
        raise AgeOutOfRangeError(
            "Age "
            + str(age)
            + " is outside "
            + str(MIN_AGE)
            + "-"
            + str(MAX_AGE)
        )
    return age


class UserFeatureEncoder:
    """One-hot demographics followed by z-scored numeric fields, zero padded to d_in.

    Numeric slots stay zero until the encoder is fitted; graphs carry the
    raw values so each run can normalize on its own training split.
    """

    def __init__(self, codebook: Codebook, d_in: int, normalization=None):
        self.d_in = d_in
        self.categorical: List[Question] = []
        self.numeric: List[Question] = []
        for question in codebook.user_feature_questions():
            if QuestionFlag.NUMERIC_NORMALIZED in question.flags:
                self.numeric.append(question)
            else:
                self.categorical.append(question)
        self.numeric_offset = sum(len(q.categories) for q in self.categorical)
        self.width = self.numeric_offset + len(self.numeric)
        if self.width > d_in:
            raise DataError(
                "User features need "
                + str(self.width)
                + " dimensions but d_in is "
                + str(d_in)
            )
        self.normalization: Dict[str, Dict[str, float]] = dict(normalization or {})

    def numeric_columns(self) -> Dict[str, int]:
        return {
            q.question_id: self.numeric_offset + n for n, q in enumerate(self.numeric)
        }

    def numeric_values(self, record: Record) -> Dict[str, Optional[float]]:
        values = {}
        for question in self.numeric:
            if question.question_id not in record:
                raise MissingFieldError("Field " + question.question_id + " is missing")
            values[question.question_id] = self._number(record, question)
        return values

    def fit(self, records: List[Record]) -> "UserFeatureEncoder":
        return self.fit_values([self.numeric_values(record) for record in records])

    def fit_values(
        self, rows: Sequence[Mapping[str, Optional[float]]]
    ) -> "UserFeatureEncoder":
        for question in self.numeric:
            values = [
                row[question.question_id]
                for row in rows
                if row.get(question.question_id) is not None
            ]
            if values:
                mean = float(np.mean(values))
                std = float(np.std(values))
            else:
                mean, std = 0.0, 1.0
            if std == 0.0:
                std = 1.0
            self.normalization[question.question_id] = {"mean": mean, "std": std}
            logger.debug(
                "Normalizing "
                + question.question_id
                + " with mean "
                + str(mean)
                + " std "
                + str(std)
            )
        return self

    @staticmethod
    def _number(record: Record, question: Question) -> Optional[float]:
        value = record.get(question.question_id)
        if _is_blank(value):
            return None
        try:
            number = float(value)
        except ValueError:
            raise CategoryError(
                "Value " + repr(value) + " of " + question.question_id + " is not numeric"
            )
        if not np.isfinite(number):
            return None
        return number

    def encode(self, record: Record) -> np.ndarray:
        vector = np.zeros(self.d_in, dtype=np.float32)
        offset = 0
        for question in self.categorical:
            if question.question_id not in record:
                raise MissingFieldError("Field " + question.question_id + " is missing")
            category = match_category(question, record[question.question_id])
            if category != MISSING_CATEGORY:
                vector[offset + question.categories.index(category)] = 1.0
            offset += len(question.categories)
        return self.normalized_row(vector, self.numeric_values(record))

    def normalized_row(
        self, row: np.ndarray, values: Mapping[str, Optional[float]]
    ) -> np.ndarray:
        """Copy of a user row with the numeric slots z-scored; missing values stay 0"""
        vector = np.array(row, dtype=np.float32)
        for question_id, column in self.numeric_columns().items():
            vector[column] = 0.0
            number = values.get(question_id)
            stats = self.normalization.get(question_id)
            if number is not None and stats is not None:
                vector[column] = (number - stats["mean"]) / stats["std"]
        return vector


def build_respondent_graph(
    record: Record,
    codebook: Codebook,
    embedder: EmbedderInterface,
    registry: Optional[RelationRegistry] = None,
    encoder: Optional[UserFeatureEncoder] = None,
    label: Optional[bool] = None,
    respondent_id: Optional[str] = None,
) -> RelationalGraph:
    check_age(record, codebook)
    if registry is None:
        registry = build_relation_registry(codebook)
    d_in = embedder.dim
    if encoder is None:
        encoder = UserFeatureEncoder(codebook, d_in)
    elif encoder.d_in != d_in:
        raise ConfigError("User feature width does not match the embedder dimension")

    if respondent_id is None:
        if codebook.id_field not in record:
            raise MissingFieldError("Respondent id field " + codebook.id_field + " is missing")
        respondent_id = str(record[codebook.id_field]).strip()

    questions = codebook.node_questions()
    topics = codebook.node_topics()
    topic_nodes = {t.topic_id: 1 + len(questions) + i for i, t in enumerate(topics)}

    node_kinds = [NodeKind.USER]
    node_keys = [USER_NODE_KEY]
    features = [encoder.encode(record)]
    edges = []
    question_topic = registry.question_topic.id
    for node, question in enumerate(questions, start=1):
        if question.question_id not in record:
            raise MissingFieldError("Field " + question.question_id + " is missing")
        category = match_category(question, record[question.question_id])
        relation = registry.answer_relation(question.question_id, category).id
        node_kinds.append(NodeKind.QUESTION)
        node_keys.append(question.question_id)
        features.append(embedder.embed_text(question.text))
        topic_node = topic_nodes[question.topic_id]
        edges += [
            (0, node, relation),
            (node, 0, relation),
            (node, topic_node, question_topic),
            (topic_node, node, question_topic),
        ]
    for topic in topics:
        node_kinds.append(NodeKind.TOPIC)
        node_keys.append(topic.topic_id)
        features.append(embedder.embed_text(topic.text))

    return RelationalGraph(
        respondent_id=respondent_id,
        codebook_id=codebook.codebook_id,
        node_kinds=node_kinds,
        node_keys=node_keys,
        features=np.stack(features),
        edges=edges,
        label=label,
        user_numeric=encoder.numeric_values(record),
    )


def read_survey(survey_path) -> List[Tuple[int, Dict[str, str]]]:
    """Rows of a delimited survey file with their line numbers"""
    try:
        with open(survey_path, "r", newline="", encoding="utf-8-sig") as survey_file:
            sample = survey_file.read(65536)
            survey_file.seek(0)
            if not sample.strip():
                raise SurveyParseError(1, "survey file is empty")
            try:
                dialect = csv.Sniffer().sniff(sample.split("\n")[0], delimiters=",\t;|")
            except csv.Error:
                dialect = csv.excel
            reader = csv.DictReader(survey_file, dialect=dialect)
            if not reader.fieldnames:
                raise SurveyParseError(1, "survey file has no header row")
            rows = []
            for row in reader:
                if None in row:
                    raise SurveyParseError(reader.line_num, "more values than header fields")
                rows.append((reader.line_num, {k.strip(): v for k, v in row.items()}))
    except OSError as e:
        raise DataError("Cannot read survey " + str(survey_path) + ": " + str(e))
    except csv.Error as e:
        raise SurveyParseError(0, str(e))
    if not rows:
        raise SurveyParseError(2, "survey file has a header but no records")
    return rows


def ingest_records(
    rows: List[Tuple[int, Record]],
    codebook: Codebook,
    embedder: EmbedderInterface,
    workers: int = 1,
    callback: Optional[Callable] = None,
) -> Corpus:
    """Respondent graphs in input order; numeric user fields are left raw"""
    registry = build_relation_registry(codebook)
    profile = profile_for(codebook.dataset_kind)

    kept: List[Tuple[int, Record, bool]] = []
    skipped_age = 0
    seen_ids = set()
    for line_number, record in rows:
        try:
            check_age(record, codebook)
            label = derive_label(record, profile)
        except AgeOutOfRangeError as e:
            skipped_age += 1
            logger.debug("Skipping line " + str(line_number) + ": " + str(e))
            continue
        except DataError as e:
            raise SurveyParseError(line_number, str(e))
        respondent_id = str(record.get(codebook.id_field, "")).strip()
        if not respondent_id:
            raise SurveyParseError(line_number, "respondent id " + codebook.id_field + " is missing")
        if respondent_id in seen_ids:
            raise SurveyParseError(line_number, "duplicate respondent id " + respondent_id)
        seen_ids.add(respondent_id)
        kept.append((line_number, record, label))

    if skipped_age:
        logger.info(
            "Skipped "
            + str(skipped_age)
            + " respondents outside ages "
            + str(MIN_AGE)
            + "-"
            + str(MAX_AGE)
        )
    if len(kept) < 3:
        raise SurveyParseError(0, "fewer than 3 usable records in survey")

    encoder = UserFeatureEncoder(codebook, embedder.dim)

    def build(entry):
        line_number, record, label = entry
        try:
            return build_respondent_graph(
                record, codebook, embedder, registry, encoder, label=label
            )
        except DataError as e:
            raise SurveyParseError(line_number, str(e))

    graphs: List[RelationalGraph] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            for graph in executor.map(build, kept):
                graphs.append(graph)
                if callback:
                    callback(step="Ingesting", status=graph.respondent_id, progress=100.0 * len(graphs) / len(kept))
    else:
        for entry in kept:
            graphs.append(build(entry))
            if callback:
                callback(step="Ingesting", status=graphs[-1].respondent_id, progress=100.0 * len(graphs) / len(kept))

    logger.info("Built " + str(len(graphs)) + " respondent graphs")
    return Corpus(codebook, registry, graphs, embedder.dim)


def ingest_survey(
    survey_path,
    codebook: Codebook,
    embedder: EmbedderInterface,
    workers: int = 1,
    callback: Optional[Callable] = None,
) -> Corpus:
    logger.info("Ingesting survey " + str(survey_path))
    rows = read_survey(survey_path)
    return ingest_records(rows, codebook, embedder, workers, callback)


def normalize_user_features(corpus: Corpus, train_indices: Sequence[int]) -> Corpus:
    """Z-scores the numeric user fields with statistics of the given training graphs.

    Always starts from the raw values on each graph, so applying it again
    with the same indices gives the same corpus.
    """
    encoder = UserFeatureEncoder(corpus.codebook, corpus.d_in)
    if not encoder.numeric:
        return corpus
    if not train_indices:
        raise DataError("Cannot normalize user features without training graphs")
    encoder.fit_values([corpus.graphs[i].user_numeric for i in train_indices])
    for question_id, stats in encoder.normalization.items():
        logger.info(
            "Normalizing "
            + question_id
            + " on "
            + str(len(train_indices))
            + " training graphs, mean "
            + str(round(stats["mean"], 4))
            + " std "
            + str(round(stats["std"], 4))
        )

    graphs = []
    for g in corpus.graphs:
        features = np.array(g.features)
        user = g.user_node
        features[user] = encoder.normalized_row(features[user], g.user_numeric)
        graphs.append(g.replace(features=features))
    return Corpus(corpus.codebook, corpus.registry, graphs, corpus.d_in, encoder.normalization)
