import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Set

import yaml

from .constants import DatasetKind, QuestionFlag, MISSING_CATEGORY
from .exceptions import CodebookError
from .profiles import profile_for

logger = logging.getLogger("Ingestion")


class Question:
    question_id: str
    text: str
    topic_id: Optional[str]
    categories: List[str]
    labels: List[str]
    flags: Set[QuestionFlag]

    def __init__(self, question_id, text, topic_id, categories, labels=None, flags=None):
        self.question_id = question_id
        self.text = text
        self.topic_id = topic_id
        self.categories = list(categories)
        self.labels = list(labels) if labels else list(categories)
        self.flags = set(flags) if flags else set()

    @property
    def is_node(self) -> bool:
        # Only plain survey questions become graph nodes
        return not (
            QuestionFlag.LABEL_SOURCE in self.flags
            or QuestionFlag.EXCLUDED in self.flags
            or QuestionFlag.USER_FEATURE in self.flags
            or QuestionFlag.NUMERIC_NORMALIZED in self.flags
        )

    @property
    def is_user_feature(self) -> bool:
        return (
            QuestionFlag.USER_FEATURE in self.flags
            or QuestionFlag.NUMERIC_NORMALIZED in self.flags
        ) and QuestionFlag.EXCLUDED not in self.flags

    def label_of(self, category: str) -> str:
        if category == MISSING_CATEGORY:
            return "Missing"
        return self.labels[self.categories.index(category)]

    def to_dict(self) -> dict:
        return {
            "id": self.question_id,
            "text": self.text,
            "topic": self.topic_id,
            "categories": self.categories,
            "labels": self.labels,
            "flags": sorted(flag.value for flag in self.flags),
        }


class Topic:
    topic_id: str
    text: str

    def __init__(self, topic_id, text):
        self.topic_id = topic_id
        self.text = text

    def to_dict(self) -> dict:
        return {"id": self.topic_id, "text": self.text}


class Codebook:
    """Questions, topics and role flags of one survey instrument"""

    dataset_kind: DatasetKind
    questions: List[Question]
    topics: List[Topic]
    question_local_categories: bool
    age_field: str
    age_codes: Optional[Dict[str, int]]
    id_field: str

    def __init__(
        self,
        dataset_kind: DatasetKind,
        questions: List[Question],
        topics: List[Topic],
        question_local_categories: bool = True,
        age_field: Optional[str] = None,
        age_codes: Optional[Dict[str, int]] = None,
        id_field: Optional[str] = None,
    ):
        profile = profile_for(dataset_kind)
        self.dataset_kind = dataset_kind
        self.questions = questions
        self.topics = topics
        self.question_local_categories = question_local_categories
        self.age_field = age_field if age_field else profile.age_field
        self.age_codes = age_codes if age_codes is not None else profile.age_codes
        self.id_field = id_field if id_field else profile.respondent_id_field

        for question in self.questions:
            # Leakage questions are excluded whatever the codebook flags say
            if profile.is_forced_exclusion(question.question_id):
                if QuestionFlag.EXCLUDED not in question.flags:
                    logger.info(
                        "Excluding "
                        + question.question_id
                        + " from graph nodes and user features, it directly reveals the label"
                    )
                question.flags.add(QuestionFlag.EXCLUDED)
            elif question.question_id in (profile.height_field, profile.weight_field):
                question.flags.add(QuestionFlag.NUMERIC_NORMALIZED)
            elif question.question_id in profile.user_feature_fields:
                question.flags.add(QuestionFlag.USER_FEATURE)

        self._questions_by_id = {q.question_id: q for q in self.questions}
        self._topics_by_id = {t.topic_id: t for t in self.topics}
        self._check()

    def _check(self):
        if len(self._questions_by_id) != len(self.questions):
            raise CodebookError("Duplicate question ids in codebook")
        if len(self._topics_by_id) != len(self.topics):
            raise CodebookError("Duplicate topic ids in codebook")
        for question in self.questions:
            if not question.categories and not (
                QuestionFlag.NUMERIC_NORMALIZED in question.flags
            ):
                raise CodebookError(
                    "Question " + question.question_id + " has no answer categories"
                )
            if len(set(question.categories)) != len(question.categories):
                raise CodebookError(
                    "Question " + question.question_id + " repeats a category"
                )
            if MISSING_CATEGORY in question.categories:
                raise CodebookError(
                    "Question "
                    + question.question_id
                    + " uses the reserved category "
                    + MISSING_CATEGORY
                )
            if len(question.labels) != len(question.categories):
                raise CodebookError(
                    "Question " + question.question_id + " labels do not match categories"
                )
            if question.is_node:
                if question.topic_id is None:
                    raise CodebookError(
                        "Question " + question.question_id + " has no topic"
                    )
                if question.topic_id not in self._topics_by_id:
                    raise CodebookError(
                        "Question "
                        + question.question_id
                        + " refers to unknown topic "
                        + str(question.topic_id)
                    )
        if not self.node_questions():
            raise CodebookError("Codebook has no questions usable as graph nodes")

    def question(self, question_id: str) -> Question:
        return self._questions_by_id[question_id]

    def has_question(self, question_id: str) -> bool:
        return question_id in self._questions_by_id

    def topic(self, topic_id: str) -> Topic:
        return self._topics_by_id[topic_id]

    def node_questions(self) -> List[Question]:
        return [q for q in self.questions if q.is_node]

    def node_topics(self) -> List[Topic]:
        used = {q.topic_id for q in self.node_questions()}
        return [t for t in self.topics if t.topic_id in used]

    def user_feature_questions(self) -> List[Question]:
        return [q for q in self.questions if q.is_user_feature]

    def excluded_question_ids(self) -> Set[str]:
        return {
            q.question_id
            for q in self.questions
            if QuestionFlag.EXCLUDED in q.flags or QuestionFlag.LABEL_SOURCE in q.flags
        }

    def to_dict(self) -> dict:
        return {
            "dataset_kind": self.dataset_kind.value,
            "question_local_categories": self.question_local_categories,
            "age_field": self.age_field,
            "age_codes": self.age_codes,
            "id_field": self.id_field,
            "topics": [t.to_dict() for t in self.topics],
            "questions": [q.to_dict() for q in self.questions],
        }

    @property
    def codebook_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def codebook_from_dict(data: dict) -> Codebook:
    try:
        dataset_kind = DatasetKind(str(data["dataset_kind"]).upper())
    except (KeyError, ValueError):
        raise CodebookError("Codebook needs a dataset_kind of YRBS, NSDUH or SYNTH")

    topics = [Topic(str(t["id"]), str(t["text"])) for t in data.get("topics", [])]
    questions = []
    for entry in data.get("questions", []):
        try:
            flags = {QuestionFlag(flag) for flag in entry.get("flags", [])}
        except ValueError as e:
            raise CodebookError("Unknown question flag: " + str(e))
        if "id" not in entry or "text" not in entry:
            raise CodebookError("Every codebook question needs an id and a text")
        questions.append(
            Question(
                question_id=str(entry["id"]),
                text=str(entry["text"]),
                topic_id=str(entry["topic"]) if entry.get("topic") is not None else None,
                categories=[str(c) for c in entry.get("categories", [])],
                labels=[str(l) for l in entry["labels"]] if entry.get("labels") else None,
                flags=flags,
            )
        )

    age_codes = data.get("age_codes")
    if age_codes is not None:
        age_codes = {str(code): int(age) for code, age in age_codes.items()}

    return Codebook(
        dataset_kind=dataset_kind,
        questions=questions,
        topics=topics,
        question_local_categories=bool(data.get("question_local_categories", True)),
        age_field=data.get("age_field"),
        age_codes=age_codes,
        id_field=data.get("id_field"),
    )


def load_codebook(codebook_path: str) -> Codebook:
    logger.debug("Loading codebook: " + str(codebook_path))
    try:
        with open(codebook_path, "r", encoding="utf-8") as codebook_file:
            data = yaml.safe_load(codebook_file)
    except (OSError, yaml.YAMLError) as e:
        raise CodebookError("Cannot read codebook " + str(codebook_path) + ": " + str(e))
    if not isinstance(data, dict):
        raise CodebookError("Codebook " + str(codebook_path) + " is not a mapping")
    return codebook_from_dict(data)


def save_codebook(codebook: Codebook, codebook_path: str):
    Path(codebook_path).write_text(
        yaml.safe_dump(codebook.to_dict(), sort_keys=False), encoding="utf-8"
    )
