from enum import Enum
import os
import sys
from typing import Dict, List, Optional, Set, Tuple


class NodeKind(Enum):
    USER = "User"
    QUESTION = "Question"
    TOPIC = "Topic"


# Position of each kind in per-kind parameter stacks
node_kind_index = {NodeKind.USER: 0, NodeKind.QUESTION: 1, NodeKind.TOPIC: 2}


class DatasetKind(Enum):
    YRBS = "YRBS"
    NSDUH = "NSDUH"
    SYNTH = "SYNTH"


class QuestionFlag(Enum):
    LABEL_SOURCE = "label_source"
    EXCLUDED = "excluded"
    USER_FEATURE = "user_feature"
    NUMERIC_NORMALIZED = "numeric_normalized"


MISSING_CATEGORY = "MISSING"
QUESTION_TOPIC_RELATION = "question-topic"
LATENT_RELATION = "LATENT"
USER_NODE_KEY = "user"

# Age window of the studied population, inclusive
MIN_AGE = 15
MAX_AGE = 25


class EdgeTypeId:
    id: int
    name: str

    def __init__(self, id: int, name: str):
        self.id = id
        self.name = name

    def __eq__(self, other):
        return (
            isinstance(other, EdgeTypeId)
            and self.id == other.id
            and self.name == other.name
        )

    def __hash__(self):
        return hash((self.id, self.name))

    def __repr__(self):
        return "EdgeTypeId(" + str(self.id) + ", " + repr(self.name) + ")"


class DatasetInfo:
    dataset_kind: DatasetKind
    label_fields: List[str]
    age_field: str
    age_codes: Optional[Dict[str, int]]
    leakage_exclusions: Set[str]
    excluded_prefixes: Tuple[str, ...]
    height_field: Optional[str]
    weight_field: Optional[str]
    respondent_id_field: str
    user_feature_fields: Tuple[str, ...]

    def __init__(
        self,
        dataset_kind,
        label_fields,
        age_field,
        age_codes,
        leakage_exclusions,
        excluded_prefixes,
        height_field,
        weight_field,
        respondent_id_field,
        user_feature_fields=(),
    ):
        self.dataset_kind = dataset_kind
        self.label_fields = label_fields
        self.age_field = age_field
        self.age_codes = age_codes
        self.leakage_exclusions = leakage_exclusions
        self.excluded_prefixes = excluded_prefixes
        self.height_field = height_field
        self.weight_field = weight_field
        self.respondent_id_field = respondent_id_field
        # One-hot user node demographics; height and weight are added as numeric
        self.user_feature_fields = tuple(user_feature_fields)

    def is_forced_exclusion(self, question_id: str) -> bool:
        if question_id in self.leakage_exclusions:
            return True
        return any(question_id.startswith(prefix) for prefix in self.excluded_prefixes)


def internal_path(*path_parts) -> str:
    if getattr(sys, "frozen", False):
        __location__ = os.path.dirname(os.path.abspath(sys.argv[0]))
        return os.path.join(__location__, *path_parts)
    else:
        __location__ = os.path.realpath(os.path.dirname(__file__))
        return os.path.join(__location__, os.path.pardir, *path_parts)
