import logging
from typing import Dict, List, Sequence

import numpy as np
from sklearn.model_selection import train_test_split

from .run_config import SplitConfig, sub_seed

logger = logging.getLogger("Pipeline")


def _split_once(indices, labels, test_size, seed):
    stratify = labels if _can_stratify(labels, test_size) else None
    if stratify is None:
        logger.debug("Too few examples per class to stratify, splitting at random")
    return train_test_split(
        indices,
        test_size=test_size,
        random_state=seed % (2**32),
        shuffle=True,
        stratify=stratify,
    )


def _can_stratify(labels, test_size) -> bool:
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2 or counts.min() < 2:
        return False
    n_test = int(np.ceil(test_size * len(labels)))
    return len(values) <= n_test <= len(labels) - len(values)


def stratified_split(
    labels: Sequence[bool], fractions: SplitConfig, seed: int
) -> Dict[str, List[int]]:
    """Train/validation/test index lists, stratified by label when possible"""
    labels = np.asarray(labels, dtype=bool)
    indices = np.arange(len(labels))
    if len(indices) < 3:
        raise ValueError("Need at least 3 graphs to split, got " + str(len(indices)))
    split_seed = sub_seed(seed, "split")

    held_out = fractions.validation + fractions.test
    train, rest = _split_once(indices, labels, held_out, split_seed)
    validation, test = _split_once(
        rest, labels[rest], fractions.test / held_out, split_seed + 1
    )
    return {
        "train": sorted(int(i) for i in train),
        "validation": sorted(int(i) for i in validation),
        "test": sorted(int(i) for i in test),
    }
