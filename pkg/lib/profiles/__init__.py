from lib.constants import DatasetInfo, DatasetKind
from lib.exceptions import ConfigError

from . import yrbs, nsduh, synth


def profile_for(dataset_kind: DatasetKind) -> DatasetInfo:
    if dataset_kind == DatasetKind.YRBS:
        return yrbs.yrbs_info
    if dataset_kind == DatasetKind.NSDUH:
        return nsduh.nsduh_info
    if dataset_kind == DatasetKind.SYNTH:
        return synth.synth_info
    raise ConfigError("No dataset profile for " + str(dataset_kind))
