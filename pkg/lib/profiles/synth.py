from lib.constants import DatasetInfo, DatasetKind

synth_info = DatasetInfo(
    dataset_kind=DatasetKind.SYNTH,
    label_fields=["LABEL"],
    age_field="AGE",
    age_codes=None,
    leakage_exclusions=set(),
    excluded_prefixes=(),
    height_field="HEIGHT",
    weight_field="WEIGHT",
    respondent_id_field="respondent_id",
    user_feature_fields=("AGE", "SEX"),
)
