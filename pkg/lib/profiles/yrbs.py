from lib.constants import DatasetInfo, DatasetKind

# Youth Risk Behavior Survey, public-use microdata layout (2023 release).

# Illicit drug use is positive when any of these dichotomous variables is 1.
yrbs_label_fields = ["QNILLICT"] + ["QN" + str(n) for n in range(46, 56)]

# Q46-Q55 (drug use items) and Q92-Q93 directly reveal the label.
yrbs_leakage_exclusions = set(
    ["Q" + str(n) for n in range(46, 56)] + ["Q92", "Q93"]
)

# QN* variables are dichotomous duplicates of the raw Q* questions.
yrbs_excluded_prefixes = ("QN",)

# Age, sex, grade, Hispanic or Latino, race
yrbs_user_feature_fields = ("Q1", "Q2", "Q3", "Q4", "Q5")

# Q1 is coded 1 = "12 years old or younger" ... 7 = "18 years old or older"
yrbs_age_codes = {
    "1": 12,
    "2": 13,
    "3": 14,
    "4": 15,
    "5": 16,
    "6": 17,
    "7": 18,
}

yrbs_info = DatasetInfo(
    dataset_kind=DatasetKind.YRBS,
    label_fields=yrbs_label_fields,
    age_field="Q1",
    age_codes=yrbs_age_codes,
    leakage_exclusions=yrbs_leakage_exclusions,
    excluded_prefixes=yrbs_excluded_prefixes,
    height_field="Q6",
    weight_field="Q7",
    respondent_id_field="record",
    user_feature_fields=yrbs_user_feature_fields,
)
