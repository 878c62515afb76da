from lib.constants import DatasetInfo, DatasetKind

# National Survey on Drug Use and Health, edited variables only.

nsduh_label_fields = ["ILLYR"]

# Variables that restate drug use, e.g. "health professional discussed my drug use"
nsduh_leakage_exclusions = {"HPDRGTALK"}

# AGE2 codes mapped to the lowest age of each band
nsduh_age_codes = {
    "1": 12,
    "2": 13,
    "3": 14,
    "4": 15,
    "5": 16,
    "6": 17,
    "7": 18,
    "8": 19,
    "9": 20,
    "10": 21,
    "11": 22,  # 22-23
    "12": 24,  # 24-25
    "13": 26,  # 26-29
    "14": 30,  # 30-34
    "15": 35,  # 35-49
    "16": 50,  # 50-64
    "17": 65,  # 65+
}

nsduh_info = DatasetInfo(
    dataset_kind=DatasetKind.NSDUH,
    label_fields=nsduh_label_fields,
    age_field="AGE2",
    age_codes=nsduh_age_codes,
    leakage_exclusions=nsduh_leakage_exclusions,
    excluded_prefixes=(),
    height_field="HTINCHE2",
    weight_field="WTPOUND2",
    respondent_id_field="QUESTID2",
)
