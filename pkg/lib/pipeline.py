import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import yaml

from . import checkpoint
from .bimodal import (
    BimodalResult,
    ProjectionHead,
    decoding_generator,
    explain_graph,
    explanation_agreement,
    train_bimodal,
)
from .detector import DetectorModel, predict
from .exceptions import ConfigError, DataError, UnknownRespondentError
from .graph_model import Corpus, dumps_record, read_corpus, write_corpus
from .ingestion import normalize_user_features
from .metrics import EvalReport, aggregate_reports, compute_metrics, write_report, write_rows
from .pretext import (
    PretextModel,
    PretextResult,
    enrich_corpus,
    latent_pair_frequencies,
    pretrain,
)
from .run_config import (
    SWEEP_PARAMETERS,
    RunConfig,
    configure_threads,
    run_config_from_dict,
    with_overrides,
)
from .splits import stratified_split
from .tiny_lm import TinyDecoderLM, tokenizer_from_dict

logger = logging.getLogger("Pipeline")

PRETEXT_CHECKPOINT = "pretext.ckpt"
DETECTOR_CHECKPOINT = "detector.ckpt"
LM_CHECKPOINT = "lm.ckpt"
ENRICHED_CORPUS = "enriched_corpus.jsonl"
STRUCTURES = "structures.jsonl"
LATENT_PAIRS = "latent_pairs.csv"
PRETEXT_LOG = "pretext_log.jsonl"
TRAIN_LOG = "train_log.jsonl"
WARMUP_LOG = "lm_warmup_log.jsonl"
SPLIT_FILE = "split.yaml"
CONFIG_FILE = "run_config.yaml"
REPORT = "report.yaml"
REPORT_CSV = "report.csv"
PREDICTIONS = "predictions.jsonl"
EXPLANATIONS = "explanations.jsonl"
SEEDS_CSV = "seeds.csv"
AGGREGATE_CSV = "aggregate.csv"
SWEEP_CSV = "sweep.csv"


def write_jsonl(records: Sequence[dict], jsonl_path):
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as jsonl_file:
        for record in records:
            jsonl_file.write(dumps_record(record) + "\n")


def write_split(split: Dict[str, List[int]], split_path):
    with open(split_path, "w") as split_file:
        yaml.safe_dump(split, split_file, sort_keys=True)


def load_split(split_path) -> Dict[str, List[int]]:
    try:
        with open(split_path, "r") as split_file:
            split = yaml.safe_load(split_file)
    except (OSError, yaml.YAMLError) as e:
        raise DataError("Cannot read split " + str(split_path) + ": " + str(e))
    for part in ("train", "validation", "test"):
        if part not in split:
            raise DataError("Split file " + str(split_path) + " has no " + part + " part")
    return split


def write_config(config: RunConfig, config_path):
    with open(config_path, "w") as config_file:
        yaml.safe_dump(config.to_dict(), config_file, sort_keys=True)


def stage_pretrain(
    corpus: Corpus,
    config: RunConfig,
    out_dir,
    callback: Optional[Callable] = None,
):
    """Pretext training and enrichment; returns (enriched corpus, split, pretext result)"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = stratified_split(corpus.labels(), config.split, config.seed)
    write_split(split, out_dir / SPLIT_FILE)
    corpus = normalize_user_features(corpus, split["train"])

    if config.ablation.no_latent_learning:
        logger.info("Latent relation learning disabled, the corpus gets no latent edges")
        write_corpus(corpus, out_dir / ENRICHED_CORPUS)
        return corpus, split, None

    result: PretextResult = pretrain(corpus, config, callback, split)
    checkpoint.save_checkpoint(
        out_dir / PRETEXT_CHECKPOINT,
        "pretext",
        {"model": result.model},
        {
            "config": config.to_dict(),
            "d_in": corpus.d_in,
            "majority_baseline": result.majority_baseline,
        },
    )
    write_jsonl(result.log, out_dir / PRETEXT_LOG)

    enriched = corpus
    if result.structures:
        enriched = enrich_corpus(corpus, result.structures)
        write_jsonl([s.to_dict() for s in result.structures], out_dir / STRUCTURES)
        pairs = latent_pair_frequencies(result.structures)
        if pairs:
            write_rows(pairs, out_dir / LATENT_PAIRS)
    else:
        logger.info("No structure learning layer, the corpus gets no latent edges")
    write_corpus(enriched, out_dir / ENRICHED_CORPUS)
    return enriched, split, result


def stage_train(
    corpus: Corpus,
    config: RunConfig,
    out_dir,
    split,
    pretext_result: Optional[PretextResult] = None,
    callback: Optional[Callable] = None,
) -> BimodalResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = normalize_user_features(corpus, split["train"])
    pretext_encoder = pretext_result.model.encoder if pretext_result is not None else None
    result = train_bimodal(
        corpus, config, split, pretext_encoder=pretext_encoder, callback=callback
    )

    modules = {"detector": result.detector}
    if result.projection is not None:
        modules["projection"] = result.projection
    checkpoint.save_checkpoint(
        out_dir / DETECTOR_CHECKPOINT,
        "detector",
        modules,
        {"config": config.to_dict(), "d_in": corpus.d_in},
    )
    if result.lm is not None:
        checkpoint.save_checkpoint(
            out_dir / LM_CHECKPOINT,
            "lm",
            {"lm": result.lm},
            {
                "hyperparameters": result.lm.hyperparameters(),
                "tokenizer": result.tokenizer.to_dict(),
                "digest": result.lm.parameter_digest(),
            },
        )
        write_jsonl(result.warm_log, out_dir / WARMUP_LOG)
    write_jsonl(result.log, out_dir / TRAIN_LOG)
    return result


def stage_eval(
    corpus: Corpus,
    config: RunConfig,
    out_dir,
    split,
    detector: DetectorModel,
) -> EvalReport:
    """Metrics on the test split only"""
    out_dir = Path(out_dir)
    corpus = normalize_user_features(corpus, split["train"])
    test_graphs = [corpus.graphs[i] for i in split["test"]]
    if not test_graphs:
        raise DataError("The test split is empty")
    predictions = predict(detector, test_graphs, config.k_att)
    report = compute_metrics(
        [p.probability for p in predictions], [bool(g.label) for g in test_graphs]
    )
    write_report(
        report,
        out_dir / REPORT,
        {
            "seed": config.seed,
            "ablations": config.ablation.enabled(),
            "test_graphs": len(test_graphs),
        },
    )
    write_rows([report.to_row()], out_dir / REPORT_CSV)
    write_jsonl([p.to_dict() for p in predictions], out_dir / PREDICTIONS)
    logger.info(
        "Test accuracy "
        + str(round(report.accuracy, 4))
        + ", F1 "
        + str(round(report.f1_macro, 4))
        + ", AUC "
        + str(round(report.auc, 4))
    )
    return report


def load_detector(out_dir, corpus: Corpus):
    """Detector, projection head and its run config from a trained run directory"""
    saved = checkpoint.load_checkpoint(Path(out_dir) / DETECTOR_CHECKPOINT, "detector")
    config = run_config_from_dict(saved["meta"]["config"])
    if saved["meta"]["d_in"] != corpus.d_in:
        raise DataError("The detector was trained on another feature width")
    detector = checkpoint.restore(DetectorModel(corpus.d_in, corpus.registry, config), saved, "detector")
    projection = None
    if "projection" in saved["state"]:
        weight = saved["state"]["projection"]["linear.weight"]
        projection = checkpoint.restore(
            ProjectionHead(weight.shape[1], weight.shape[0]), saved, "projection"
        )
    return detector, projection, config


def load_language_model(out_dir):
    lm_path = Path(out_dir) / LM_CHECKPOINT
    if not lm_path.exists():
        raise ConfigError(
            "No language model checkpoint in " + str(out_dir) + "; was it trained with no_llm?"
        )
    saved = checkpoint.load_checkpoint(lm_path, "lm")
    lm = TinyDecoderLM(**saved["meta"]["hyperparameters"])
    checkpoint.restore(lm, saved, "lm").freeze()
    if lm.parameter_digest() != saved["meta"]["digest"]:
        raise DataError("Language model checkpoint digest does not match its weights")
    return lm, tokenizer_from_dict(saved["meta"]["tokenizer"])


def load_pretext(out_dir, corpus: Corpus) -> PretextModel:
    saved = checkpoint.load_checkpoint(Path(out_dir) / PRETEXT_CHECKPOINT, "pretext")
    config = run_config_from_dict(saved["meta"]["config"])
    return checkpoint.restore(PretextModel(corpus.d_in, corpus.registry, config), saved, "model")


def run_pipeline(
    corpus: Corpus,
    config: RunConfig,
    out_dir,
    callback: Optional[Callable] = None,
) -> EvalReport:
    """Pretext, enrichment, bimodal training and test evaluation in one directory"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / CONFIG_FILE)
    logger.info(
        "Pipeline seed "
        + str(config.seed)
        + (", ablations " + ", ".join(config.ablation.enabled()) if config.ablation.enabled() else "")
    )
    enriched, split, pretext_result = stage_pretrain(corpus, config, out_dir, callback)
    trained = stage_train(enriched, config, out_dir, split, pretext_result, callback)
    return stage_eval(enriched, config, out_dir, split, trained.detector)


def _run_in_worker(corpus_path: str, config_values: dict, out_dir: str) -> dict:
    configure_threads()
    config = run_config_from_dict(config_values)
    return run_pipeline(read_corpus(corpus_path), config, out_dir).to_dict()


def _run_all(jobs: List[tuple], workers: int, callback: Optional[Callable] = None) -> List[EvalReport]:
    """Runs (corpus_path, config, out_dir) jobs in order, in processes when workers > 1"""
    reports = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_run_in_worker, str(path), config.to_dict(), str(out))
                for path, config, out in jobs
            ]
            for n, future in enumerate(futures, start=1):
                reports.append(EvalReport(**future.result()))
                if callback:
                    callback(step="Runs", status=str(n) + "/" + str(len(jobs)), progress=100.0 * n / len(jobs))
    else:
        corpora = {}
        for n, (path, config, out) in enumerate(jobs, start=1):
            if path not in corpora:
                corpora[path] = read_corpus(path)
            reports.append(run_pipeline(corpora[path], config, out))
            if callback:
                callback(step="Runs", status=str(n) + "/" + str(len(jobs)), progress=100.0 * n / len(jobs))
    return reports


def run_seeds(
    corpus_path,
    config: RunConfig,
    seeds: Sequence[int],
    out_dir,
    workers: int = 1,
    callback: Optional[Callable] = None,
) -> dict:
    """One pipeline per seed in seed_<n>/, then mean and std over the reports"""
    if not seeds:
        raise ConfigError("No seeds given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (corpus_path, with_overrides(config, seed=seed), out_dir / ("seed_" + str(seed)))
        for seed in seeds
    ]
    reports = _run_all(jobs, workers, callback)
    write_rows(
        [dict({"seed": seed}, **report.to_row()) for seed, report in zip(seeds, reports)],
        out_dir / SEEDS_CSV,
    )
    aggregate = aggregate_reports(reports)
    write_rows([aggregate], out_dir / AGGREGATE_CSV)
    return aggregate


def parse_sweep_values(parameter: str, values: Sequence) -> List:
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            "Cannot sweep " + str(parameter) + ", expected one of " + ", ".join(SWEEP_PARAMETERS)
        )
    if not values:
        raise ConfigError("No sweep values given")
    cast = float if parameter == "lambda_deg" else int
    try:
        return [cast(value) for value in values]
    except ValueError as e:
        raise ConfigError("Bad sweep value: " + str(e))


def run_sweep(
    corpus_path,
    config: RunConfig,
    parameter: str,
    values: Sequence,
    out_dir,
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
    callback: Optional[Callable] = None,
) -> List[dict]:
    """One row per value: the metric means over seeds (the config seed when none given)"""
    values = parse_sweep_values(parameter, values)
    seeds = list(seeds) if seeds else [config.seed]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for value in values:
        for seed in seeds:
            run_dir = out_dir / (parameter + "_" + str(value)) / ("seed_" + str(seed))
            jobs.append((corpus_path, with_overrides(config, seed=seed, **{parameter: value}), run_dir))
    reports = _run_all(jobs, workers, callback)

    rows = []
    for n, value in enumerate(values):
        aggregate = aggregate_reports(reports[n * len(seeds) : (n + 1) * len(seeds)])
        row = {"parameter": parameter, "value": value}
        row.update(aggregate)
        rows.append(row)
    write_rows(rows, out_dir / SWEEP_CSV)
    return rows


def explain_respondents(
    corpus: Corpus,
    run_dir,
    respondent_ids: Sequence[str],
    out_path=None,
) -> List[dict]:
    """Explanation records for the given respondents of an enriched corpus"""
    by_respondent = corpus.by_respondent()
    unknown = [r for r in respondent_ids if r not in by_respondent]
    if unknown:
        raise UnknownRespondentError("Unknown respondent ids: " + ", ".join(unknown))
    split_path = Path(run_dir) / SPLIT_FILE
    if split_path.exists():
        corpus = normalize_user_features(corpus, load_split(split_path)["train"])
        by_respondent = corpus.by_respondent()
    detector, projection, config = load_detector(run_dir, corpus)
    if projection is None:
        raise ConfigError("The run in " + str(run_dir) + " has no projection head to condition the LM")
    lm, tokenizer = load_language_model(run_dir)
    generator = decoding_generator(config.seed)
    records = [
        explain_graph(
            by_respondent[r], detector, projection, lm, tokenizer, corpus.codebook, corpus.registry, config, generator
        )
        for r in respondent_ids
    ]
    logger.info(
        "Explanation first tokens agree with the classifier for "
        + str(round(100 * explanation_agreement(records), 1))
        + "% of respondents"
    )
    if out_path is not None:
        write_jsonl(records, out_path)
    return records

