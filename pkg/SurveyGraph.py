from pathlib import Path
import argparse
import logging
import logging.config
import shutil
import sys
from os import path

import tqdm
import yaml

from lib.codebook import load_codebook, save_codebook
from lib.constants import internal_path
from lib.embedders.embedder_setup import embedder_setup
from lib.exceptions import (
    ConfigError,
    DataError,
    MetricsError,
    SurveyGraphError,
    TrainingError,
)
from lib.graph_model import corpus_stats, read_corpus, validate_graph, write_corpus
from lib.ingestion import ingest_records, ingest_survey
from lib.run_config import (
    ABLATIONS,
    SWEEP_PARAMETERS,
    configure_threads,
    load_run_config,
    with_overrides,
)
from lib import pipeline
from lib.synthetic import (
    generate_synthetic_records,
    load_synth_spec,
    synthetic_codebook,
    SynthSpec,
    write_survey,
)

# Get an instance of logger, which we'll pull from the config file
logger = logging.getLogger("SurveyGraph")

try:
    currentPath = path.dirname(path.abspath(__file__))
except NameError:
    currentPath = path.dirname(path.abspath(sys.argv[0]))

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(self.prog + ": error: " + message + "\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        description="SurveyGraph CLI",
        epilog="Builds respondent graphs from survey microdata, learns latent question relations and trains the detector",
    )
    parser.add_argument(
        "--action",
        help="The action you want to take",
        choices=[
            "ingest",
            "synth",
            "stats",
            "validate",
            "pretrain",
            "train",
            "eval",
            "pipeline",
            "explain",
            "sweep",
        ],
        required=True,
    )
    parser.add_argument("--survey", help="Delimited survey file to ingest")
    parser.add_argument("--codebook", help="Codebook YAML describing the survey")
    parser.add_argument("--corpus", help="Corpus file (line-delimited JSON)")
    parser.add_argument("--config", help="Run config YAML, defaults to config/run_config.yaml")
    parser.add_argument("--synth-config", help="Synthetic corpus YAML, defaults to config/synth.yaml")
    parser.add_argument("--vectors", help="Precomputed text vectors, selects PRECOMPUTED embeddings")
    parser.add_argument("--out", help="Output file (ingest) or run directory")
    parser.add_argument("--seed", type=int, help="Run seed, overrides the config")
    parser.add_argument(
        "--seeds", type=int, help="Number of consecutive seeds to run, starting at the run seed"
    )
    parser.add_argument(
        "--ablation",
        help="Disable a component (repeatable)",
        choices=ABLATIONS,
        action="append",
    )
    parser.add_argument("--sweep", help="Hyperparameter to sweep", choices=SWEEP_PARAMETERS)
    parser.add_argument("--values", help="Sweep values", nargs="+")
    parser.add_argument("--ids", help="Respondent ids to explain", nargs="+")
    parser.add_argument("--workers", type=int, default=1, help="Parallel workers for ingest, seeds and sweeps")
    return parser


def callback_function(t, step, status, progress):
    t.update(round(progress - t.n))
    t.set_description(step + " " + status, refresh=True)


def progress_bar():
    t = tqdm.tqdm(
        total=100,
        colour="green",
        ncols=round(shutil.get_terminal_size().columns * 0.75),
    )

    def wrap_callback_function(step, status, progress):
        callback_function(t, step, status, float(progress))

    return t, wrap_callback_function


def require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ConfigError("--" + name.replace("_", "-") + " is required for " + args.action)


def run_action(args) -> int:
    config = load_run_config(args.config)
    config = with_overrides(config, seed=args.seed, ablations=args.ablation)
    configure_threads()

    if args.action == "ingest":
        require(args, "survey", "codebook", "out")
        codebook = load_codebook(args.codebook)
        vectors = args.vectors or config.embedder.vectors
        embedder = embedder_setup(
            "PRECOMPUTED" if args.vectors else config.embedder.mode,
            config.embed_dim,
            vectors,
        )
        t, callback = progress_bar()
        corpus = ingest_survey(args.survey, codebook, embedder, args.workers, callback)
        t.close()
        write_corpus(corpus, args.out)
        print(yaml.safe_dump(corpus_stats(corpus.graphs).to_dict(), sort_keys=False))

    elif args.action == "synth":
        require(args, "out")
        synth_path = args.synth_config or internal_path("config", "synth.yaml")
        if args.synth_config or path.exists(synth_path):
            spec = load_synth_spec(synth_path)
        else:
            spec = SynthSpec()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        records, ground_truth = generate_synthetic_records(spec)
        codebook = synthetic_codebook(spec)
        write_survey(records, out_dir / "survey.csv")
        save_codebook(codebook, out_dir / "codebook.yaml")
        ground_truth.save(out_dir / "ground_truth.yaml")
        embedder = embedder_setup(config.embedder.mode, config.embed_dim, config.embedder.vectors)
        rows = [(n + 2, record) for n, record in enumerate(records)]
        corpus = ingest_records(rows, codebook, embedder, args.workers)
        write_corpus(corpus, out_dir / "corpus.jsonl")
        logger.info("Synthetic corpus written to " + str(out_dir))

    elif args.action == "stats":
        require(args, "corpus")
        corpus = read_corpus(args.corpus)
        print(yaml.safe_dump(corpus_stats(corpus.graphs).to_dict(), sort_keys=False))

    elif args.action == "validate":
        require(args, "corpus")
        corpus = read_corpus(args.corpus)
        failed = 0
        for g in corpus.graphs:
            report = validate_graph(g, corpus.registry)
            if not report.ok:
                failed += 1
                for violation in report.violations:
                    logger.error(g.respondent_id + ": " + violation.code + " " + violation.detail)
        logger.info(str(len(corpus.graphs) - failed) + " of " + str(len(corpus.graphs)) + " graphs are valid")
        if failed:
            return EXIT_DATA

    elif args.action == "pretrain":
        require(args, "corpus", "out")
        t, callback = progress_bar()
        pipeline.stage_pretrain(read_corpus(args.corpus), config, args.out, callback)
        t.close()

    elif args.action == "train":
        require(args, "out")
        run_dir = Path(args.out)
        corpus = read_corpus(args.corpus or run_dir / pipeline.ENRICHED_CORPUS)
        split = pipeline.load_split(run_dir / pipeline.SPLIT_FILE)
        pretext_result = None
        if config.warm_start and (run_dir / pipeline.PRETEXT_CHECKPOINT).exists():
            pretext_result = pipeline.PretextResult(
                pipeline.load_pretext(run_dir, corpus), [], [], split, None
            )
        t, callback = progress_bar()
        pipeline.stage_train(corpus, config, run_dir, split, pretext_result, callback)
        t.close()

    elif args.action == "eval":
        require(args, "out")
        run_dir = Path(args.out)
        corpus = read_corpus(args.corpus or run_dir / pipeline.ENRICHED_CORPUS)
        split = pipeline.load_split(run_dir / pipeline.SPLIT_FILE)
        detector, _, trained_config = pipeline.load_detector(run_dir, corpus)
        report = pipeline.stage_eval(corpus, trained_config, run_dir, split, detector)
        print(yaml.safe_dump(report.to_dict(), sort_keys=True))

    elif args.action == "pipeline":
        require(args, "corpus", "out")
        if args.seeds:
            seeds = [config.seed + n for n in range(args.seeds)]
            aggregate = pipeline.run_seeds(args.corpus, config, seeds, args.out, args.workers)
            print(yaml.safe_dump(aggregate, sort_keys=False))
        else:
            t, callback = progress_bar()
            report = pipeline.run_pipeline(read_corpus(args.corpus), config, args.out, callback)
            t.close()
            print(yaml.safe_dump(report.to_dict(), sort_keys=True))

    elif args.action == "explain":
        require(args, "out", "ids")
        run_dir = Path(args.out)
        corpus = read_corpus(args.corpus or run_dir / pipeline.ENRICHED_CORPUS)
        records = pipeline.explain_respondents(
            corpus, run_dir, args.ids, run_dir / pipeline.EXPLANATIONS
        )
        for record in records:
            logger.info(record["respondent_id"] + ": " + record["explanation"])

    elif args.action == "sweep":
        require(args, "corpus", "sweep", "values", "out")
        seeds = [config.seed + n for n in range(args.seeds)] if args.seeds else None
        rows = pipeline.run_sweep(
            args.corpus, config, args.sweep, args.values, args.out, seeds, args.workers
        )
        print(yaml.safe_dump(rows, sort_keys=False))

    return EXIT_OK


def main(argv=None) -> int:
    logging.config.fileConfig(path.join(currentPath, "logging.conf"), disable_existing_loggers=False)
    args = build_parser().parse_args(argv)
    logger.info("Starting SurveyGraph.py, action " + args.action)
    try:
        return run_action(args)
    except ConfigError as e:
        logger.critical("Configuration error: " + str(e))
        return EXIT_USAGE
    except (DataError, MetricsError) as e:
        logger.critical("Data error: " + str(e))
        return EXIT_DATA
    except TrainingError as e:
        logger.critical("Training failed: " + str(e))
        return EXIT_TRAINING
    except SurveyGraphError as e:
        logger.critical(str(e))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
