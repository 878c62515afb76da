import os

from lib.codebook import codebook_from_dict
from lib.embedders.hashing import HashingEmbedder
from lib.graph_model import build_relation_registry
from lib.ingestion import build_respondent_graph
from lib.run_config import run_config_from_dict, with_overrides
from lib.synthetic import PlantedPair, SynthSpec, generate_synthetic_corpus

ACCEPTANCE = os.environ.get("SURVEYGRAPH_ACCEPTANCE") == "1"
FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

SMALL_CONFIG = {
    "hidden_dim": 16,
    "embed_dim": 32,
    "rgcn_layers": 2,
    "k_sim": 2,
    "k_att": 4,
    "lr": 0.01,
    "pretext": {"batch_size": 8, "epochs": 2},
    "bimodal": {"batch_size": 4, "epochs": 2},
    "lm": {
        "n_blocks": 1,
        "d_lm": 16,
        "n_heads": 2,
        "max_positions": 512,
        "warm_epochs": 1,
        "warm_samples": 8,
        "max_new_tokens": 8,
    },
}


def small_spec(n_graphs=40, seed=0) -> SynthSpec:
    """8 questions over 4 topics, two planted cross-topic pairs"""
    return SynthSpec(
        n_questions=8,
        n_topics=4,
        n_answer_categories=3,
        n_graphs=n_graphs,
        planted_pairs=[PlantedPair(0, 5, 0.9), PlantedPair(2, 7, 0.9)],
        label_weights={0: 2.0, 5: 2.0, 2: -1.5, 7: -1.5},
        base_rate=0.4,
        seed=seed,
    )


def small_corpus(n_graphs=40, dim=32, seed=0):
    return generate_synthetic_corpus(small_spec(n_graphs, seed), HashingEmbedder(dim))


def small_config(ablations=None, **values):
    return with_overrides(run_config_from_dict(SMALL_CONFIG), ablations=ablations, **values)


def prompt_codebook():
    return codebook_from_dict(
        {
            "dataset_kind": "SYNTH",
            "topics": [
                {"id": "T1", "text": "Tobacco use"},
                {"id": "T2", "text": "School"},
            ],
            "questions": [
                {
                    "id": "S01",
                    "text": "EVER SMOKED A CIGARETTE",
                    "topic": "T1",
                    "categories": ["1", "2"],
                    "labels": ["Yes", "No"],
                },
                {
                    "id": "S02",
                    "text": "HOW DO YOU FEEL ABOUT GOING TO SCHOOL",
                    "topic": "T2",
                    "categories": ["1", "2", "3", "4"],
                    "labels": [
                        "You loved going to school",
                        "You liked going to school",
                        "You kind of hated going to school",
                        "You hated going to school",
                    ],
                },
                {
                    "id": "AGE",
                    "text": "How old are you?",
                    "categories": [str(age) for age in range(15, 26)],
                    "flags": ["user_feature"],
                },
                {
                    "id": "LABEL",
                    "text": "Illicit drug use",
                    "categories": ["0", "1"],
                    "flags": ["label_source"],
                },
            ],
        }
    )


def prompt_graph(with_latent=True):
    """Respondent R1 of the prompt codebook, answers S01=1 and S02=4"""
    codebook = prompt_codebook()
    registry = build_relation_registry(codebook)
    record = {"respondent_id": "R1", "S01": "1", "S02": "4", "AGE": "17", "LABEL": "1"}
    g = build_respondent_graph(record, codebook, HashingEmbedder(16), registry, label=True)
    if with_latent:
        latent = registry.latent.id
        g = g.replace(edges=list(g.edges) + [(1, 2, latent), (2, 1, latent)])
    return g, codebook, registry
