"""Bundled miniature corpus: five question groups with toy embedding
tables, small enough for smoke tests yet touching every feature slot
(URLs, emails, phone numbers, smileys, punctuation runs, thank
mentions, out-of-vocabulary words) and every topology preset."""

from importlib import resources


def corpus_path() -> str:
    return str(resources.files(__package__) / "mini_corpus.json")


def table_paths() -> dict[str, str]:
    root = resources.files(__package__)
    return {
        "general": str(root / "vectors_general.txt"),
        "domain": str(root / "vectors_domain.txt"),
    }


def pipeline_config_dict(out_dir: str, seed: int = 0, topology: str = "CRF_ACBC") -> dict:
    """A ready-to-run pipeline config document for the mini corpus."""
    return {
        "seed": seed,
        "out_dir": out_dir,
        "dataset": {"train": corpus_path(), "format": "json", "train_fraction": 0.6},
        "mode": "text",
        "embeddings": table_paths(),
        "oov_table": "general",
        "network": {
            "A": {"interaction": {"h1_a": 6}, "task_layer": 16},
            "B": {"interaction": {"h1_b": 4}, "task_layer": 12},
            "C": {"interaction": {"h1_a": 6, "h1_b": 4, "h1_c": 8}, "task_layer": 10},
        },
        "train": {
            "A": {"max_epochs": 15, "patience": 5},
            "B": {"max_epochs": 15, "patience": 5},
            "C": {"max_epochs": 15, "patience": 5},
        },
        "crf": {
            "topology": topology,
            "epochs": 5,
            "learning_rate": 0.01,
            "bp": {"damping": 0.2, "tolerance": 1e-6, "max_iters": 100},
        },
        "pipeline_baseline": {"target": "C", "upstream": ["A", "B"]},
    }
