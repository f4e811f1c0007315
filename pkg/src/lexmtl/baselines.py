"""Published comparison numbers shown beside local runs in ``lexmtl report``.

These are fixture constants for German-source tasks, never recomputed.
BLEU is on the 0-100 scale as published; ROUGE and P/R/F1 are fractions.
"""

# (task, dataset, metric, system, value)
PUBLISHED = (
    ("translate:de-en", "europarl", "bleu", "TF-B single", 37.34),
    ("translate:de-en", "europarl", "bleu", "MM-B single", 37.15),
    ("translate:de-en", "dcep", "bleu", "TF-B single", 53.3),
    ("translate:de-en", "dcep", "bleu", "MM-B single", 54.98),
    ("translate:de-en", "dcep", "bleu", "MM-B ja-3", 55.11),
    ("translate:de-en", "jrc-acquis", "bleu", "TF-B single", 64.22),
    ("translate:de-en", "jrc-acquis", "bleu", "MM-B single", 67.24),
    ("translate:de-en", "jrc-acquis", "bleu", "MM-B ja-3", 66.6),
    ("summarize:de", "jrc-acquis", "rouge_1", "MM-B ja-3", 0.82),
    ("summarize:de", "jrc-acquis", "rouge_2", "MM-B ja-3", 0.75),
    ("summarize:de", "jrc-acquis", "rouge_l", "MM-B ja-3", 0.82),
    ("classify:de", "jrc-acquis", "f1", "MM-B ja-3", 0.65),
    ("classify:de", "jrc-acquis", "recall", "MM-B ja-3", 0.63),
    ("classify:de", "jrc-acquis", "precision", "MM-B ja-3", 0.67),
    ("classify:de", "jrc-acquis", "f1", "JEX", 0.51),
    ("classify:de", "jrc-acquis", "recall", "JEX", 0.55),
    ("classify:de", "jrc-acquis", "precision", "JEX", 0.47),
)

SYSTEMS = tuple(dict.fromkeys(row[3] for row in PUBLISHED))


def published_lookup() -> dict:
    """(task, dataset, metric) -> {system: value}."""
    out: dict = {}
    for task, dataset, metric, system, value in PUBLISHED:
        out.setdefault((task, dataset, metric), {})[system] = value
    return out
