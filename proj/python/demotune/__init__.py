"""Contrastive demonstration tuning for few-shot text classification.

Thin Python layer over the C++ core in ``demotune._demotune``.
"""

import json
import os

from ._demotune import (  # noqa: F401
    CONFIG_DIR,
    DEFAULT_SEEDS,
    BlockKind,
    Dataset,
    DemotuneError,
    FewShotSplit,
    LabeledText,
    TaskConfig,
    TemplateSpec,
    TokenPlan,
    Verbalizer,
    Vocab,
    accuracy,
    binary_f1,
    build_demo_augmented,
    build_positive,
    build_virtual,
    byol_style_loss,
    infonce_loss,
    load_dataset,
    load_task_config,
    make_synthetic_sentiment,
    parse_jsonl,
    parse_task_config,
    parse_template,
    render_anchor,
    render_text,
    sample_kshot,
    synthetic_sentiment_task,
)
from . import _demotune

# Wheels carry the task configs next to the module; source builds use the tree.
_PACKAGED_TASKS = os.path.join(os.path.dirname(__file__), "tasks")
TASK_DIR = _PACKAGED_TASKS if os.path.isdir(_PACKAGED_TASKS) else CONFIG_DIR


def load_task(name_or_path):
    """Load a task config by shipped name (e.g. "sst2") or by JSON path."""
    if os.path.exists(name_or_path) or name_or_path.endswith(".json"):
        return load_task_config(name_or_path)
    return load_task_config(os.path.join(TASK_DIR, name_or_path + ".json"))


def train_config(**overrides):
    """Full training config as a dict, defaults merged with overrides."""
    return json.loads(_demotune.train_config_json(json.dumps(overrides)))


def run_suite(dataset, task, config=None, seeds=None, test=None, parallel_seeds=1):
    """Train and evaluate over the seed suite; returns the metrics dict."""
    test = test if test is not None else Dataset(task.task_id, [])
    seeds = list(seeds) if seeds is not None else list(DEFAULT_SEEDS)
    out = _demotune.run_suite_json(dataset, test, task, json.dumps(config or {}), seeds, parallel_seeds)
    return json.loads(out)


def aggregate(metrics):
    """Mean and population std of per-seed metrics."""
    doc = json.loads(_demotune.aggregate_json(list(metrics)))
    return doc["mean"], doc["std"]
