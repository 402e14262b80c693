"""Multi-seed experiment drivers: lambda sweeps, held-out lambda selection, variant comparison."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import make_rng
from .data import LabeledDataset
from .diagnostics import two_sample_error
from .exceptions import NumericError
from .trainer import LAMBDA_GRID, AdaptationTask, Variant, evaluate, forward, run

logger = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.2


def _subset(dataset, idx):
    return LabeledDataset(dataset.features[idx], dataset.labels[idx], dataset.domain_tag,
                          dataset.seed, dataset.class_count)


def holdout_split(task, seed, fraction=VALIDATION_FRACTION):
    """Seeded train/validation split of both domains.

    Returns the training task plus validation source and target datasets.
    """
    def split(dataset, key):
        n = len(dataset)
        perm = make_rng(seed, 31, key).permutation(n)
        n_val = max(20, int(round(fraction * n)))
        return _subset(dataset, np.sort(perm[n_val:])), _subset(dataset, np.sort(perm[:n_val]))

    s_train, s_val = split(task.source, 0)
    t_train, t_val = split(task.target_unlabeled, 1)
    train_task = AdaptationTask(s_train, t_train, task.target_labeled, task.class_count)
    return train_task, s_val, t_val


def selection_score(network, source_val, target_val, seed=0, layer=-2):
    """Source validation accuracy minus the two-sample classifier's excess accuracy.

    Higher is better: an accurate source classifier whose ``layer``
    representation leaves source and target hard to tell apart.
    """
    src_acc = evaluate(network, source_val.features, source_val.labels)
    h_s = forward(network, source_val.features)[0][layer]
    h_t = forward(network, target_val.features)[0][layer]
    ts_acc = 1.0 - two_sample_error(h_s, h_t, seed)
    return src_acc - (ts_acc - 0.5), src_acc, ts_acc


@dataclass
class SweepRow:
    lam: float
    target_accs: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    failed: int = 0

    @property
    def mean_target_acc(self):
        return float(np.mean(self.target_accs)) if self.target_accs else float("nan")

    @property
    def std_target_acc(self):
        return float(np.std(self.target_accs)) if self.target_accs else float("nan")

    @property
    def mean_score(self):
        return float(np.mean(self.scores)) if self.scores else float("nan")

    def as_dict(self):
        return {"lambda": self.lam, "mean_target_acc": self.mean_target_acc,
                "std_target_acc": self.std_target_acc, "mean_selection_score": self.mean_score,
                "n_runs": len(self.target_accs), "n_failed": self.failed}


def sweep_lambda(task, config, seeds, lambdas=LAMBDA_GRID, hidden=(16, 16)):
    """Train on a held-out split for every ``(lambda, seed)``.

    Each run reports target accuracy on the full target set (labels used only
    for reporting) and the held-out selection score.
    """
    rows = []
    for lam in lambdas:
        row = SweepRow(float(lam))
        for seed in seeds:
            train_task, s_val, t_val = holdout_split(task, seed)
            cfg = replace(config, lam=float(lam), seed=int(seed))
            try:
                result = run(train_task, cfg, hidden)
            except NumericError as exc:
                logger.warning("lambda=%s seed=%s diverged: %s", lam, seed, exc)
                row.failed += 1
                continue
            if task.target_unlabeled.is_labeled:
                row.target_accs.append(evaluate(result.network, task.target_unlabeled.features,
                                                task.target_unlabeled.labels))
            row.scores.append(selection_score(result.network, s_val, t_val, seed)[0])
        rows.append(row)
    return rows


def best_lambda(rows, by="score"):
    """Lambda with the highest mean selection score (or mean target accuracy)."""
    key = (lambda r: r.mean_score) if by == "score" else (lambda r: r.mean_target_acc)
    valid = [r for r in rows if np.isfinite(key(r))]
    return max(valid, key=key).lam


def run_seeds(task, config, seeds, hidden=(16, 16)):
    """Final target accuracy (or NaN when target labels are absent) per seed."""
    accs = []
    for seed in seeds:
        result = run(task, replace(config, seed=int(seed)), hidden)
        accs.append(result.history.final()["target_acc"])
    return accs


def compare_variants(task, config, seeds, layers, hidden=(16, 16)):
    """Mean target accuracy of source-only, DAN, single-kernel DAN and each single-layer DAN."""
    out = {
        "source_only": run_seeds(task, replace(config, variant=Variant.SOURCE_ONLY), seeds, hidden),
        "dan": run_seeds(task, replace(config, variant=Variant.DAN), seeds, hidden),
        "dan_single_kernel": run_seeds(task, replace(config, variant=Variant.DAN_SINGLE_KERNEL),
                                       seeds, hidden),
    }
    for layer in layers:
        out[f"dan_layer{layer}"] = run_seeds(
            task, replace(config, variant=Variant.DAN_SINGLE_LAYER, single_layer=layer), seeds, hidden)
    return out
