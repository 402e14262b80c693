"""Domain-adaptation training: cross-entropy plus layerwise MK-MMD penalties.

The objective on a mini-batch is::

    mean_labelled CE  +  lam * sum_{l in adapted layers} mmd2_linear(h_s^l, h_t^l)

Network parameters are updated by momentum SGD on this objective; kernel
weights of each adapted layer are re-selected every ``beta_update_period``
batches by the test-power QP at fixed network parameters.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._rng import make_rng
from ._validation import as_samples, check_labels
from .data import UNLABELED, LabeledDataset
from .exceptions import (DegenerateInputError, InfeasibleDirectionError, InputError,
                         NumericError, ParameterError, SolverError)
from .kernels import KernelFamily, build_family, median_heuristic, single_kernel
from .mmd import make_quads, mmd2_linear_grad, per_kernel_stats
from .network import (Network, backward, forward, inv_schedule, mean_cross_entropy,
                      mlp_specs, sgd_step)
from .selection import DEFAULT_EPSILON, normalize_beta, solve_beta

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.1, 0.4, 0.7, 1.0, 1.4, 1.7, 2.0)

# stream keys for make_rng; fixed so histories stay reproducible
_STREAM_SOURCE, _STREAM_TARGET, _STREAM_LABELED, _STREAM_EVAL = 11, 12, 13, 14


class Variant(str, Enum):
    SOURCE_ONLY = "source_only"
    DAN = "dan"
    DAN_SINGLE_KERNEL = "dan_single_kernel"
    DAN_SINGLE_LAYER = "dan_single_layer"


@dataclass
class AdaptationConfig:
    """Hyper-parameters of one adaptation run.

    ``adapted_layers=None`` selects the last two hidden layers plus the
    classifier. ``family_per_layer=None`` builds each layer's kernel family
    from the median heuristic on the initial network's representations.
    """

    adapted_layers: tuple = None
    lam: float = 1.0
    family_per_layer: dict = None
    batch_size: int = 64
    beta_update_period: int = 50
    epochs: int = 50
    seed: int = 0
    variant: Variant = Variant.DAN
    single_layer: int = None
    base_lr: float = 0.01
    momentum: float = 0.9
    anneal_gamma: float = 0.001
    anneal_power: float = 0.75
    eval_size: int = 256
    epsilon: float = DEFAULT_EPSILON
    span_exponent: float = 8.0
    step_exponent: float = 0.5
    refresh_bandwidths: bool = True

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.batch_size < 4 or self.batch_size % 2:
            raise ParameterError("batch_size must be an even integer >= 4")
        if self.lam < 0:
            raise ParameterError("lambda must be >= 0")
        if self.beta_update_period < 1 or self.epochs < 1:
            raise ParameterError("beta_update_period and epochs must be positive")
        if self.variant is Variant.DAN_SINGLE_LAYER and self.single_layer is None:
            raise ParameterError("dan_single_layer needs single_layer")
        if self.adapted_layers is not None:
            self.adapted_layers = tuple(int(i) for i in self.adapted_layers)
            if not self.adapted_layers and self.variant is not Variant.SOURCE_ONLY:
                raise ParameterError("adapted_layers must be nonempty unless variant is source_only")

    def layers_for(self, n_layers):
        """Adapted layer indices for a network with ``n_layers`` layers."""
        if self.variant is Variant.SOURCE_ONLY:
            return ()
        if self.variant is Variant.DAN_SINGLE_LAYER:
            layers = (int(self.single_layer),)
        elif self.adapted_layers is not None:
            layers = self.adapted_layers
        else:
            layers = tuple(range(max(0, n_layers - 3), n_layers))
        for idx in layers:
            if not 0 <= idx < n_layers:
                raise ParameterError(f"adapted layer {idx} outside [0, {n_layers})")
        return tuple(sorted(set(layers)))

    def anneal(self, step):
        return inv_schedule(step, self.anneal_gamma, self.anneal_power)

    def as_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "family_per_layer"}
        out["variant"] = self.variant.value
        out["adapted_layers"] = None if self.adapted_layers is None else list(self.adapted_layers)
        return out


@dataclass
class AdaptationTask:
    """Labelled source, unlabelled target, optional labelled target examples.

    Labels stored on ``target_unlabeled`` are never used for training; they
    only feed the reported target accuracy.
    """

    source: LabeledDataset
    target_unlabeled: LabeledDataset
    target_labeled: LabeledDataset = None
    class_count: int = None

    def __post_init__(self):
        if self.class_count is None:
            labels = [self.source.labels]
            if self.target_labeled is not None:
                labels.append(self.target_labeled.labels)
            self.class_count = int(max(lab.max() for lab in labels)) + 1
        if not self.source.is_labeled:
            raise InputError("every source sample must be labelled")
        check_labels(self.source.labels, self.class_count, name="source labels")
        check_labels(self.target_unlabeled.labels, self.class_count, allow_unlabeled=True,
                     name="target labels")
        sets = [self.source, self.target_unlabeled]
        if self.target_labeled is not None:
            if not self.target_labeled.is_labeled:
                raise InputError("target_labeled must be fully labelled")
            check_labels(self.target_labeled.labels, self.class_count, name="target_labeled labels")
            sets.append(self.target_labeled)
        if len({s.n_features for s in sets}) != 1:
            raise InputError("feature dimensions disagree across source/target sets")

    @property
    def n_features(self):
        return self.source.n_features


@dataclass
class Batch:
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    xa: np.ndarray = None
    ya: np.ndarray = None

    @property
    def quads(self):
        return make_quads(self.xs, self.xt)

    def stacked(self):
        """All inputs ``[xs; xt; xa]`` with labels (-1 for the unlabelled target rows)."""
        parts = [self.xs, self.xt]
        labels = [self.ys, np.full(self.xt.shape[0], UNLABELED)]
        if self.xa is not None and len(self.xa):
            parts.append(self.xa)
            labels.append(self.ya)
        return np.vstack(parts), np.concatenate(labels)


def make_batches(task, batch_size, seed, epoch_index):
    """Shuffle both domains with seeded streams and cut equal-size mini-batches.

    Each batch holds ``batch_size // 2`` source and as many target points
    (truncated to an even count), so consecutive pairs form quad-tuples. The
    number of batches is limited by the smaller domain. Labelled target
    examples, when present, are spread over the batches.
    """
    half = batch_size // 2
    half -= half % 2
    n_s, n_t = len(task.source), len(task.target_unlabeled)
    if half < 2 or half > min(n_s, n_t):
        raise InputError(f"batch_size {batch_size} needs at least {max(half, 2)} samples per domain")
    perm_s = make_rng(seed, _STREAM_SOURCE, epoch_index).permutation(n_s)
    perm_t = make_rng(seed, _STREAM_TARGET, epoch_index).permutation(n_t)
    n_batches = min(n_s, n_t) // half
    labeled_chunks = [None] * n_batches
    if task.target_labeled is not None and len(task.target_labeled):
        perm_a = make_rng(seed, _STREAM_LABELED, epoch_index).permutation(len(task.target_labeled))
        labeled_chunks = np.array_split(perm_a, n_batches)
    batches = []
    for b in range(n_batches):
        s_idx = perm_s[b * half:(b + 1) * half]
        t_idx = perm_t[b * half:(b + 1) * half]
        batch = Batch(task.source.features[s_idx], task.source.labels[s_idx],
                      task.target_unlabeled.features[t_idx])
        chunk = labeled_chunks[b]
        if chunk is not None and len(chunk):
            batch.xa = task.target_labeled.features[chunk]
            batch.ya = task.target_labeled.labels[chunk]
        batches.append(batch)
    return batches


@dataclass
class LossResult:
    total_loss: float
    classification_loss: float
    mmd2: dict
    grads: tuple


def dan_loss_and_grads(network, batch, lam, families):
    """Batch objective and its gradient w.r.t. every network parameter.

    Parameters
    ----------
    families : dict {layer index: KernelFamily}
        Adapted layers and their kernels; empty for source-only training.
    """
    X, labels = batch.stacked()
    hidden, probs, pre = forward(network, X, return_pre=True)
    n_s = batch.xs.shape[0]
    n_t = batch.xt.shape[0]
    mmd_values = {}
    injected = {}
    for layer, family in families.items():
        h = hidden[layer]
        value, g_s, g_t = mmd2_linear_grad(h[:n_s], h[n_s:n_s + n_t], family)
        mmd_values[layer] = value
        if lam != 0:
            g = np.zeros_like(h)
            g[:n_s] = lam * g_s
            g[n_s:n_s + n_t] = lam * g_t
            injected[layer] = g
    ce = mean_cross_entropy(probs, labels)
    grads = backward(network, X, labels, injected, cache=(hidden, probs, pre))
    total = ce + lam * sum(mmd_values.values())
    return LossResult(total, ce, mmd_values, grads)


def _eval_indices(n_s, n_t, size, seed, update_index):
    k = min(size, n_s, n_t)
    k -= k % 2
    # identical streams: equal-size domains get identical index sets
    idx_s = make_rng(seed, _STREAM_EVAL, update_index).permutation(n_s)[:k]
    idx_t = make_rng(seed, _STREAM_EVAL, update_index).permutation(n_t)[:k]
    return idx_s, idx_t


def layer_representations(network, X, layers):
    hidden, _ = forward(network, X)
    return {layer: hidden[layer] for layer in layers}


def update_beta(network, task, families, seed=0, update_index=0, eval_size=256,
                epsilon=DEFAULT_EPSILON, return_reports=False, grid=None):
    """Re-select each adapted layer's kernel weights at fixed network parameters.

    Per layer: per-kernel statistics on a seeded evaluation subsample, the
    test-power QP, then rescaling to the simplex. When the QP is infeasible
    (no positive per-kernel MMD) or fails, that layer keeps its weights.

    Parameters
    ----------
    grid : tuple of (span_exponent, step_exponent), optional
        When given, each multi-kernel family is first rebuilt around the
        median heuristic of the layer's current (pooled) representation, so
        the bandwidths follow the features as they change during training.
    """
    idx_s, idx_t = _eval_indices(len(task.source), len(task.target_unlabeled),
                                 eval_size, seed, update_index)
    if len(idx_s) < 4:
        raise InputError("update_beta needs at least 2 quad-tuples")
    reps_s = layer_representations(network, task.source.features[idx_s], families)
    reps_t = layer_representations(network, task.target_unlabeled.features[idx_t], families)
    updated, reports = {}, {}
    for layer, family in families.items():
        if grid is not None and family.size > 1:
            try:
                gamma = median_heuristic(np.vstack([reps_s[layer], reps_t[layer]]))
                family = build_family(gamma, *grid)
            except DegenerateInputError:
                logger.warning("layer %d keeps its bandwidths: representation collapsed", layer)
        report = per_kernel_stats(make_quads(reps_s[layer], reps_t[layer]), family)
        reports[layer] = report
        if family.size == 1:
            updated[layer] = family
            continue
        try:
            beta = solve_beta(report.per_kernel_d, report.covariance_q, epsilon)
            updated[layer] = family.with_weights(normalize_beta(beta))
        except (InfeasibleDirectionError, SolverError) as exc:
            logger.warning("layer %d keeps previous kernel weights: %s", layer, exc)
            updated[layer] = families[layer]
    if return_reports:
        return updated, reports
    return updated


def initial_families(network, task, config, layers):
    """Median-heuristic kernel per adapted layer, widened to a grid for multi-kernel variants."""
    if config.family_per_layer is not None:
        missing = set(layers) - set(config.family_per_layer)
        if missing:
            raise ParameterError(f"no kernel family given for layers {sorted(missing)}")
        return {layer: config.family_per_layer[layer] for layer in layers}
    idx_s, idx_t = _eval_indices(len(task.source), len(task.target_unlabeled),
                                 config.eval_size, config.seed, 0)
    X = np.vstack([task.source.features[idx_s], task.target_unlabeled.features[idx_t]])
    reps = layer_representations(network, X, layers)
    families = {}
    for layer in layers:
        try:
            gamma = median_heuristic(reps[layer])
        except DegenerateInputError:
            gamma = 1.0
        if config.variant is Variant.DAN_SINGLE_KERNEL:
            families[layer] = single_kernel(gamma)
        else:
            families[layer] = build_family(gamma, config.span_exponent, config.step_exponent)
    return families


def beta_hash(families):
    h = hashlib.sha256()
    for layer in sorted(families):
        h.update(np.int64(layer).tobytes())
        h.update(families[layer].bandwidths.tobytes())
        h.update(families[layer].weights.tobytes())
    return h.hexdigest()[:16]


def evaluate(network, features, labels):
    """Fraction of argmax-correct predictions (ties go to the lowest class index)."""
    X = as_samples(features, "features")
    y = check_labels(labels, network.specs[-1].output_width)
    if X.shape[0] == 0:
        raise InputError("cannot evaluate on an empty set")
    _, probs = forward(network, X)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def _maybe_accuracy(network, dataset):
    if dataset is None or not dataset.is_labeled:
        return float("nan")
    return evaluate(network, dataset.features, dataset.labels)


@dataclass
class History:
    layers: tuple
    records: list = field(default_factory=list)

    def columns(self):
        return ["epoch", "batch", "classification_loss",
                *(f"mmd2_layer{layer}" for layer in self.layers),
                "lambda", "beta_hash", "source_acc", "target_acc"]

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def final(self):
        return self.records[-1] if self.records else None


class TrainingDiverged(NumericError):
    """Raised when the loss becomes non-finite; carries the partial history."""

    def __init__(self, message, history, network):
        super().__init__(message)
        self.history = history
        self.network = network


@dataclass
class TrainResult:
    network: Network
    history: History
    families: dict


def train(network, task, config):
    """Alternate momentum-SGD steps on the network with periodic kernel-weight QPs.

    Returns
    -------
    TrainResult
        Trained network, per-epoch history, and the final kernel families.

    Raises
    ------
    TrainingDiverged
        On a non-finite loss or gradient; the partial history is attached.
    """
    layers = config.layers_for(network.n_layers)
    families = initial_families(network, task, config, layers) if layers else {}
    learn_beta = config.variant in (Variant.DAN, Variant.DAN_SINGLE_LAYER)
    grid = None
    if config.refresh_bandwidths and config.family_per_layer is None:
        grid = (config.span_exponent, config.step_exponent)
    history = History(layers)
    velocity = None
    step = 0
    n_updates = 0
    for epoch in range(config.epochs):
        sums = {"ce": 0.0, **{layer: 0.0 for layer in layers}}
        batches = make_batches(task, config.batch_size, config.seed, epoch)
        for batch in batches:
            if learn_beta and step % config.beta_update_period == 0:
                families = update_beta(network, task, families, config.seed, n_updates,
                                       config.eval_size, config.epsilon, grid=grid)
                n_updates += 1
            try:
                result = dan_loss_and_grads(network, batch, config.lam, families)
                if not np.isfinite(result.total_loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")
                network, velocity = sgd_step(network, result.grads, velocity, step, config.base_lr,
                                             config.momentum, config.anneal)
            except NumericError as exc:
                raise TrainingDiverged(str(exc), history, network) from exc
            step += 1
            sums["ce"] += result.classification_loss
            for layer in layers:
                sums[layer] += result.mmd2[layer]
        n_b = len(batches)
        record = {
            "epoch": epoch,
            "batch": step,
            "classification_loss": sums["ce"] / n_b,
            **{f"mmd2_layer{layer}": sums[layer] / n_b for layer in layers},
            "lambda": config.lam,
            "beta_hash": beta_hash(families),
            "source_acc": _maybe_accuracy(network, task.source),
            "target_acc": _maybe_accuracy(network, task.target_unlabeled),
        }
        history.append(record)
    return TrainResult(network, history, families)


def build_network(task, hidden=(16, 16), seed=0):
    specs = mlp_specs(task.n_features, list(hidden), task.class_count)
    return Network.initialize(specs, seed)


def run(task, config, hidden=(16, 16)):
    """Initialize a network from ``config.seed`` and train it."""
    return train(build_network(task, hidden, config.seed), task, config)


class DANClassifier(ClassifierMixin, BaseEstimator):
    """Feedforward classifier trained with layerwise MK-MMD domain adaptation.

    Parameters
    ----------
    hidden : tuple of int
        Widths of the rectifier hidden layers.
    variant : {"dan", "source_only", "dan_single_kernel", "dan_single_layer"}
    lam : float
        Weight of the MK-MMD penalty.
    adapted_layers : tuple of int or None
        Layers whose representations are matched; None means the last two
        hidden layers and the classifier.
    single_layer : int or None
        Layer adapted by the ``dan_single_layer`` variant.

    The remaining parameters map one-to-one onto :class:`AdaptationConfig`.

    Examples
    --------
    >>> clf = DANClassifier(epochs=5).fit(Xs, ys, X_target=Xt)  # doctest: +SKIP
    >>> clf.predict(Xt)  # doctest: +SKIP
    """

    def __init__(self, hidden=(16, 16), variant="dan", lam=1.0, adapted_layers=None,
                 single_layer=None, epochs=50, batch_size=64, base_lr=0.01, momentum=0.9,
                 beta_update_period=50, eval_size=256, epsilon=DEFAULT_EPSILON, seed=0):
        self.hidden = hidden
        self.variant = variant
        self.lam = lam
        self.adapted_layers = adapted_layers
        self.single_layer = single_layer
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.beta_update_period = beta_update_period
        self.eval_size = eval_size
        self.epsilon = epsilon
        self.seed = seed

    def _config(self):
        return AdaptationConfig(
            adapted_layers=self.adapted_layers, lam=self.lam, batch_size=self.batch_size,
            beta_update_period=self.beta_update_period, epochs=self.epochs, seed=self.seed,
            variant=self.variant, single_layer=self.single_layer, base_lr=self.base_lr,
            momentum=self.momentum, eval_size=self.eval_size, epsilon=self.epsilon,
        )

    def fit(self, X, y, X_target=None, X_target_labeled=None, y_target_labeled=None):
        """Train on labelled source ``(X, y)`` and unlabelled ``X_target``.

        Without ``X_target`` the source itself stands in for the target, which
        makes every MMD term vanish (plain supervised training).
        """
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        Xt = X if X_target is None else check_array(X_target)
        target_labeled = None
        if X_target_labeled is not None:
            Xa, ya = check_X_y(X_target_labeled, y_target_labeled)
            ya_enc = np.searchsorted(self.classes_, ya)
            if np.any(self.classes_[np.clip(ya_enc, 0, n_classes - 1)] != ya):
                raise InputError("labelled target contains classes unseen in the source")
            target_labeled = LabeledDataset(Xa, ya_enc, "target_labeled", class_count=n_classes)
        task = AdaptationTask(
            LabeledDataset(X, y_enc, "source", class_count=n_classes),
            LabeledDataset(Xt, np.full(Xt.shape[0], UNLABELED), "target", class_count=n_classes),
            target_labeled, n_classes,
        )
        result = run(task, self._config(), self.hidden)
        self.network_ = result.network
        self.history_ = result.history
        self.families_ = result.families
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        _, probs = forward(self.network_, check_array(X))
        return probs

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X, layer=-2):
        """Representation of ``X`` at ``layer`` (default: last hidden layer)."""
        check_is_fitted(self, "network_")
        hidden, _ = forward(self.network_, check_array(X))
        return hidden[layer]


def with_variant(config, variant, **changes):
    """Copy of ``config`` with another variant (and optional field overrides)."""
    return replace(config, variant=Variant(variant), **changes)
