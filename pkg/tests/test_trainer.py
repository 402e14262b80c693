import logging

import numpy as np
import pytest
from sklearn.base import clone

from danmmd.data import LabeledDataset, gen_gaussians, gen_moons
from danmmd.exceptions import InputError, ParameterError
from danmmd.kernels import KernelFamily, build_family, single_kernel
from danmmd.mmd import make_quads, per_kernel_stats
from danmmd.network import Activation, LayerSpec, Network, forward
from danmmd.trainer import (AdaptationConfig, AdaptationTask, Batch, DANClassifier, Variant,
                            beta_hash, build_network, dan_loss_and_grads, evaluate,
                            make_batches, run, train, update_beta)


def _task(n_s=10, n_t=6, d=2, seed=0):
    rng = np.random.default_rng(seed)
    src = LabeledDataset(rng.normal(size=(n_s, d)), rng.integers(0, 2, n_s), class_count=2)
    tgt = LabeledDataset(rng.normal(size=(n_t, d)), np.full(n_t, -1), class_count=2)
    return AdaptationTask(src, tgt, class_count=2)


def _identity_net(d):
    return Network([LayerSpec(d, d, Activation.IDENTITY)], [np.eye(d)], [np.zeros(d)])


def _ratio(beta, report, eps):
    num = float(beta @ report.per_kernel_d) ** 2
    return num / float(beta @ report.covariance_q @ beta + eps * beta @ beta)


# ---------------------------------------------------------------- batching

def test_batch_size_four_gives_one_quad():
    batches = make_batches(_task(), 4, seed=0, epoch_index=0)
    assert all(b.xs.shape == (2, 2) and b.xt.shape == (2, 2) for b in batches)
    assert all(b.quads.shape == (1, 4, 2) for b in batches)


def test_ten_six_split_gives_three_batches():
    # the smaller (6-point) domain supplies 3 pairs, one per batch
    assert len(make_batches(_task(10, 6), 4, 0, 0)) == 3


def test_batches_deterministic_and_epoch_dependent():
    task = _task(40, 40)
    a = make_batches(task, 8, 3, 1)
    b = make_batches(task, 8, 3, 1)
    c = make_batches(task, 8, 3, 2)
    assert all(np.array_equal(x.xs, y.xs) and np.array_equal(x.xt, y.xt) for x, y in zip(a, b))
    assert not all(np.array_equal(x.xs, y.xs) for x, y in zip(a, c))


def test_batches_cover_without_repeats():
    task = _task(20, 20)
    batches = make_batches(task, 4, 0, 0)
    rows = np.vstack([b.xs for b in batches])
    assert len(np.unique(rows, axis=0)) == len(rows) == 20


def test_batch_too_large():
    with pytest.raises(InputError):
        make_batches(_task(10, 6), 16, 0, 0)


def test_config_validation():
    with pytest.raises(ParameterError):
        AdaptationConfig(batch_size=5)
    with pytest.raises(ParameterError):
        AdaptationConfig(lam=-1)
    with pytest.raises(ParameterError):
        AdaptationConfig(variant="dan", adapted_layers=())
    with pytest.raises(ParameterError):
        AdaptationConfig(variant="dan_single_layer")
    assert AdaptationConfig(variant="source_only", adapted_layers=()).layers_for(3) == ()
    assert AdaptationConfig().layers_for(3) == (0, 1, 2)
    assert AdaptationConfig().layers_for(5) == (2, 3, 4)


def test_task_validation():
    src = LabeledDataset(np.zeros((4, 2)), [0, 1, 0, 1])
    with pytest.raises(InputError):
        AdaptationTask(src, LabeledDataset(np.zeros((4, 3)), [-1] * 4))
    with pytest.raises(InputError):
        AdaptationTask(LabeledDataset(np.zeros((4, 2)), [0, -1, 0, 1]), src)


# ---------------------------------------------------------------- loss

def _small_setup(seed=0):
    task = _task(16, 16, seed=seed)
    net = build_network(task, (6, 5), seed)
    batch = make_batches(task, 8, seed, 0)[0]
    fams = {l: build_family(1.0, 1, 1) for l in (0, 1, 2)}
    return net, batch, fams


def test_lambda_zero_is_plain_cross_entropy():
    net, batch, fams = _small_setup()
    with_mmd = dan_loss_and_grads(net, batch, 0.0, fams)
    plain = dan_loss_and_grads(net, batch, 0.0, {})
    for a, b in zip(with_mmd.grads[0] + with_mmd.grads[1], plain.grads[0] + plain.grads[1]):
        assert a.tobytes() == b.tobytes()
    assert with_mmd.total_loss == plain.classification_loss


def test_identical_batches_have_zero_mmd():
    net, batch, fams = _small_setup(1)
    same = Batch(batch.xs, batch.ys, batch.xs.copy())
    res = dan_loss_and_grads(net, same, 2.0, fams)
    base = dan_loss_and_grads(net, same, 0.0, fams)
    assert all(v == 0.0 for v in res.mmd2.values())
    for a, b in zip(res.grads[0] + res.grads[1], base.grads[0] + base.grads[1]):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_total_loss_decomposition():
    net, batch, fams = _small_setup(2)
    res = dan_loss_and_grads(net, batch, 0.7, fams)
    assert res.total_loss == res.classification_loss + 0.7 * sum(res.mmd2.values())


def test_objective_gradient_finite_differences():
    net, batch, _ = _small_setup(3)
    fams = {1: KernelFamily([0.5, 3.0], [0.3, 0.7])}  # m = 2 kernels, one layer
    lam = 1.3
    analytic = np.concatenate([np.concatenate([W.ravel(), b])
                               for W, b in zip(*dan_loss_and_grads(net, batch, lam, fams).grads)])
    p0 = net.flat_params()
    numeric = np.zeros_like(p0)
    for i in range(p0.size):
        vals = []
        for h in (1e-5, -1e-5):
            p = p0.copy()
            p[i] += h
            net.set_flat_params(p)
            vals.append(dan_loss_and_grads(net, batch, lam, fams).total_loss)
        numeric[i] = (vals[0] - vals[1]) / 2e-5
    net.set_flat_params(p0)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    assert err.max() <= 1e-4


# ---------------------------------------------------------------- beta update

def test_update_beta_single_kernel_unchanged():
    task = _task(40, 40)
    fams = {0: single_kernel(1.0)}
    out = update_beta(_identity_net(2), task, fams)
    assert out[0] is fams[0]


def test_update_beta_identical_domains_fallback(caplog):
    X = np.random.default_rng(0).normal(size=(40, 2))
    task = AdaptationTask(LabeledDataset(X, np.arange(40) % 2), LabeledDataset(X, [-1] * 40))
    fams = {0: build_family(1.0, 2, 1)}
    with caplog.at_level(logging.WARNING):
        out = update_beta(_identity_net(2), task, fams)
    assert out[0] == fams[0]
    assert "keeps previous kernel weights" in caplog.text


def test_update_beta_does_not_touch_network():
    task = _task(40, 40)
    net = build_network(task, (4, 4), 0)
    before = net.flat_params().copy()
    update_beta(net, task, {1: build_family(1.0, 2, 1)})
    assert np.array_equal(before, net.flat_params())


def test_update_beta_peaks_at_best_single_kernel():
    src, tgt = gen_gaussians(512, [[0, 0], [0, 0]], 1.0, [3.0, 0], seed=5)
    task = AdaptationTask(src, tgt.unlabeled(), class_count=2)
    family = build_family(4.0, 6, 0.5)
    out, reports = update_beta(_identity_net(2), task, {0: family}, return_reports=True)
    rep = reports[0]
    ratios = rep.per_kernel_d ** 2 / np.diag(rep.covariance_q)
    assert abs(int(np.argmax(out[0].weights)) - int(np.argmax(ratios))) <= 2


@pytest.mark.parametrize("seed", range(5))
def test_beta_step_never_lowers_power_ratio(seed):
    src, tgt = gen_gaussians(200, [[0, 0], [1, 1]], 1.0, [0.8, -0.3], seed=seed)
    task = AdaptationTask(src, tgt.unlabeled(), class_count=2)
    rng = np.random.default_rng(seed)
    old = build_family(2.0, 3, 1).with_weights(rng.uniform(0.1, 1, size=7))
    new, reports = update_beta(_identity_net(2), task, {0: old}, seed=seed, return_reports=True)
    rep = reports[0]
    assert _ratio(new[0].weights, rep, 1e-3) >= _ratio(old.weights, rep, 1e-3) - 1e-8


def test_update_beta_needs_two_quads():
    task = _task(3, 3)
    with pytest.raises(InputError):
        update_beta(_identity_net(2), task, {0: single_kernel(1.0)})


# ---------------------------------------------------------------- training

def _moons_task(n=100, seed=0):
    return AdaptationTask(gen_moons(n, 0.1, 0, seed=2 * seed), gen_moons(n, 0.1, 30, seed=2 * seed + 1))


def test_source_only_fits_separable_data():
    src, _ = gen_gaussians(200, [[-3, 0], [3, 0]], 0.5, seed=0)
    task = AdaptationTask(src, src.unlabeled())
    result = run(task, AdaptationConfig(variant="source_only", epochs=30, batch_size=16))
    assert result.history.final()["source_acc"] >= 0.99


def test_lambda_zero_matches_source_only_bitwise():
    task = _moons_task()
    a = run(task, AdaptationConfig(variant="dan", lam=0.0, epochs=3, batch_size=16, seed=4))
    b = run(task, AdaptationConfig(variant="source_only", epochs=3, batch_size=16, seed=4))
    assert a.network.flat_params().tobytes() == b.network.flat_params().tobytes()


def test_training_is_reproducible():
    task = _moons_task()
    cfg = AdaptationConfig(epochs=3, batch_size=16, beta_update_period=2, seed=1)
    a, b = run(task, cfg), run(task, cfg)
    assert a.history.records == b.history.records
    assert a.network.flat_params().tobytes() == b.network.flat_params().tobytes()


def test_history_columns_and_beta_hash():
    task = _moons_task()
    res = run(task, AdaptationConfig(epochs=4, batch_size=16, beta_update_period=3))
    h = res.history
    assert len(h) == 4
    assert h.columns() == ["epoch", "batch", "classification_loss", "mmd2_layer0", "mmd2_layer1",
                           "mmd2_layer2", "lambda", "beta_hash", "source_acc", "target_acc"]
    assert set(h.final()) == set(h.columns())
    assert h.final()["beta_hash"] == beta_hash(res.families)


def test_single_kernel_variant_keeps_beta():
    task = _moons_task()
    res = run(task, AdaptationConfig(variant="dan_single_kernel", epochs=4, batch_size=16,
                                     beta_update_period=2))
    assert len({r["beta_hash"] for r in res.history.records}) == 1
    assert all(f.size == 1 for f in res.families.values())


def test_single_layer_variant_adapts_one_layer():
    task = _moons_task()
    res = run(task, AdaptationConfig(variant="dan_single_layer", single_layer=1, epochs=2,
                                     batch_size=16))
    assert list(res.families) == [1]
    assert "mmd2_layer1" in res.history.final()


def test_explicit_families_are_used():
    task = _moons_task()
    fams = {2: single_kernel(0.5)}
    res = run(task, AdaptationConfig(adapted_layers=(2,), family_per_layer=fams, epochs=1,
                                     batch_size=16))
    assert res.families[2].bandwidths.tolist() == [0.5]
    with pytest.raises(ParameterError):
        run(task, AdaptationConfig(adapted_layers=(1, 2), family_per_layer=fams, epochs=1,
                                   batch_size=16))


# ---------------------------------------------------------------- evaluate

def _logit_net(W, b):
    W = np.asarray(W, dtype=float)
    return Network([LayerSpec(W.shape[1], W.shape[0], Activation.SOFTMAX)], [W], [np.asarray(b, float)])


def test_evaluate_all_correct():
    net = _logit_net([[1, 0], [0, 1]], [0, 0])
    assert evaluate(net, [[2, 0], [0, 2]], [0, 1]) == 1.0


def test_evaluate_ties_go_to_class_zero():
    net = _logit_net(np.zeros((2, 2)), [0, 0])
    y = np.array([0, 1] * 50 + [0] * 10)
    assert evaluate(net, np.ones((110, 2)), y) == 60 / 110


def test_evaluate_enumerated():
    # logits are the inputs: argmax = 0, 1, 0 (tie), 1
    net = _logit_net(np.eye(2), [0, 0])
    X = [[3, 1], [0, 2], [1, 1], [-1, 0]]
    assert evaluate(net, X, [0, 0, 0, 1]) == 0.75


def test_evaluate_empty():
    with pytest.raises(InputError):
        evaluate(_logit_net(np.eye(2), [0, 0]), np.zeros((0, 2)), [])


# ---------------------------------------------------------------- sklearn wrapper

def test_classifier_api():
    ds = gen_moons(80, seed=0)
    tgt = gen_moons(80, 0.1, 20, seed=1)
    y = np.where(ds.labels == 0, "a", "b")
    clf = DANClassifier(hidden=(8, 8), epochs=3, batch_size=16)
    assert clone(clf).get_params() == clf.get_params()
    clf.fit(ds.features, y, X_target=tgt.features)
    assert set(clf.predict(tgt.features)) <= {"a", "b"}
    np.testing.assert_allclose(clf.predict_proba(ds.features).sum(1), 1.0)
    assert clf.transform(ds.features).shape == (80, 8)
    assert clf.n_features_in_ == 2
    assert len(clf.history_) == 3


def test_classifier_semi_supervised():
    ds = gen_moons(80, seed=0)
    tgt = gen_moons(80, 0.1, 20, seed=1)
    clf = DANClassifier(hidden=(8, 8), epochs=2, batch_size=16)
    clf.fit(ds.features, ds.labels, X_target=tgt.features,
            X_target_labeled=tgt.features[:10], y_target_labeled=tgt.labels[:10])
    assert clf.predict(tgt.features).shape == (80,)
    with pytest.raises(InputError):
        clf.fit(ds.features, ds.labels, X_target=tgt.features,
                X_target_labeled=tgt.features[:2], y_target_labeled=[5, 5])


def test_variant_enum_values():
    assert {v.value for v in Variant} == {"source_only", "dan", "dan_single_kernel",
                                          "dan_single_layer"}
