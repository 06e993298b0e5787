'''Test suite for the supervised aggregation classifier.

Covers the single-node operations on scalar examples, the full-batch gradient
against central finite differences (steps 1 and 2), label validation, and
training on an SBM whose labels follow the blocks.

Usage:
    python test_sup_embed.py
'''
import math
import os
import sys
import tempfile
import time

import numpy as np
import pandas as pd

# --- Path Setup ---
_project_root_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if _project_root_dir not in sys.path:
    sys.path.insert(0, _project_root_dir)

try:
    from netdp.errors import ConfigError, LabelError
    from netdp.evaluation import ScoredSet, ks_statistic
    from netdp.graph_store import ingest_edges
    from netdp.param_store import ParamStore
    from netdp.python_backend.finite_difference import numeric_gradient, relative_error
    from netdp.sup_embed import (AggregationDiagnostics, LabeledSet, SupConfig, SupervisedParams,
                                 aggregate_step, build_neighborhood, mean_operator, predict_default,
                                 read_scores, score_all, sup_loss, sup_objective_and_grads,
                                 train_sup, write_scores)
    from graph_fixtures import sbm_edges
except ImportError as e:
    print(f"ERROR: Could not import netdp.sup_embed: {e}")
    print(f"Current sys.path: {sys.path}")
    sys.exit(1)


def expect(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type as e:
        return e
    raise AssertionError(f"expected {exc_type.__name__}")


def small_graph(num_nodes: int = 20, num_edges: int = 60, seed: int = 0):
    """Random directed graph over ids 0..num_nodes-1 where the last node is a sink."""
    rng = np.random.default_rng(seed)
    edges = [(str(i), str((i + 1) % (num_nodes - 1))) for i in range(num_nodes - 1)]
    for _ in range(num_edges):
        u, v = rng.integers(0, num_nodes - 1), rng.integers(0, num_nodes)
        edges.append((str(u), str(v)))
    edges.append(('0', str(num_nodes - 1)))
    return ingest_edges(edges)


def random_params(g, k: int, steps: int, lam: float, seed: int) -> SupervisedParams:
    rng = np.random.default_rng(seed)
    return SupervisedParams(rng.normal(scale=0.5, size=(g.num_nodes, k)),
                            rng.normal(scale=0.5, size=(k, k)),
                            rng.normal(scale=0.5, size=k), lam=lam, steps=steps)


def labeled_frame(raw_ids, labels, splits, periods=None) -> pd.DataFrame:
    data = {'raw_node_id': raw_ids, 'label': labels, 'split': splits}
    if periods is not None:
        data['period'] = periods
    return pd.DataFrame(data)


# --- single-node operations ---

def test_aggregate_step_examples():
    g = ingest_edges([('v', 'a'), ('v', 'b')])
    v, a, b = g.dense_id('v'), g.dense_id('a'), g.dense_id('b')
    prev = np.zeros((3, 2))
    assert np.allclose(aggregate_step(v, prev, np.eye(2), g), [0.5, 0.5])

    prev[a], prev[b] = [1.0, 0.0], [0.0, 1.0]
    assert np.allclose(aggregate_step(v, prev, np.zeros((2, 2)), g), [0.5, 0.5])
    got = aggregate_step(v, prev, np.eye(2), g)
    assert np.allclose(got, [0.62246, 0.62246], atol=1e-5)


def test_aggregate_step_isolated_fallback():
    g = ingest_edges([('v', 'a')])
    a = g.dense_id('a')
    prev = np.array([[3.0, 3.0], [1.0, -1.0]])
    W1 = np.array([[2.0, 0.0], [0.0, 1.0]])
    diag = AggregationDiagnostics()
    got = aggregate_step(a, prev, W1, g, diag)
    expected = 1.0 / (1.0 + np.exp(-(W1 @ prev[a])))
    assert np.allclose(got, expected)
    assert diag.isolated_fallbacks == 1


def test_aggregate_step_permutation_invariant():
    rng = np.random.default_rng(0)
    prev = rng.normal(size=(31, 4))
    W1 = rng.normal(size=(4, 4))
    leaves = [str(i) for i in range(1, 31)]
    forward_order = ingest_edges([('0', leaf) for leaf in leaves])
    shuffled = list(rng.permutation(leaves))
    # keep dense ids aligned: register every leaf first, then add the hub edges in another order
    reordered = ingest_edges([(leaf, '0') for leaf in leaves] + [('0', leaf) for leaf in shuffled])
    ids_a = forward_order.dense_ids([str(i) for i in range(31)])
    ids_b = reordered.dense_ids([str(i) for i in range(31)])
    prev_a, prev_b = np.empty_like(prev), np.empty_like(prev)
    prev_a[ids_a], prev_b[ids_b] = prev, prev
    out_a = aggregate_step(forward_order.dense_id('0'), prev_a, W1, forward_order)
    out_b = aggregate_step(reordered.dense_id('0'), prev_b, W1, reordered)
    assert np.max(np.abs(out_a - out_b)) <= 1e-6


def test_aggregate_step_neighbor_scale_invariant():
    u = np.array([0.3, -1.2, 0.7])
    W1 = np.random.default_rng(1).normal(size=(3, 3))
    expected = 1.0 / (1.0 + np.exp(-(W1 @ u)))
    for degree in (1, 5, 50):
        g = ingest_edges([('hub', f"n{i}") for i in range(degree)])
        prev = np.tile(u, (g.num_nodes, 1))
        prev[g.dense_id('hub')] = 99.0
        assert np.allclose(aggregate_step(g.dense_id("hub"), prev, W1, g), expected, rtol=0, atol=1e-12)


def test_predict_default():
    assert predict_default(np.zeros(3), [1.0, -2.0, 5.0]) == 0.5
    assert abs(predict_default([math.log(3)], [1.0]) - 0.75) < 1e-12
    rng = np.random.default_rng(2)
    for _ in range(20):
        u, w2 = rng.normal(size=5), rng.normal(size=5)
        assert abs(predict_default(u, w2) - 1.0 / (1.0 + math.exp(-u @ w2))) < 1e-12
    expect(ValueError, predict_default, [1.0, 2.0], [1.0])


def test_sup_loss_examples():
    k = 2
    zero = SupervisedParams(np.zeros((1, k)), np.zeros((k, k)), np.zeros(k), lam=0.0)
    assert abs(sup_loss([0.5] * 8, [0, 1] * 4, zero) - 8 * math.log(2)) < 1e-12

    diag = AggregationDiagnostics()
    loss = sup_loss([0.0, 1.0, 1.0], [0, 1, 1], zero, diag)
    assert abs(loss - 3 * -math.log1p(-1e-7)) < 1e-12
    assert diag.clamped == 3

    reg = SupervisedParams(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]),
                           np.array([0.5, 0.5]), lam=1.0)
    assert abs(reg.reg_norm() - 2.5) < 1e-12
    assert abs(sup_loss([0.0, 1.0], [0, 1], reg) - 2.5) < 1e-5
    expect(ValueError, sup_loss, [0.5, 0.5], [1], zero)


# --- gradients ---

def check_full_batch_gradient(steps: int):
    g = small_graph(seed=steps)
    params = random_params(g, k=4, steps=steps, lam=0.01, seed=10 + steps)
    nodes = np.arange(0, g.num_nodes, 2)
    y = (np.arange(len(nodes)) % 2).astype(np.float64)
    _, grads = sup_objective_and_grads(params, g, nodes, y)

    def f():
        return sup_objective_and_grads(params, g, nodes, y)[0]

    worst = 0.0
    for name in ('w2', 'W1', 'base_table'):
        err = relative_error(getattr(grads, name), numeric_gradient(f, getattr(params, name)))
        worst = max(worst, err)
        assert err <= 1e-4, (steps, name, err)
    print(f"    steps={steps} worst relative error: {worst:.2e}")


def test_gradient_matches_finite_differences_one_step():
    check_full_batch_gradient(1)


def test_gradient_matches_finite_differences_two_steps():
    check_full_batch_gradient(2)


def test_layered_forward_agrees_with_full_graph_scores():
    g = small_graph(seed=4)
    params = random_params(g, k=3, steps=2, lam=0.0, seed=4)
    nodes = np.array([0, 3, 7, g.num_nodes - 1])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    loss, _ = sup_objective_and_grads(params, g, nodes, y)
    preds = score_all(params, g)[nodes]
    assert abs(loss - sup_loss(preds, y, params)) < 1e-9


def test_neighborhood_layers():
    g = small_graph(seed=5)
    targets = np.array([0, 1, 2])
    nbhd = build_neighborhood(g, targets, steps=2, fanout=2, rng=np.random.default_rng(0))
    assert len(nbhd.layers) == 3 and len(nbhd.mats) == 2
    assert np.array_equal(nbhd.layers[2], targets)
    for mat, upper, lower in zip(nbhd.mats, nbhd.layers[1:], nbhd.layers[:-1]):
        assert mat.shape == (len(upper), len(lower))
        assert np.allclose(np.asarray(mat.sum(axis=1)).ravel(), 1.0)
        assert (np.diff(mat.indptr) <= 2).all()
    expect(ValueError, build_neighborhood, g, np.array([1, 1]), 1)


def test_neighborhood_rows_follow_unsorted_targets():
    g = small_graph(seed=7)
    targets = np.array([g.num_nodes - 1, 5, 0, 9, 2])
    X = np.random.default_rng(7).normal(size=(g.num_nodes, 3))
    nbhd = build_neighborhood(g, targets, steps=1)
    got = nbhd.mats[0] @ X[nbhd.layers[0]]
    assert np.allclose(got, (mean_operator(g) @ X)[targets])


def test_mean_operator_rows_sum_to_one():
    g = small_graph(seed=6)
    diag = AggregationDiagnostics()
    op = mean_operator(g, diag)
    assert np.allclose(np.asarray(op.sum(axis=1)).ravel(), 1.0)
    assert diag.isolated_fallbacks == int((g.degree_table == 0).sum())


# --- labels ---

def test_labeled_set_validation():
    g = ingest_edges([('a', 'b'), ('b', 'c'), ('c', 'a')])
    good = LabeledSet.from_frame(labeled_frame(['a', 'b', 'c'], [0, 1, 0], ['train', 'train', 'test'],
                                               ['2017-03', '2017-04', '2017-08']), g)
    assert len(good) == 3 and len(good.train()) == 2 and len(good.test()) == 1

    cases = [
        labeled_frame(['a', 'b'], [0, 2], ['train', 'train']),
        labeled_frame(['a', 'b'], [0, 1], ['train', 'valid']),
        labeled_frame(['a', 'a'], [0, 1], ['train', 'train']),
        labeled_frame(['a', 'zzz'], [0, 1], ['train', 'train']),
        labeled_frame(['a', 'b'], [0, 1], ['train', 'test'], ['2017-03', '2017-03']),
        pd.DataFrame({'raw_node_id': ['a'], 'label': [1]}),
    ]
    for frame in cases:
        expect(LabelError, LabeledSet.from_frame, frame, g)


def test_labeled_set_csv_round_trip():
    g = ingest_edges([('a', 'b'), ('b', 'c')])
    labels = LabeledSet.from_frame(labeled_frame(['c', 'a'], [1, 0], ['test', 'train'],
                                                 ['2017-08', '2017-03']), g)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'labels.csv')
        labels.to_frame(g.raw_ids).to_csv(path, index=False)
        again = LabeledSet.from_csv(path, g)
    assert again.nodes.tolist() == labels.nodes.tolist()
    assert again.y.tolist() == [1, 0]
    assert list(again.period) == ['2017-08', '2017-03']


# --- training ---

def block_labeled_sbm(seed: int = 3):
    edges, block = sbm_edges((500, 500), 0.03, 0.0015, seed=seed)
    g = ingest_edges(edges, symmetrize=True, num_shards=2)
    rng = np.random.default_rng(seed)
    present = set(g.raw_ids)
    raw = [str(i) for i in range(len(block)) if str(i) in present]
    truth = np.array([block[int(r)] for r in raw])
    flip = rng.random(len(raw)) < 0.1
    y = np.where(flip, 1 - truth, truth)
    split = np.where(rng.random(len(raw)) < 0.6, 'train', 'test')
    labels = LabeledSet.from_frame(labeled_frame(raw, y, split), g)
    return g, labels


def test_single_class_training_labels_rejected():
    g = ingest_edges([('a', 'b'), ('b', 'c'), ('c', 'a')])
    labels = LabeledSet.from_frame(labeled_frame(['a', 'b', 'c'], [1, 1, 0], ['train', 'train', 'test']), g)
    expect(LabelError, train_sup, g, labels, None, SupConfig(k=2, epochs=1))


def test_zero_epochs_with_zero_w2_scores_one_half():
    g, labels = block_labeled_sbm(seed=4)
    params, scores = train_sup(g, labels, ParamStore(), SupConfig(k=4, epochs=0, zero_init_w2=True))
    assert np.array_equal(scores.to_numpy(), np.full(len(labels), 0.5))
    assert sorted(scores.index.tolist()) == sorted(labels.nodes.tolist())
    assert not params.w2.any()


def test_sbm_block_labels_are_learned():
    g, labels = block_labeled_sbm(seed=3)
    cfg = SupConfig(k=8, steps=1, epochs=25, learning_rate=0.2, batch_size=32, seed=5)
    params, scores = train_sup(g, labels, None, cfg)
    assert params.is_finite()
    test = labels.test()
    y_hat = scores.loc[test.nodes].to_numpy()
    assert ((y_hat > 0) & (y_hat < 1)).all()
    ks = ks_statistic(ScoredSet(y_hat, test.y))
    ks_degree = ks_statistic(ScoredSet(g.degree_table[test.nodes], test.y))
    print(f"    test KS={ks:.3f} (degree baseline {ks_degree:.3f})")
    assert ks >= 0.5
    assert ks > ks_degree


def test_training_reduces_objective_with_workers():
    g, labels = block_labeled_sbm(seed=6)
    store = ParamStore(num_shards=2)
    cfg = SupConfig(k=4, steps=2, epochs=4, learning_rate=0.1, batch_size=32, workers=3, seed=2)
    params, _ = train_sup(g, labels, store, cfg)
    assert params.is_finite()
    assert store.version == 4
    train = labels.train()
    before = math.log(2) * len(train)
    after = sup_loss(score_all(params, g)[train.nodes], train.y, params)
    assert after < before * 1.5


def test_warm_start_copies_base_vectors():
    g, labels = block_labeled_sbm(seed=7)
    warm = np.random.default_rng(0).normal(size=(g.num_nodes, 4))
    params, _ = train_sup(g, labels, None, SupConfig(k=4, epochs=0, warm_start=True), warm_start=warm)
    assert np.array_equal(params.base_table, warm)
    expect(ConfigError, train_sup, g, labels, None, SupConfig(k=8, epochs=0, warm_start=True),
           warm_start=warm)


def test_params_and_scores_files():
    g = small_graph(seed=8)
    params = random_params(g, k=3, steps=2, lam=0.5, seed=8)
    scores = pd.Series([0.25, 0.75], index=pd.Index([2, 5], name='node'), name='y_hat')
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'sup.params')
        params.save(path)
        loaded = SupervisedParams.load(path)
        assert np.array_equal(loaded.base_table, params.base_table)
        assert np.array_equal(loaded.W1, params.W1)
        assert np.array_equal(loaded.w2, params.w2)
        assert loaded.lam == 0.5 and loaded.steps == 2

        score_path = os.path.join(tmp, 'scores.csv')
        write_scores(score_path, scores, g.raw_ids)
        again = read_scores(score_path, g)
        assert again.index.tolist() == [2, 5]
        assert np.allclose(again.to_numpy(), [0.25, 0.75])


def test_config_validation():
    for bad in (dict(k=0), dict(steps=0), dict(lam=-1.0), dict(learning_rate=0.0), dict(fanout=0)):
        expect(ConfigError, SupConfig(**bad).validate)


def run_all() -> int:
    tests = [(name, fn) for name, fn in globals().items() if name.startswith('test_') and callable(fn)]
    failures = 0
    for name, fn in tests:
        start = time.perf_counter()
        try:
            fn()
            print(f"  PASS {name} ({time.perf_counter() - start:.2f}s)")
        except AssertionError as e:
            failures += 1
            print(f"  FAIL {name}: {e}")
        except Exception as e:
            failures += 1
            print(f"  FAIL {name}: unexpected {type(e).__name__}: {e}")
    print(f"\n--- sup_embed: {len(tests) - failures}/{len(tests)} tests passed ---")
    return failures


if __name__ == "__main__":
    sys.exit(1 if run_all() else 0)
