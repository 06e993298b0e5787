'''Test suite for the sharded graph store.

Checks ingestion cleanup (remapping, self-loops, duplicates, degree cap),
partition totality across shards, neighbor lookups against a linear scan of
the raw edge list, neighbor sampling and the unigram^alpha negative sampler,
and byte-identical serialization.

Usage:
    python test_graph_store.py
'''
import os
import sys
import tempfile
import time

import numpy as np

# --- Path Setup ---
_project_root_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if _project_root_dir not in sys.path:
    sys.path.insert(0, _project_root_dir)

try:
    from netdp.errors import IngestError, NoNeighborsError, NotBuiltError
    from netdp.graph_store import (GraphShard, PartitionedGraph, ingest_edges, neighbors,
                                   sample_negative, sample_neighbors, shard_of)
except ImportError as e:
    print(f"ERROR: Could not import netdp.graph_store: {e}")
    print(f"Current sys.path: {sys.path}")
    sys.exit(1)


def random_edges(num_nodes: int, num_edges: int, seed: int = 0):
    """Erdos-Renyi style edge list of string ids (may contain loops and duplicates)."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, num_nodes, size=num_edges)
    dst = rng.integers(0, num_nodes, size=num_edges)
    return [(f"n{s}", f"n{d}") for s, d in zip(src, dst)]


def star_graph(leaves: int = 100):
    return ingest_edges([('hub', f"leaf{i}") for i in range(leaves)])


def test_ingest_small_example():
    g = ingest_edges([('A', 'B'), ('A', 'C'), ('B', 'C')], num_shards=1)
    assert g.num_nodes == 3
    assert g.raw_ids == ['A', 'B', 'C']
    assert neighbors(g, g.dense_id('A')).tolist() == [1, 2]
    assert neighbors(g, g.dense_id('B')).tolist() == [2]


def test_self_loop_and_duplicate_dropped():
    g = ingest_edges([('A', 'A'), ('A', 'B'), ('A', 'B')])
    assert g.neighbors(g.dense_id('A')).tolist() == [g.dense_id('B')]
    assert g.stats.self_loops == 1
    assert g.stats.duplicates == 1


def test_sink_has_no_neighbors():
    g = ingest_edges([('A', 'B'), ('A', 'C')])
    assert g.neighbors(g.dense_id('C')).tolist() == []
    try:
        g.sample_neighbors(g.dense_id('C'), 3, np.random.default_rng(0))
    except NoNeighborsError as e:
        assert e.node == g.dense_id('C')
    else:
        raise AssertionError("sampling a sink must raise NoNeighborsError")


def test_text_lines_comments_and_weights():
    lines = ['# header', '', 'A\tB\t0.5', 'A\tC', 'B\tC\t1']
    g = ingest_edges(lines)
    assert g.num_nodes == 3
    assert g.num_edges() == 3


def test_malformed_lines_skip_rate():
    good = [f"a{i}\tb{i}" for i in range(199)]
    g = ingest_edges(good + ['only-one-field'], max_skip_rate=0.01)
    assert g.stats.skipped == 1
    try:
        ingest_edges(good[:95] + ['x'] * 5, max_skip_rate=0.01)
    except IngestError:
        pass
    else:
        raise AssertionError("a 5% skip rate must fail at a 1% threshold")


def test_empty_input_raises():
    for stream in ([], ['# only a comment']):
        try:
            ingest_edges(stream)
        except IngestError:
            continue
        raise AssertionError("empty input must raise IngestError")


def test_shards_union_matches_single_shard():
    edges = random_edges(2000, 10_000, seed=1)
    single = ingest_edges(edges, num_shards=1)
    sharded = ingest_edges(edges, num_shards=4)
    assert single.raw_ids == sharded.raw_ids

    with_edges = int((single.degree_table > 0).sum())
    sizes = sharded.shard_sizes()
    assert sum(sizes) == with_edges
    sigma = np.sqrt(with_edges * 0.25 * 0.75)
    for size in sizes:
        assert abs(size - with_edges / 4) < 5 * sigma, sizes

    seen = np.zeros(single.num_nodes, dtype=np.int64)
    for shard in sharded.shards:
        seen[shard.nodes] += 1
        assert (shard_of(shard.nodes, 4) == shard.shard_id).all()
    assert (seen[single.degree_table > 0] == 1).all()
    assert (seen[single.degree_table == 0] == 0).all()

    for v in range(single.num_nodes):
        assert single.neighbors(v).tolist() == sharded.neighbors(v).tolist()


def test_neighbors_match_linear_scan():
    edges = random_edges(300, 3000, seed=2)
    g = ingest_edges(edges, num_shards=3)
    expected = {}
    for s, d in edges:
        if s != d and d not in expected.setdefault(s, []):
            expected[s].append(d)
    for raw in g.raw_ids:
        got = [g.raw_ids[v] for v in g.neighbors(g.dense_id(raw))]
        assert got == expected.get(raw, []), raw


def test_lookup_touches_one_shard():
    g = ingest_edges(random_edges(500, 4000, seed=3), num_shards=4)
    for v in range(0, g.num_nodes, 7):
        before = [s.reads for s in g.shards]
        g.neighbors(v)
        after = [s.reads for s in g.shards]
        changed = [i for i in range(4) if after[i] != before[i]]
        assert changed == [shard_of(v, 4)]


def test_degree_cap():
    g = ingest_edges([('hub', f"leaf{i}") for i in range(50)], max_degree=10, seed=3)
    hub = g.dense_id('hub')
    nbrs = g.neighbors(hub)
    assert len(nbrs) == 10
    assert len(set(nbrs.tolist())) == 10
    assert g.stats.capped_nodes == 1


def test_reverse_and_symmetrize():
    g = ingest_edges([('A', 'B')], reverse=True)
    assert g.neighbors(g.dense_id('B')).tolist() == [g.dense_id('A')]
    assert g.neighbors(g.dense_id('A')).tolist() == []
    g = ingest_edges([('A', 'B'), ('B', 'A')], symmetrize=True)
    assert g.num_edges() == 2


def test_sample_neighbors_clamp_and_determinism():
    g = ingest_edges([('v', 'a'), ('v', 'b'), ('v', 'c')])
    v = g.dense_id('v')
    got = sample_neighbors(g, v, 5, np.random.default_rng(0))
    assert sorted(got.tolist()) == sorted(g.neighbors(v).tolist())

    star = star_graph(100)
    hub = star.dense_id('hub')
    first = star.sample_neighbors(hub, 10, np.random.default_rng(42))
    second = star.sample_neighbors(hub, 10, np.random.default_rng(42))
    assert first.tolist() == second.tolist()
    assert len(set(first.tolist())) == 10


def test_sample_neighbors_uniform():
    star = star_graph(100)
    hub = star.dense_id('hub')
    rng = np.random.default_rng(5)
    trials = 20_000
    counts = np.zeros(star.num_nodes)
    for _ in range(trials):
        np.add.at(counts, star.sample_neighbors(hub, 10, rng), 1)
    freq = counts[star.neighbors(hub)] / trials
    sigma = np.sqrt(0.1 * 0.9 / trials)
    assert np.all(np.abs(freq - 0.1) < 4.5 * sigma), (freq.min(), freq.max())


def test_sample_neighbors_batch_respects_fanout():
    g = ingest_edges(random_edges(200, 3000, seed=4), num_shards=2)
    targets = np.arange(g.num_nodes)
    owners, nbrs = g.sample_neighbors_batch(targets, 3, np.random.default_rng(0))
    counts = np.bincount(owners, minlength=g.num_nodes)
    assert np.array_equal(counts, np.minimum(g.degree_table, 3))
    for o, n in zip(owners[:200], nbrs[:200]):
        assert n in g.neighbors(o)


def test_negative_alpha_zero_is_uniform():
    g = ingest_edges(random_edges(50, 200, seed=6))
    g.build_neg_table(alpha=0.0)
    draws = sample_negative(g, 100_000, np.random.default_rng(7))
    counts = np.bincount(draws, minlength=g.num_nodes)
    p = 1.0 / g.num_nodes
    sigma = np.sqrt(100_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100_000 * p) < 4.5 * sigma)


def test_negative_unigram_ratio():
    edges = [('a', 'x0')] + [('b', f"x{i}") for i in range(16)]
    g = ingest_edges(edges, alpha=0.75)
    draws = g.sample_negative(100_000, np.random.default_rng(8))
    count_a = int((draws == g.dense_id('a')).sum())
    count_b = int((draws == g.dense_id('b')).sum())
    assert count_a + count_b == 100_000  # sinks have zero weight
    p_a = 1.0 / 9.0
    sigma = np.sqrt(100_000 * p_a * (1 - p_a))
    assert abs(count_a - 100_000 * p_a) < 4.5 * sigma


def test_neg_table_is_distribution_and_deterministic():
    g = ingest_edges(random_edges(400, 3000, seed=9), num_shards=2)
    probs = g.neg_probabilities()
    assert (probs >= 0).all()
    assert abs(probs.sum() - 1.0) < 1e-9
    a = g.sample_negative(1000, np.random.default_rng(3))
    b = g.sample_negative(1000, np.random.default_rng(3))
    assert a.tolist() == b.tolist()


def test_unbuilt_neg_table_raises():
    shard = GraphShard(0, np.array([0]), np.array([0, 1]), np.array([1]))
    g = PartitionedGraph([shard], 2, ['a', 'b'])
    try:
        g.sample_negative(3, np.random.default_rng(0))
    except NotBuiltError:
        pass
    else:
        raise AssertionError("sampling before build_neg_table must raise NotBuiltError")


def test_serialization_is_byte_identical_and_loads():
    edges = random_edges(300, 2000, seed=10)
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [os.path.join(tmp, 'one'), os.path.join(tmp, 'two')]
        for d in dirs:
            ingest_edges(edges, num_shards=3).save(d)
        names = sorted(os.listdir(dirs[0]))
        assert names == sorted(os.listdir(dirs[1]))
        for name in names:
            with open(os.path.join(dirs[0], name), 'rb') as f1, open(os.path.join(dirs[1], name), 'rb') as f2:
                assert f1.read() == f2.read(), name

        original = ingest_edges(edges, num_shards=3)
        loaded = PartitionedGraph.load(dirs[0])
        assert loaded.raw_ids == original.raw_ids
        assert np.array_equal(loaded.degree_table, original.degree_table)
        assert np.allclose(loaded.neg_table, original.neg_table)
        for v in range(original.num_nodes):
            assert loaded.neighbors(v).tolist() == original.neighbors(v).tolist()


def test_unknown_node_raises_key_error():
    g = ingest_edges([('A', 'B')])
    try:
        g.neighbors(5)
    except KeyError:
        pass
    else:
        raise AssertionError("an id outside [0, N) must raise KeyError")


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
    print(f"\n--- graph_store: {len(tests) - failures}/{len(tests)} tests passed ---")
    return failures


if __name__ == "__main__":
    sys.exit(1 if run_all() else 0)
