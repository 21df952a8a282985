import numpy as np
import pytest

from midpool.graphs import (
    Dataset,
    Graph,
    IngestionError,
    ParseError,
    gen_colors3,
    gen_erdos_renyi,
    gen_triangles,
    kfold_split,
    load_tu_dataset,
    normalized_adjacency,
    permute_graph,
    perturb_edges,
    write_tu_dataset,
)


def random_graph(rng, n, p=0.4, feat_dim=3):
    a = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    mask = rng.random(len(iu[0])) < p
    a[iu[0][mask], iu[1][mask]] = 1.0
    a = np.maximum(a, a.T)
    return Graph(A=a, X=rng.normal(size=(n, feat_dim)), label=0, graph_id=0)


# ---------------------------------------------------------------------------
# normalized adjacency


def test_normalized_adjacency_singleton():
    g = Graph(A=np.zeros((1, 1)), X=np.ones((1, 2)))
    np.testing.assert_array_equal(normalized_adjacency(g), [[1.0]])


def test_normalized_adjacency_two_connected_nodes():
    g = Graph(A=np.array([[0.0, 1.0], [1.0, 0.0]]), X=np.ones((2, 1)))
    np.testing.assert_allclose(normalized_adjacency(g), np.full((2, 2), 0.5))


def test_normalized_adjacency_symmetric_support_and_spectrum(rng):
    g = random_graph(rng, 8, p=0.4)
    a_norm = normalized_adjacency(g)
    assert np.abs(a_norm - a_norm.T).max() < 1e-12
    # support matches A + I
    support = (g.A + np.eye(g.n)) > 0
    assert np.array_equal(a_norm > 0, support)
    radius = np.abs(np.linalg.eigvalsh(a_norm)).max()
    assert radius <= 1 + 1e-9


def test_graph_invariants_enforced():
    with pytest.raises(ValueError):
        Graph(A=np.array([[0.0, 1.0], [0.0, 0.0]]), X=np.ones((2, 1)))
    with pytest.raises(ValueError):
        Graph(A=np.eye(2), X=np.ones((2, 1)))
    with pytest.raises(ValueError):
        Graph(A=np.zeros((2, 2)), X=np.ones((3, 1)))


# ---------------------------------------------------------------------------
# TU format


def write_minimal_fixture(tmp_path):
    (tmp_path / "MINI_A.txt").write_text("1, 2\n2, 1\n")
    (tmp_path / "MINI_graph_indicator.txt").write_text("1\n1\n")
    (tmp_path / "MINI_graph_labels.txt").write_text("1\n")
    (tmp_path / "MINI_node_labels.txt").write_text("1\n1\n")


def test_load_minimal_fixture(tmp_path):
    write_minimal_fixture(tmp_path)
    ds = load_tu_dataset(str(tmp_path), "MINI")
    assert len(ds.graphs) == 1
    g = ds.graphs[0]
    assert g.n == 2
    np.testing.assert_array_equal(g.A, [[0.0, 1.0], [1.0, 0.0]])
    assert ds.num_classes == 1


def test_load_missing_file_names_it(tmp_path):
    with pytest.raises(IngestionError, match="MISSING_A.txt"):
        load_tu_dataset(str(tmp_path), "MISSING")


def test_load_ragged_attributes_reports_line(tmp_path):
    write_minimal_fixture(tmp_path)
    (tmp_path / "MINI_node_attributes.txt").write_text("1.0, 2.0\n3.0\n")
    with pytest.raises(ParseError, match="line 2"):
        load_tu_dataset(str(tmp_path), "MINI")


def test_write_skips_attributes_when_featureless(tmp_path):
    # zero-width features: no attribute file emitted
    g = Graph(A=np.array([[0.0, 1.0], [1.0, 0.0]]), X=np.zeros((2, 0)), label=0)
    ds = Dataset(graphs=[g], num_classes=1, feature_dim=0, name="EMPTYF")
    write_tu_dataset(ds, str(tmp_path))
    assert not (tmp_path / "EMPTYF_node_attributes.txt").exists()


def test_write_single_edge_emits_both_directions(tmp_path):
    g = Graph(A=np.array([[0.0, 1.0], [1.0, 0.0]]), X=np.ones((2, 1)), label=0)
    ds = Dataset(graphs=[g], num_classes=1, feature_dim=1, name="ONEEDGE")
    write_tu_dataset(ds, str(tmp_path))
    lines = (tmp_path / "ONEEDGE_A.txt").read_text().strip().splitlines()
    assert lines == ["1, 2", "2, 1"]


def test_roundtrip_three_graph_fixture(tmp_path, rng):
    graphs = [random_graph(rng, n, feat_dim=4) for n in (3, 5, 7)]
    for i, g in enumerate(graphs):
        g.graph_id = i
        g.label = i % 2
    ds = Dataset(graphs=graphs, num_classes=2, feature_dim=4, name="TRIP")
    write_tu_dataset(ds, str(tmp_path))
    back = load_tu_dataset(str(tmp_path), "TRIP")
    assert len(back.graphs) == 3
    for orig, loaded in zip(ds.graphs, back.graphs):
        np.testing.assert_array_equal(orig.A, loaded.A)
        np.testing.assert_allclose(orig.X, loaded.X)
        assert orig.label == loaded.label


def test_roundtrip_includes_edgeless_graph(tmp_path):
    graphs = [
        Graph(A=np.zeros((2, 2)), X=np.ones((2, 1)), label=0, graph_id=0),
        Graph(A=np.array([[0.0, 1.0], [1.0, 0.0]]), X=np.zeros((2, 1)),
              label=1, graph_id=1),
    ]
    ds = Dataset(graphs=graphs, num_classes=2, feature_dim=1, name="EDGELESS")
    write_tu_dataset(ds, str(tmp_path))
    back = load_tu_dataset(str(tmp_path), "EDGELESS")
    assert back.graphs[0].num_edges == 0
    assert back.graphs[1].num_edges == 1


# ---------------------------------------------------------------------------
# generators


def test_colors3_label_counts_color_zero():
    ds = gen_colors3(50, 4, 10, seed=3)
    for g in ds.graphs:
        count = int((g.X[:, 0] == 1.0).sum())
        assert g.label == min(count, 10)


def test_colors3_label_diversity():
    ds = gen_colors3(5500, 4, 25, seed=0)
    labels = {g.label for g in ds.graphs}
    assert len(labels) >= 8


def test_colors3_deterministic():
    a = gen_colors3(10, 4, 12, seed=9)
    b = gen_colors3(10, 4, 12, seed=9)
    for ga, gb in zip(a.graphs, b.graphs):
        np.testing.assert_array_equal(ga.A, gb.A)
        np.testing.assert_array_equal(ga.X, gb.X)
        assert ga.label == gb.label


def brute_force_triangles(a):
    n = a.shape[0]
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if a[i, j] and a[j, k] and a[i, k]:
                    count += 1
    return count


def test_triangles_single_triangle_and_clique():
    tri = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    from midpool.graphs import count_triangles

    assert count_triangles(tri) == 1
    clique4 = np.ones((4, 4)) - np.eye(4)
    assert count_triangles(clique4) == 4


def test_triangles_labels_match_brute_force():
    ds = gen_triangles(100, 5, 14, seed=1)
    for g in ds.graphs:
        assert g.label == min(brute_force_triangles(g.A), 9)


def test_erdos_renyi_edge_counts():
    g2 = gen_erdos_renyi(2, seed=0)
    assert g2.num_edges == 1
    g100 = gen_erdos_renyi(100, seed=0)
    assert g100.num_edges == 200
    assert np.all(np.diag(g100.A) == 0)
    assert g100.X.shape == (100, 128)


def test_erdos_renyi_handshake_lemma():
    for seed in range(50):
        g = gen_erdos_renyi(20, seed=seed)
        assert g.A.sum() == 2 * g.num_edges == 2 * min(40, 190)


# ---------------------------------------------------------------------------
# perturbation / permutation


def test_perturb_rate_zero_identity(rng):
    g = random_graph(rng, 10)
    out = perturb_edges(g, 0.0, seed=1)
    np.testing.assert_array_equal(out.A, g.A)


def test_perturb_rate_one_empties_adjacency(rng):
    g = random_graph(rng, 10)
    out = perturb_edges(g, 1.0, seed=1)
    assert out.A.sum() == 0


def test_perturb_half_of_forty_edges():
    rng = np.random.default_rng(0)
    while True:
        g = random_graph(rng, 12, p=0.6)
        if g.num_edges == 40:
            break
    out = perturb_edges(g, 0.5, seed=2)
    assert out.num_edges == 20


def test_permute_identity_and_inverse(rng):
    g = random_graph(rng, 8)
    same = permute_graph(g, np.arange(8))
    np.testing.assert_array_equal(same.A, g.A)
    perm = rng.permutation(8)
    inv = np.argsort(perm)
    back = permute_graph(permute_graph(g, perm), inv)
    np.testing.assert_array_equal(back.A, g.A)
    np.testing.assert_array_equal(back.X, g.X)


def test_permute_rejects_non_bijection(rng):
    g = random_graph(rng, 4)
    with pytest.raises(ValueError):
        permute_graph(g, [0, 0, 1, 2])


def test_permute_preserves_degree_multiset_and_triangles(rng):
    g = random_graph(rng, 9, p=0.5)
    base_degrees = sorted(g.A.sum(axis=1).tolist())
    base_tris = brute_force_triangles(g.A)
    for _ in range(100):
        pg = permute_graph(g, rng.permutation(9))
        assert sorted(pg.A.sum(axis=1).tolist()) == base_degrees
        assert brute_force_triangles(pg.A) == base_tris


# ---------------------------------------------------------------------------
# k-fold splits


def balanced_dataset(n=100):
    graphs = []
    for i in range(n):
        graphs.append(Graph(A=np.zeros((2, 2)), X=np.ones((2, 1)),
                            label=i % 2, graph_id=i))
    return Dataset(graphs=graphs, num_classes=2, feature_dim=1, name="BAL")


def test_kfold_sizes_and_partition():
    ds = balanced_dataset(100)
    splits = kfold_split(ds, k=10, seed=0)
    all_test = []
    for s in splits:
        assert len(s.test_ids) == 10
        combined = set(s.train_ids) | set(s.val_ids) | set(s.test_ids)
        assert combined == set(range(100))
        assert not (set(s.train_ids) & set(s.test_ids))
        assert not (set(s.val_ids) & set(s.test_ids))
        all_test.extend(s.test_ids)
    assert sorted(all_test) == list(range(100))


def test_kfold_stratification_balanced():
    ds = balanced_dataset(100)
    for s in kfold_split(ds, k=10, seed=3):
        labels = [ds.by_id(i).label for i in s.test_ids]
        assert abs(labels.count(0) - labels.count(1)) <= 1


def test_kfold_deterministic():
    ds = balanced_dataset(60)
    a = kfold_split(ds, k=10, seed=5)
    b = kfold_split(ds, k=10, seed=5)
    for sa, sb in zip(a, b):
        assert sa.train_ids == sb.train_ids
        assert sa.val_ids == sb.val_ids
        assert sa.test_ids == sb.test_ids


def test_kfold_small_class_falls_back_unstratified(caplog):
    graphs = [Graph(A=np.zeros((2, 2)), X=np.ones((2, 1)),
                    label=0 if i else 1, graph_id=i) for i in range(30)]
    ds = Dataset(graphs=graphs, num_classes=2, feature_dim=1)
    import logging

    with caplog.at_level(logging.WARNING, logger="midpool.graphs"):
        splits = kfold_split(ds, k=10, seed=0)
    assert len(splits) == 10
    assert any("unstratified" in rec.message for rec in caplog.records)
