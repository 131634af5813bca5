"""Graph construction: pair splitting, patchify, stem embedding, k-NN."""

import json

import numpy as np
import pytest

from signl import graphbuild as gb
from signl import tensorgrad as tg
from signl.featio import ConfigError, FeatureMatrix


def _stem(patch_dim, d, rng, identity=False):
    if identity:
        w = np.eye(patch_dim, dtype=np.float32)
    else:
        w = rng.standard_normal((patch_dim, d)).astype(np.float32)
    b = np.zeros((1, w.shape[1]), dtype=np.float32)
    return (tg.Tensor(w, requires_grad=True), tg.Tensor(b, requires_grad=True))


class TestSplitPair:
    def test_even_split_restores_original(self, rng):
        values = rng.standard_normal((4, 8)).astype(np.float32)
        m1, m2 = gb.split_pair(FeatureMatrix("c", values))
        assert m1.values.shape == m2.values.shape == (4, 4)
        assert np.array_equal(np.concatenate([m1.values, m2.values], axis=1), values)

    def test_odd_width_repeat_padded(self, rng):
        values = rng.standard_normal((4, 9)).astype(np.float32)
        m1, m2 = gb.split_pair(FeatureMatrix("c", values))
        assert m1.values.shape == m2.values.shape == (4, 5)
        assert np.array_equal(m2.values[:, -1], values[:, 0])


class TestPatchify:
    def test_temporal_tiles(self, rng):
        values = rng.standard_normal((4, 4)).astype(np.float32)
        patches = gb.patchify(values, 2, "temporal")
        assert len(patches) == 2 and all(p.shape == (4, 2) for p in patches)
        assert np.array_equal(np.concatenate(patches, axis=1), values)

    def test_spatial_tiles_partition(self, rng):
        values = rng.standard_normal((8, 6)).astype(np.float32)
        patches = gb.patchify(values, 4, "spatial")
        assert all(p.shape == (2, 6) for p in patches)
        assert np.array_equal(np.concatenate(patches, axis=0), values)

    def test_non_divisible_rejected(self):
        with pytest.raises(ConfigError, match="8"):
            gb.patchify(np.zeros((4, 8)), 5, "temporal")

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            gb.patchify(np.zeros((4, 4)), 2, "diagonal")


class TestStemEmbed:
    def test_identity_map_returns_flattened_patches(self, rng):
        values = rng.standard_normal((4, 4)).astype(np.float32)
        patches = gb.patchify(values, 2, "temporal")
        w, b = _stem(8, 8, rng, identity=True)
        out = gb.stem_embed(patches, w, b)
        assert np.allclose(out.data, gb.flatten_patches(patches))

    def test_zero_weights_yield_bias_rows(self, rng):
        patches = gb.patchify(rng.standard_normal((4, 4)).astype(np.float32), 2, "temporal")
        w = tg.Tensor(np.zeros((8, 3), dtype=np.float32), requires_grad=True)
        b = tg.Tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32), requires_grad=True)
        out = gb.stem_embed(patches, w, b)
        assert np.allclose(out.data, np.tile([1.0, 2.0, 3.0], (2, 1)))

    def test_shape_mismatch(self, rng):
        patches = gb.patchify(rng.standard_normal((4, 4)).astype(np.float32), 2, "temporal")
        w, b = _stem(5, 3, rng)
        with pytest.raises(tg.ShapeError):
            gb.stem_embed(patches, w, b)

    def test_gradient_through_stem(self, rng):
        patches = gb.patchify(rng.standard_normal((4, 4)).astype(np.float64), 2, "temporal")
        w = tg.Tensor(rng.standard_normal((8, 3)), requires_grad=True)
        b = tg.Tensor(np.zeros((1, 3)), requires_grad=True)
        with tg.Tape() as tape:
            tape.backward(tg.tsum(gb.stem_embed(patches, w, b)))
        flat = gb.flatten_patches(patches).astype(np.float64)
        assert np.allclose(w.grad, np.tile(flat.sum(axis=0)[:, None], (1, 3)))
        assert np.allclose(b.grad, np.full((1, 3), 2.0))


class TestKnnGraph:
    def test_collinear_points(self):
        x = np.array([[0.0], [1.0], [10.0]])
        assert set(gb.knn_graph(x, 1)) == {(1, 0), (0, 1), (1, 2)}

    def test_complete_digraph_at_k_max(self, rng):
        x = rng.standard_normal((5, 3))
        edges = gb.knn_graph(x, 4)
        assert len(edges) == 20
        assert set(edges) == {(j, i) for i in range(5) for j in range(5) if i != j}

    def test_k_out_of_range(self):
        with pytest.raises(ConfigError):
            gb.knn_graph(np.zeros((4, 2)), 4)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 17))
            k = int(rng.integers(1, n - 1))
            x = rng.standard_normal((n, 5))
            edges = gb.knn_graph(x, k)
            assert len(edges) == n * k
            expected = set()
            for i in range(n):
                dists = sorted((np.linalg.norm(x[j] - x[i]), j)
                               for j in range(n) if j != i)
                expected.update((j, i) for _, j in dists[:k])
            assert set(edges) == expected

    def test_in_degree_no_self_loops_no_duplicates(self, rng):
        x = rng.standard_normal((8, 4))
        edges = gb.knn_graph(x, 3)
        assert len(edges) == len(set(edges))
        assert all(src != dst for src, dst in edges)
        indeg = {}
        for _, dst in edges:
            indeg[dst] = indeg.get(dst, 0) + 1
        assert all(v == 3 for v in indeg.values())

    def test_permutation_equivariance(self, rng):
        x = rng.standard_normal((7, 4))
        perm = rng.permutation(7)
        edges = set(gb.knn_graph(x, 2))
        permuted = set(gb.knn_graph(x[perm], 2))
        relabeled = {(int(np.where(perm == a)[0][0]), int(np.where(perm == b)[0][0]))
                     for a, b in edges}
        assert permuted == relabeled

    def test_neighbor_table_matches_single(self, rng):
        xb = rng.standard_normal((3, 6, 4))
        table = gb.neighbor_table(xb, 2)
        for b in range(3):
            edges = gb.knn_graph(xb[b], 2)
            expected = [[src for src, dst in edges if dst == i] for i in range(6)]
            assert table[b].tolist() == expected


class TestBuildBundle:
    def _bundle(self, rng, f=16, t=16, n=4, k=2, d=8):
        values = rng.standard_normal((f, t)).astype(np.float32)
        m = FeatureMatrix("clip0", values)
        cfg = gb.GraphConfig(n_patches=n, k_neighbors=k, node_dim=d)
        t_seg = t // 2
        stems = {"temporal": _stem(f * (t_seg // n), d, rng),
                 "spatial": _stem((f // n) * t_seg, d, rng)}
        return gb.build_bundle(m, cfg, stems), m, cfg, stems

    def test_four_views_with_expected_counts(self, rng):
        bundle, _, cfg, _ = self._bundle(rng)
        views = bundle.views()
        assert [v.kind for v in views] == ["temporal", "spatial", "temporal", "spatial"]
        assert [v.segment_id for v in views] == ["1", "1", "2", "2"]
        for v in views:
            assert v.clip_id == "clip0"
            assert v.x.shape == (cfg.n_patches, cfg.node_dim)
            assert len(v.edges) == cfg.n_patches * cfg.k_neighbors

    def test_deterministic(self, rng):
        b1, m, cfg, stems = self._bundle(rng)
        b2 = gb.build_bundle(m, cfg, stems)
        for v1, v2 in zip(b1.views(), b2.views()):
            assert np.array_equal(v1.x, v2.x) and v1.edges == v2.edges

    def test_reference_shapes(self, rng):
        bundle, _, _, _ = self._bundle(rng, f=64, t=64, n=8, k=3, d=32)
        for v in bundle.views():
            assert v.x.shape == (8, 32)

    def test_export_view_json(self, rng, tmp_path):
        bundle, _, _, _ = self._bundle(rng)
        path = tmp_path / "view.json"
        gb.export_view_json(bundle.g_t1, path)
        payload = json.loads(path.read_text())
        assert payload["n_nodes"] == 4 and len(payload["edges"]) == 8
