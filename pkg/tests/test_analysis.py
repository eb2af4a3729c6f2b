from __future__ import annotations

import csv

import numpy as np
import pytest

from semb.analysis import (
    export_projection_input,
    global_proximity_report,
    similarity_matrix,
    write_matrix_csv,
)
from semb.embedstore import ItemEmbeddingSet, SourceKind, SourceTag
from semb.errors import DimensionMismatch, NoGlobalEmbedding
from semb.retrieval import cosine


def labelled(rng, labels, dim=8):
    return [(label, rng.normal(size=dim)) for label in labels]


def mixed_item(rng, item_id="img", n_regional=4, n_crop=4, dim=8) -> ItemEmbeddingSet:
    embs = []
    for i in range(n_regional):
        embs.append((SourceTag(SourceKind.REGIONAL_PROMPT, f"r{i}"), rng.normal(size=dim)))
    for i in range(n_crop):
        embs.append((SourceTag(SourceKind.CROP, str(i)), rng.normal(size=dim)))
    embs.append((SourceTag(SourceKind.GLOBAL, "summary"), rng.normal(size=dim)))
    return ItemEmbeddingSet(item_id, embs)


class TestSimilarityMatrix:
    def test_orthonormal_identity(self):
        basis = [(f"e{i}", np.eye(3)[i]) for i in range(3)]
        matrix = similarity_matrix(basis, basis)
        assert np.array_equal(matrix.values, np.eye(3))

    def test_self_matrix_symmetric_unit_diagonal(self, rng):
        group = labelled(rng, ["a", "b", "c", "d"])
        matrix = similarity_matrix(group, group)
        assert np.allclose(matrix.values, matrix.values.T)
        assert np.allclose(np.diagonal(matrix.values), 1.0, atol=1e-12)

    def test_matches_elementwise_cosine(self, rng):
        rows = labelled(rng, ["r0", "r1", "r2", "r3"])
        cols = labelled(rng, ["c0", "c1", "c2", "c3"])
        matrix = similarity_matrix(rows, cols)
        for i, (_rl, rv) in enumerate(rows):
            for j, (_cl, cv) in enumerate(cols):
                assert matrix.values[i, j] == cosine(rv, cv)

    def test_labels_preserved(self, rng):
        matrix = similarity_matrix(labelled(rng, ["x"]), labelled(rng, ["y", "z"]))
        assert matrix.row_labels == ["x"] and matrix.col_labels == ["y", "z"]

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            similarity_matrix(labelled(rng, ["a"], dim=4), labelled(rng, ["b"], dim=6))

    def test_csv_round_trip(self, tmp_path, rng):
        rows = labelled(rng, ["f_a", "f_b"])
        cols = labelled(rng, ["F_a", "F_b", "F_c"])
        matrix = similarity_matrix(rows, cols)
        path = tmp_path / "sim.csv"
        write_matrix_csv(matrix, path)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["", "F_a", "F_b", "F_c"]
        for i, row in enumerate(parsed[1:]):
            assert row[0] == matrix.row_labels[i]
            for j, cell in enumerate(row[1:]):
                assert float(cell) == pytest.approx(matrix.values[i, j], abs=1e-9)


class TestGlobalProximity:
    def test_regional_equal_to_global(self, rng):
        g = rng.normal(size=8)
        embs = [(SourceTag(SourceKind.REGIONAL_PROMPT, f"r{i}"), g.copy()) for i in range(4)]
        embs.append((SourceTag(SourceKind.GLOBAL, "summary"), g))
        report = global_proximity_report(ItemEmbeddingSet("img", embs))
        assert report.mean_regional_to_global == pytest.approx(1.0, abs=1e-12)
        assert report.mean_crop_to_global is None

    def test_orthogonal_crops(self):
        g = np.array([1.0, 0.0, 0.0])
        embs = [
            (SourceTag(SourceKind.CROP, "0"), np.array([0.0, 1.0, 0.0])),
            (SourceTag(SourceKind.CROP, "1"), np.array([0.0, 0.0, 1.0])),
            (SourceTag(SourceKind.GLOBAL, "summary"), g),
        ]
        report = global_proximity_report(ItemEmbeddingSet("img", embs))
        assert report.mean_crop_to_global == 0.0

    def test_mixed_item_means_by_hand(self, rng):
        item = mixed_item(rng)
        g = item.global_vector()
        report = global_proximity_report(item)
        regional = [cosine(v, g) for t, v in item.embeddings if t.kind == SourceKind.REGIONAL_PROMPT]
        crops = [cosine(v, g) for t, v in item.embeddings if t.kind == SourceKind.CROP]
        assert report.mean_regional_to_global == pytest.approx(sum(regional) / 4, abs=1e-15)
        assert report.mean_crop_to_global == pytest.approx(sum(crops) / 4, abs=1e-15)
        assert len(report.per_tag) == 8

    def test_order_invariant(self, rng):
        item = mixed_item(rng)
        shuffled = ItemEmbeddingSet(item.item_id, list(reversed(item.embeddings)))
        a = global_proximity_report(item)
        b = global_proximity_report(shuffled)
        assert a.mean_regional_to_global == b.mean_regional_to_global
        assert a.mean_crop_to_global == b.mean_crop_to_global
        assert a.per_tag == b.per_tag

    def test_requires_exactly_one_global(self, rng):
        no_global = ItemEmbeddingSet(
            "img", [(SourceTag(SourceKind.CROP, "0"), rng.normal(size=4))]
        )
        with pytest.raises(NoGlobalEmbedding):
            global_proximity_report(no_global)
        two = ItemEmbeddingSet(
            "img",
            [
                (SourceTag(SourceKind.GLOBAL, "a"), rng.normal(size=4)),
                (SourceTag(SourceKind.GLOBAL, "b"), rng.normal(size=4)),
            ],
        )
        with pytest.raises(NoGlobalEmbedding):
            global_proximity_report(two)


class TestProjectionExport:
    def test_twenty_items_nine_embeddings(self, tmp_path, rng):
        items = [mixed_item(rng, item_id=f"img{i}") for i in range(20)]
        path = tmp_path / "proj.csv"
        rows = export_projection_input(items, path, normalized=False)
        assert rows == 180
        lines = path.read_text().splitlines()
        assert lines[0] == "# normalized=false"
        assert len(lines) == 182  # comment + header + 180 rows

    def test_item_without_embeddings_contributes_no_rows(self, tmp_path, rng):
        items = [mixed_item(rng, item_id="full"), ItemEmbeddingSet("hollow", [])]
        rows = export_projection_input(items, tmp_path / "proj.csv")
        assert rows == 9

    def test_parse_back_is_f32_exact(self, tmp_path, rng):
        items = [mixed_item(rng, item_id="img")]
        for item in items:
            item.embeddings = [
                (tag, vec.astype(np.float32)) for tag, vec in item.embeddings
            ]
        path = tmp_path / "proj.csv"
        export_projection_input(items, path)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        for row, (tag, vec) in zip(parsed[1:], items[0].embeddings):
            assert row[1] == tag.kind.tag_name and row[2] == tag.label
            recovered = np.array([np.float32(float(cell)) for cell in row[3:]])
            assert np.array_equal(recovered, vec)

    def test_empty_export_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_projection_input([], tmp_path / "x.csv")
