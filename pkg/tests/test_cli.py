from __future__ import annotations

import json
import math

import numpy as np
import pytest

from semb.cli import main
from semb.embedstore import (
    ItemEmbeddingSet,
    QueryRecord,
    SourceKind,
    SourceTag,
    build_gallery,
    load_gallery,
    save_gallery,
    save_queries,
)
from semb.trainer import load_checkpoint

from conftest import planted_samples, random_gallery


def write_gallery(tmp_path, rng, n=5, k=3, dim=8, name="gallery.semb"):
    path = tmp_path / name
    gallery = random_gallery(rng, n, k, dim)
    save_gallery(gallery, path)
    return path, gallery


def write_self_queries(tmp_path, gallery, name="queries.jsonl", tier=None):
    queries = [
        QueryRecord(
            f"q{i}",
            f"text {i}",
            item.item_id,
            item.embeddings[0][1].astype(np.float64),
            tier=tier,
        )
        for i, item in enumerate(gallery.items)
    ]
    path = tmp_path / name
    save_queries(path, queries, tier_field="tier" if tier else None)
    return path


def write_annotations(tmp_path, rows, name="ann.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


GOOD_CAPTION = "a faded sticker on the second lamp post from the left"


class TestHelpAndFlags:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "build-index" in capsys.readouterr().out

    def test_subcommand_help_exits_zero(self):
        for command in ["build-index", "eval", "train", "tier", "filter", "stats"]:
            with pytest.raises(SystemExit) as exc:
                main([command, "--help"])
            assert exc.value.code == 0

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--nonsense"])
        assert exc.value.code == 2


class TestBuildIndex:
    def test_valid_round_trip(self, tmp_path, rng, capsys):
        src, _g = write_gallery(tmp_path, rng)
        out = tmp_path / "out.semb"
        assert main(["build-index", "--embeddings", str(src), "--out", str(out)]) == 0
        assert "5 items" in capsys.readouterr().out
        # no transformation requested: the rewrite is byte-identical
        assert out.read_bytes() == src.read_bytes()

    def test_normalize_flag(self, tmp_path, rng):
        src, _g = write_gallery(tmp_path, rng)
        out = tmp_path / "norm.semb"
        assert main(["build-index", "--embeddings", str(src), "--out", str(out), "--normalize"]) == 0
        loaded = load_gallery(out)
        assert loaded.normalized
        for item in loaded.items:
            for _tag, vec in item.embeddings:
                v = vec.astype(np.float64)
                assert abs(math.sqrt(float(np.dot(v, v))) - 1.0) < 1e-6

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(
            ["build-index", "--embeddings", str(tmp_path / "absent.semb"), "--out", str(tmp_path / "o")]
        )
        assert code == 3

    def test_invalid_input_names_item(self, tmp_path, capsys):
        bad = tmp_path / "bad.semb"
        item = ItemEmbeddingSet(
            "broken_item", [(SourceTag(SourceKind.GLOBAL, ""), np.array([1.0, 2.0]))]
        )
        gallery = build_gallery([item], dim=2)
        save_gallery(gallery, bad)
        data = bytearray(bad.read_bytes())
        data[-4:] = b"\x00\x00\xc0\x7f"  # overwrite last float with NaN
        bad.write_bytes(bytes(data))
        code = main(["build-index", "--embeddings", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "broken_item" in capsys.readouterr().err


class TestEval:
    def test_self_queries_reach_full_recall(self, tmp_path, rng, capsys):
        gallery_path, gallery = write_gallery(tmp_path, rng)
        queries_path = write_self_queries(tmp_path, gallery)
        report_path = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--gallery", str(gallery_path),
                "--queries", str(queries_path),
                "--report", str(report_path),
                "--deterministic",
            ]
        )
        assert code == 0
        doc = json.loads(report_path.read_text())
        assert doc["tiers"]["all"]["r_at"] == {"1": 1.0, "5": 1.0, "10": 1.0}
        assert "generated_at" not in doc
        assert "R@10" in capsys.readouterr().out

    def test_timestamp_present_without_deterministic(self, tmp_path, rng):
        gallery_path, gallery = write_gallery(tmp_path, rng)
        queries_path = write_self_queries(tmp_path, gallery)
        report_path = tmp_path / "report.json"
        main(["eval", "--gallery", str(gallery_path), "--queries", str(queries_path),
              "--report", str(report_path)])
        assert "generated_at" in json.loads(report_path.read_text())

    def test_duplicate_k_rejected(self, tmp_path, rng):
        gallery_path, gallery = write_gallery(tmp_path, rng)
        queries_path = write_self_queries(tmp_path, gallery)
        code = main(["eval", "--gallery", str(gallery_path), "--queries", str(queries_path),
                     "--k", "1,5,5"])
        assert code == 2

    def test_dim_mismatch_exits_two(self, tmp_path, rng):
        gallery_path, _g = write_gallery(tmp_path, rng, dim=8)
        other = random_gallery(rng, 3, 2, 16, prefix="item")
        queries_path = write_self_queries(tmp_path, other)
        code = main(["eval", "--gallery", str(gallery_path), "--queries", str(queries_path)])
        assert code == 2

    def test_missing_truth_exits_two(self, tmp_path, rng, capsys):
        gallery_path, gallery = write_gallery(tmp_path, rng)
        path = tmp_path / "queries.jsonl"
        save_queries(path, [QueryRecord("q0", "t", "ghost_item", np.ones(8))])
        code = main(["eval", "--gallery", str(gallery_path), "--queries", str(path)])
        assert code == 2
        assert "ghost_item" in capsys.readouterr().err

    def test_tier_field_grouping(self, tmp_path, rng):
        gallery_path, gallery = write_gallery(tmp_path, rng)
        queries_path = write_self_queries(tmp_path, gallery, tier="zoom2")
        report_path = tmp_path / "report.json"
        code = main(
            ["eval", "--gallery", str(gallery_path), "--queries", str(queries_path),
             "--tier-field", "tier", "--report", str(report_path), "--deterministic"]
        )
        assert code == 0
        assert list(json.loads(report_path.read_text())["tiers"]) == ["zoom2"]


class TestTrain:
    def write_dataset(self, tmp_path, rng, n=32, dim=8):
        from semb.trainer import save_train_samples

        rotation, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        dataset = planted_samples(rng, n, dim, rotation)
        path = tmp_path / "train.jsonl"
        save_train_samples(path, dataset)
        return path

    def test_planted_training_reduces_loss(self, tmp_path, rng):
        data = self.write_dataset(tmp_path, rng)
        ckpt = tmp_path / "adapter.sadp"
        curve_path = tmp_path / "curve.csv"
        code = main(
            ["train", "--data", str(data), "--checkpoint", str(ckpt),
             "--loss-curve", str(curve_path), "--epochs", "20", "--batch-size", "8",
             "--lr", "0.5", "--seed", "0"]
        )
        assert code == 0
        params = load_checkpoint(ckpt)
        assert params.weight.shape == (8, 8)
        lines = curve_path.read_text().splitlines()
        assert lines[0] == "epoch,mean_loss"
        first = float(lines[1].split(",")[1])
        last = float(lines[-1].split(",")[1])
        assert last < 0.1 * first

    def test_zero_lr_flat_curve(self, tmp_path, rng):
        data = self.write_dataset(tmp_path, rng, n=16)
        curve_path = tmp_path / "curve.csv"
        code = main(
            ["train", "--data", str(data), "--checkpoint", str(tmp_path / "a.sadp"),
             "--loss-curve", str(curve_path), "--epochs", "4", "--batch-size", "8",
             "--lr", "0"]
        )
        assert code == 0
        losses = {line.split(",")[1] for line in curve_path.read_text().splitlines()[1:]}
        assert len(losses) == 1

    def test_zero_temperature_exits_two(self, tmp_path, rng):
        data = self.write_dataset(tmp_path, rng, n=8)
        code = main(
            ["train", "--data", str(data), "--checkpoint", str(tmp_path / "a.sadp"),
             "--tau", "0"]
        )
        assert code == 2


class TestBenchCommands:
    def test_tier_crops_contain_bbox(self, tmp_path, capsys):
        ann = write_annotations(
            tmp_path,
            [{"image_id": "a", "width": 120, "height": 90, "bbox": [2, 2, 4, 4],
              "caption": GOOD_CAPTION}],
        )
        out = tmp_path / "tiers.jsonl"
        assert main(["tier", "--annotations", str(ann), "--out", str(out)]) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 3
        for line in lines:
            x, y, w, h = line["crop"]
            assert x <= 2 and y <= 2 and x + w >= 6 and y + h >= 6

    def test_filter_verdict_line(self, tmp_path, capsys):
        ann = write_annotations(
            tmp_path,
            [{"image_id": "big", "width": 100, "height": 100, "bbox": [0, 0, 50, 50],
              "caption": GOOD_CAPTION}],
        )
        assert main(["filter", "--annotations", str(ann)]) == 0
        out = capsys.readouterr().out
        assert json.loads(out.splitlines()[0]) == {
            "image_id": "big", "verdict": "reject_bbox_too_large",
        }

    def test_stats_exact_mean(self, tmp_path):
        ann = write_annotations(
            tmp_path,
            [
                {"image_id": "a", "width": 100, "height": 100, "bbox": [0, 0, 5, 5],
                 "caption": " ".join(["w"] * 10)},
                {"image_id": "b", "width": 100, "height": 100, "bbox": [0, 0, 5, 5],
                 "caption": " ".join(["w"] * 14)},
            ],
        )
        out = tmp_path / "stats.json"
        code = main(["stats", "--annotations", str(ann), "--out", str(out),
                     "--hist-csv", str(tmp_path / "hist"), "--deterministic"])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["caption_words"] == {"min": 10, "max": 14, "mean": 12.0}
        assert (tmp_path / "hist_caption_len.csv").exists()
        assert (tmp_path / "hist_bbox_ratio.csv").exists()

    def test_invalid_annotation_exits_two(self, tmp_path):
        ann = write_annotations(
            tmp_path,
            [{"image_id": "a", "width": 10, "height": 10, "bbox": [8, 8, 5, 5],
              "caption": GOOD_CAPTION}],
        )
        assert main(["stats", "--annotations", str(ann)]) == 2


class TestAnalysisCommands:
    def write_mixed_gallery(self, tmp_path, rng):
        embs = []
        for i in range(4):
            embs.append((SourceTag(SourceKind.REGIONAL_PROMPT, f"r{i}"), rng.normal(size=6)))
        for i in range(4):
            embs.append((SourceTag(SourceKind.CROP, str(i)), rng.normal(size=6)))
        embs.append((SourceTag(SourceKind.GLOBAL, "summary"), rng.normal(size=6)))
        gallery = build_gallery([ItemEmbeddingSet("img_0", embs)])
        path = tmp_path / "mixed.semb"
        save_gallery(gallery, path)
        return path

    def test_simmat(self, tmp_path, rng):
        gallery_path = self.write_mixed_gallery(tmp_path, rng)
        out = tmp_path / "sim.csv"
        code = main(["simmat", "--gallery", str(gallery_path), "--item", "img_0",
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 5  # header + 4 regional rows

    def test_simmat_unknown_item_exits_two(self, tmp_path, rng):
        gallery_path = self.write_mixed_gallery(tmp_path, rng)
        code = main(["simmat", "--gallery", str(gallery_path), "--item", "ghost",
                     "--out", str(tmp_path / "x.csv")])
        assert code == 2

    def test_proximity(self, tmp_path, rng, capsys):
        gallery_path = self.write_mixed_gallery(tmp_path, rng)
        code = main(["proximity", "--gallery", str(gallery_path), "--item", "img_0"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"item_id", "mean_regional_to_global", "mean_crop_to_global", "per_tag"}

    def test_export_projection(self, tmp_path, rng, capsys):
        gallery_path = self.write_mixed_gallery(tmp_path, rng)
        out = tmp_path / "proj.csv"
        code = main(["export-projection", "--gallery", str(gallery_path), "--out", str(out)])
        assert code == 0
        assert "9 embedding rows" in capsys.readouterr().out

    def test_idempotent_outputs(self, tmp_path, rng):
        gallery_path = self.write_mixed_gallery(tmp_path, rng)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simmat", "--gallery", str(gallery_path), "--item", "img_0", "--out", str(a)])
        main(["simmat", "--gallery", str(gallery_path), "--item", "img_0", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()
