"""Command-line entry point exposing the full pipeline as subcommands.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure.
All randomness flows through an explicit --seed; outputs are byte-identical
across runs unless a timestamp is requested (omit --deterministic).
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone

from . import analysis, benchbuilder, embedstore, retrieval, trainer
from .errors import SembError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semb",
        description="Multi-embedding retrieval engine, trainer, and benchmark tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="validate a SEMB file and rewrite it")
    p.add_argument("--embeddings", required=True, help="input SEMB file")
    p.add_argument("--out", required=True, help="output SEMB file")
    p.add_argument(
        "--normalize",
        action="store_true",
        help="scale every embedding to unit L2 norm and record the flag",
    )
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("eval", help="rank queries against a gallery and report recall")
    p.add_argument("--gallery", required=True, help="SEMB gallery file")
    p.add_argument("--queries", required=True, help="JSON-Lines query set")
    p.add_argument("--k", default="1,5,10", help="comma-separated recall cutoffs")
    p.add_argument(
        "--tier-field",
        default=None,
        help="query field holding the tier name; groups the report by it",
    )
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--threads", type=int, default=1, help="parallel search workers")
    p.add_argument(
        "--deterministic",
        action="store_true",
        help="omit the generated_at timestamp from the JSON report",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="fit the linear adapter on regional pairs")
    p.add_argument("--data", required=True, help="JSON-Lines training samples")
    p.add_argument("--checkpoint", required=True, help="output SADP checkpoint")
    p.add_argument("--loss-curve", default=None, help="write per-epoch loss CSV here")
    p.add_argument("--tau", type=float, default=0.05, help="softmax temperature")
    p.add_argument("--lr", type=float, default=0.5, help="learning rate")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--region-choice",
        default="random",
        help="'random' or a fixed region label (e.g. left_upper)",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="accepted for interface uniformity; training math is single-threaded",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tier", help="emit full_res/zoom2/zoom3 crops per sample")
    p.add_argument("--annotations", required=True, help="annotation JSON-Lines")
    p.add_argument("--out", default=None, help="output JSON-Lines (default: stdout)")
    p.set_defaults(func=cmd_tier)

    p = sub.add_parser("filter", help="automatic keep/reject/flag verdicts")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", default=None, help="output JSON-Lines (default: stdout)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stats", help="caption/bbox/mask distributions")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", default=None, help="output JSON (default: stdout)")
    p.add_argument(
        "--hist-csv",
        default=None,
        help="prefix for per-histogram CSV files (<prefix>_caption_len.csv, ...)",
    )
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("simmat", help="cosine matrix between two embedding groups")
    p.add_argument("--gallery", required=True)
    p.add_argument("--item", required=True, help="item id to analyse")
    p.add_argument("--rows", default="regional_prompt", help="source kind for rows")
    p.add_argument("--cols", default="crop", help="source kind for columns")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_simmat)

    p = sub.add_parser("proximity", help="per-item closeness to the global embedding")
    p.add_argument("--gallery", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--out", default=None, help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_proximity)

    p = sub.add_parser("export-projection", help="CSV of raw embeddings for plotting")
    p.add_argument("--gallery", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None, help="export only the first N items")
    p.set_defaults(func=cmd_export_projection)

    return parser


def cmd_build_index(args) -> int:
    gallery = embedstore.load_gallery(args.embeddings)
    if args.normalize:
        gallery = embedstore.normalize_gallery(gallery)
    embedstore.save_gallery(gallery, args.out)
    print(f"wrote {len(gallery.items)} items (dim {gallery.dim}) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ks = _parse_ks(args.k)
    if args.threads < 1:
        raise SembError(f"--threads must be >= 1, got {args.threads}")
    gallery = embedstore.load_gallery(args.gallery)
    queries = embedstore.load_queries(args.queries, tier_field=args.tier_field)
    report = retrieval.evaluate(gallery, queries, ks=ks, threads=args.threads)
    timestamp = None
    if not args.deterministic:
        timestamp = datetime.now(timezone.utc).isoformat()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(retrieval.report_json(report, timestamp))
    print(report.to_table())
    return EXIT_OK


def cmd_train(args) -> int:
    config = trainer.TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        tau=args.tau,
        seed=args.seed,
        momentum=args.momentum,
        region_choice=args.region_choice,
    )
    dataset = trainer.load_train_samples(args.data)
    params, curve = trainer.train_adapter(dataset, config)
    trainer.save_checkpoint(params, args.checkpoint)
    if args.loss_curve:
        with open(args.loss_curve, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
            for epoch, loss in enumerate(curve, 1):
                fh.write(f"{epoch},{loss!r}\n")
    print(f"trained {args.epochs} epochs; loss {curve[0]!r} -> {curve[-1]!r}")
    return EXIT_OK


def cmd_tier(args) -> int:
    samples = benchbuilder.load_annotations(args.annotations)
    rows = []
    for sample in samples:
        for tier in benchbuilder.build_tiers(sample):
            rows.append(
                json.dumps(
                    {
                        "image_id": sample.image_id,
                        "level": tier.level.value,
                        "crop": [tier.crop.x, tier.crop.y, tier.crop.w, tier.crop.h],
                    }
                )
            )
    _write_lines(args.out, rows)
    return EXIT_OK


def cmd_filter(args) -> int:
    samples = benchbuilder.load_annotations(args.annotations)
    rows = [
        json.dumps(
            {"image_id": s.image_id, "verdict": benchbuilder.auto_filter(s).value}
        )
        for s in samples
    ]
    _write_lines(args.out, rows)
    return EXIT_OK


def cmd_stats(args) -> int:
    samples = benchbuilder.load_annotations(args.annotations)
    report = benchbuilder.dataset_stats(samples)
    doc = report.to_json_dict()
    if not args.deterministic:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.hist_csv:
        benchbuilder.write_histogram_csv(
            f"{args.hist_csv}_caption_len.csv", report.caption_len_hist
        )
        benchbuilder.write_histogram_csv(
            f"{args.hist_csv}_bbox_ratio.csv", report.bbox_ratio_hist
        )
        if report.mask_count_hist is not None:
            benchbuilder.write_histogram_csv(
                f"{args.hist_csv}_mask_count.csv", report.mask_count_hist
            )
    return EXIT_OK


def cmd_simmat(args) -> int:
    gallery = embedstore.load_gallery(args.gallery)
    try:
        item = gallery.get(args.item)
    except KeyError:
        raise SembError(f"item {args.item!r} not found in gallery") from None
    rows = _group(item, args.rows)
    cols = _group(item, args.cols)
    matrix = analysis.similarity_matrix(rows, cols)
    analysis.write_matrix_csv(matrix, args.out)
    print(f"wrote {len(rows)}x{len(cols)} matrix to {args.out}")
    return EXIT_OK


def cmd_proximity(args) -> int:
    gallery = embedstore.load_gallery(args.gallery)
    try:
        item = gallery.get(args.item)
    except KeyError:
        raise SembError(f"item {args.item!r} not found in gallery") from None
    report = analysis.global_proximity_report(item)
    text = json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_projection(args) -> int:
    gallery = embedstore.load_gallery(args.gallery)
    items = gallery.items
    if args.limit is not None:
        if args.limit < 1:
            raise SembError(f"--limit must be >= 1, got {args.limit}")
        items = items[: args.limit]
    rows = analysis.export_projection_input(items, args.out, normalized=gallery.normalized)
    print(f"wrote {rows} embedding rows to {args.out}")
    return EXIT_OK


def _group(item, kind_name: str):
    try:
        kind = embedstore.SourceKind.from_name(kind_name)
    except ValueError as exc:
        raise SembError(str(exc)) from None
    group = [(tag.label, vec) for tag, vec in item.vectors_for(kind)]
    if not group:
        raise SembError(f"item {item.item_id!r} has no {kind.tag_name} embeddings")
    return group


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise SembError(f"--k must be comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise SembError(f"--k values must be >= 1, got {text!r}")
    if len(set(ks)) != len(ks):
        raise SembError(f"--k contains duplicates: {text!r}")
    return ks


def _write_lines(out_path, rows) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(row + "\n")
    else:
        for row in rows:
            print(row)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SembError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
