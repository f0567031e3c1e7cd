"""Command-line entry point: ``gbmstrat <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 training error.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from ._io import atomic_write
from .errors import NotFound, PipelineError

log = logging.getLogger("gbmstrat")

USAGE_ERROR = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML pipeline config")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--threads", type=int, help="worker count (results do not depend on it)")
    p.add_argument("--out-dir", type=Path, help="output directory (overrides config)")


def _cfg(args):
    from .config import load_config

    return load_config(args.config, seed=args.seed, threads=args.threads, out_dir=args.out_dir)


def _coords_from(path) -> list:
    """Coordinates from a patches.jsonl file or the kept entries of a curation report."""
    from .curation import read_report
    from .tissue_seg import PatchCoord

    path = Path(path)
    if not path.is_file():
        raise NotFound(f"coordinate file not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and "n_patches" in json.loads(lines[0]):
        return read_report(path).kept_coords
    return [PatchCoord.from_dict(json.loads(ln)) for ln in lines]


def _open(path):
    from .slide_io import open_bundle

    return open_bundle(path)


def cmd_segment(args) -> int:
    from .tissue_seg import segment_tissue

    cfg = _cfg(args)
    slide = _open(args.bundle)
    tm = segment_tissue(slide, cfg.segmentation, threads=cfg.threads)
    out = Path(args.out or cfg.out_dir / "segment" / slide.slide_id)
    buf = io.BytesIO()
    Image.fromarray((tm.mask * 255).astype(np.uint8)).save(buf, format="PNG")
    atomic_write(out / "mask.png", buf.getvalue())
    doc = {"slide_id": slide.slide_id, "level": tm.level, "factor": tm.factor,
           "contours": [{"outer": c.outer.tolist(), "holes": [h.tolist() for h in c.holes]} for c in tm.contours]}
    atomic_write(out / "contours.json", json.dumps(doc) + "\n")
    print(f"{slide.slide_id}: {len(tm.contours)} contour(s), mask {tm.shape[1]}x{tm.shape[0]} -> {out}")
    return 0


def cmd_patch(args) -> int:
    from .tissue_seg import enumerate_patches, segment_tissue

    cfg = _cfg(args)
    slide = _open(args.bundle)
    tm = segment_tissue(slide, cfg.segmentation, threads=cfg.threads)
    coords = enumerate_patches(tm, slide, four_corner=args.four_corner or cfg.segmentation.four_corner)
    out = Path(args.out or cfg.out_dir / "patch" / f"{slide.slide_id}.patches.jsonl")
    atomic_write(out, "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in coords))
    print(f"{slide.slide_id}: {len(coords)} patches -> {out}")
    return 0


def cmd_curate(args) -> int:
    from .colorops import StainMatrix
    from .curation import curate
    from .tissue_seg import enumerate_patches, segment_tissue

    cfg = _cfg(args)
    slide = _open(args.bundle)
    if args.coords:
        coords = _coords_from(args.coords)
    else:
        coords = enumerate_patches(segment_tissue(slide, cfg.segmentation, cfg.threads), slide)
    stains = StainMatrix.load(args.stains) if args.stains else None
    report = curate(slide, coords, cfg.curation, stains, threads=cfg.threads)
    out = Path(args.out or cfg.out_dir / "curate" / f"{slide.slide_id}.curation.jsonl")
    report.write(out)
    print(f"{slide.slide_id}: kept {len(report.kept_coords)} of {len(report.records)} -> {out}")
    return 0


def cmd_features(args) -> int:
    from .features import PatchBag, extract_baseline_features, import_external_features, write_bag
    from .slide_io import read_patch

    cfg = _cfg(args)
    if args.kind == "baseline":
        if not args.bundle or not args.coords:
            args.parser.error("features baseline needs --bundle and --coords")
        slide = _open(args.bundle)
        coords = _coords_from(args.coords)
        rows = [extract_baseline_features(read_patch(slide, c.x, c.y, c.patch_size, c.read_downsample))
                for c in coords]
        feats = np.vstack(rows) if rows else np.empty((0, 1024), dtype=np.float32)
        bag = PatchBag(slide.slide_id, feats, coords)
    else:
        if not args.matrix or not args.coords or not args.slide_id:
            args.parser.error("features import needs --matrix, --coords and --slide-id")
        bag = import_external_features(args.matrix, args.coords, args.slide_id, args.dim)
    out = Path(args.out or cfg.out_dir / "features" / f"{bag.slide_id}.pbag")
    write_bag(bag, out)
    print(f"{bag.slide_id}: {bag.n} x {bag.dim} -> {out}")
    return 0


def _fold_split(cfg, cases, fold):
    from .evaluation.cohort import labelled
    from .evaluation.splits import monte_carlo_splits

    cohort = labelled(cases)
    splits = monte_carlo_splits(cohort, max(cfg.n_folds, fold + 1), cfg.seed)
    return cohort, splits[fold]


def _cases(cfg):
    from .evaluation.cohort import load_cohort

    cfg.validate(need_manifest=True)
    return load_cohort(cfg.manifest, cfg.clinical, cfg.bags_dir)


def cmd_train_mil(args) -> int:
    import dataclasses

    from .evaluation.cohort import check_resolvable
    from .features import read_bag
    from .mil.checkpoint import write_checkpoint, write_history
    from .mil.train import fit

    cfg = _cfg(args)
    cohort, split = _fold_split(cfg, _cases(cfg), args.fold)
    check_resolvable(cohort, True, False)
    by_id = {c.case_id: c for c in cohort}
    hyper = dataclasses.replace(cfg.mil, seed=cfg.seed + args.fold)
    items = {cid: (read_bag(by_id[cid].bag_path), by_id[cid].label_code) for cid in split.train + split.val}
    model, history = fit([items[c] for c in split.train], [items[c] for c in split.val], hyper)
    out = Path(args.out or cfg.out_dir / "train-mil" / f"fold_{args.fold}" / "mil.milc")
    write_checkpoint(model, out, hyper)
    write_history(history, out.with_name("mil_history.csv"))
    best = max((h["val_auc"] for h in history), default=float("nan"))
    print(f"fold {args.fold}: {len(history)} epochs, best val AUC {best:.4f} -> {out}")
    return 0


def cmd_heatmap(args) -> int:
    from .features import read_bag
    from .heatmap import render_heatmap
    from .mil.checkpoint import read_checkpoint
    from .mil.train import predict

    cfg = _cfg(args)
    slide = _open(args.bundle)
    bag = read_bag(args.bag)
    model, _ = read_checkpoint(args.checkpoint)
    pred = predict(model, bag)
    out = Path(args.out or cfg.out_dir / "heatmap" / f"{slide.slide_id}.heatmap.png")
    render_heatmap(slide, bag.coords, pred["attention"], cfg.heatmap, out)
    print(f"{slide.slide_id}: P(long)={pred['probability_long']:.4f} -> {out}")
    return 0


def cmd_train_clinical(args) -> int:
    import dataclasses

    from .clinical.gbdt import feature_gain_importance, train_gbdt
    from .evaluation.cohort import check_resolvable

    cfg = _cfg(args)
    cohort, split = _fold_split(cfg, _cases(cfg), args.fold)
    check_resolvable(cohort, False, True)
    by_id = {c.case_id: c for c in cohort}
    hyper = dataclasses.replace(cfg.gbdt, seed=cfg.seed + args.fold)
    recs = {k: [by_id[c].clinical for c in getattr(split, k)] for k in ("train", "val")}
    ys = {k: [by_id[c].label_code for c in getattr(split, k)] for k in ("train", "val")}
    model, history = train_gbdt(recs["train"], ys["train"], hyper, eval_set=(recs["val"], ys["val"]))
    out = Path(args.out or cfg.out_dir / "train-clinical" / f"fold_{args.fold}" / "gbdt.json")
    model.save(out)
    atomic_write(out.with_name("gbdt_dump.txt"), model.dump_text())
    gains = feature_gain_importance(model)
    atomic_write(out.with_name("gain_importance.csv"),
                 "feature,gain\n" + "".join(f"{n},{g!r}\n" for n, g in gains))
    print(f"fold {args.fold}: {len(model.trees)} trees -> {out}")
    for name, gain in gains[:5]:
        print(f"  {name:<28s} {gain:.4f}")
    return 0


def cmd_shap(args) -> int:
    from .clinical.gbdt import GbdtModel
    from .evaluation.cohort import check_resolvable, labelled
    from .treeshap import interactions_csv, shap_csv

    cfg = _cfg(args)
    model = GbdtModel.load(args.model) if Path(args.model).is_file() else None
    if model is None:
        raise NotFound(f"model not found: {args.model}")
    cohort = labelled(_cases(cfg))
    check_resolvable(cohort, False, True)
    records = [c.clinical for c in cohort]
    ids = [c.case_id for c in cohort]
    mode = args.mode or cfg.shap_mode
    pair = tuple(args.pair.split(",")) if args.pair else cfg.shap_pair
    out = Path(args.out or cfg.out_dir / "shap")
    atomic_write(out / "shap.csv", shap_csv(model, records, ids, mode, background=records))
    atomic_write(out / "shap_interactions.csv", interactions_csv(model, records, pair, ids))
    print(f"{len(ids)} cases, mode {mode}, pair {pair[0]} x {pair[1]} -> {out}")
    return 0


def _print_reports(reports) -> None:
    for m, rep in reports.items():
        mean = rep.mean
        print(f"{m:<9s} val AUC {mean['val_auc']:.3f} acc {mean['val_acc']:.3f} | "
              f"test AUC {mean['test_auc']:.3f} acc {mean['test_acc']:.3f}")


def cmd_evaluate(args) -> int:
    from .evaluation.experiment import run_experiment

    cfg = _cfg(args)
    reports = run_experiment(cfg, (args.model,))
    _print_reports(reports)
    print(f"wrote {Path(cfg.out_dir) / f'table_{args.model}.csv'}")
    return 0


def cmd_subgroup(args) -> int:
    from .evaluation.experiment import subgroup_run

    cfg = _cfg(args)
    rows = subgroup_run(cfg, args.criterion)
    for r in rows:
        print(f"{r['criterion']}={r['subgroup']} (n={r['n_samples']}): imaging {r['imaging_auc']:.3f}, "
              f"clinical {r['clinical_auc']:.3f}, fusion {r['fusion_auc']:.3f}")
    print(f"wrote {Path(cfg.out_dir) / 'table_subgroups.csv'}")
    return 0


def cmd_make_fixtures(args) -> int:
    from .fixtures import make_fixtures

    out = make_fixtures(args.out, seed=args.seed or 0, variant=args.variant, with_slide=not args.no_slide)
    print(f"fixtures -> {out} (config: {out / 'config.toml'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gbmstrat", description="Glioblastoma survival stratification pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)

    p = sub.add_parser("segment", help="tissue mask and contours for a slide bundle")
    p.add_argument("bundle", type=Path)
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("patch", help="enumerate tissue patch coordinates")
    p.add_argument("bundle", type=Path)
    p.add_argument("--four-corner", action="store_true", help="require all four corners on tissue")
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_patch)

    p = sub.add_parser("curate", help="artifact and background filtering of patches")
    p.add_argument("bundle", type=Path)
    p.add_argument("--coords", type=Path, help="patches.jsonl (default: segment and enumerate)")
    p.add_argument("--stains", type=Path, help="stains.json override")
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("features", help="build a feature bag")
    p.add_argument("kind", choices=("baseline", "import"))
    p.add_argument("--bundle", type=Path)
    p.add_argument("--coords", type=Path, help="patches.jsonl or curation report")
    p.add_argument("--matrix", type=Path, help="raw float32 feature matrix (import)")
    p.add_argument("--slide-id")
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_features, parser=p)

    p = sub.add_parser("train-mil", help="train the attention MIL model on one fold")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_train_mil)

    p = sub.add_parser("heatmap", help="attention heatmap overlay")
    p.add_argument("bundle", type=Path)
    p.add_argument("--bag", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("train-clinical", help="train the gradient-boosted clinical model on one fold")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_train_clinical)

    p = sub.add_parser("shap", help="Shapley attributions for a trained clinical model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--mode", choices=("path-dependent", "interventional"))
    p.add_argument("--pair", help="feature pair for interactions, e.g. age_years,sex")
    p.add_argument("--out", type=Path)
    _common(p)
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("evaluate", help="10-fold evaluation; writes table_<model>.csv")
    p.add_argument("model", choices=("imaging", "clinical", "fusion"))
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subgroup", help="per-subgroup 10-fold evaluation; writes table_subgroups.csv")
    p.add_argument("criterion", choices=("sex", "mgmt"))
    _common(p)
    p.set_defaults(func=cmd_subgroup)

    p = sub.add_parser("make-fixtures", help="write the synthetic cohort, bags, config and demo slide")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("default", "perfect-clinical"), default="default")
    p.add_argument("--no-slide", action="store_true")
    p.set_defaults(func=cmd_make_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"gbmstrat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gbmstrat {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
