"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 data/format error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock

from . import __version__
from .corpus import read_manifest, training_set, write_synthetic_corpus
from .descriptor import FeatureParams, GaborBankParams, read_minutiae
from .errors import FormatError, FPIndexError
from .evaluate import DEFAULT_GRID, bench_search, pr_er_curve, write_curve_csv
from .gallery import Gallery, enroll
from .imaging import EnhanceParams, read_pgm
from .indexvec import build_index
from .template import MatchGates
from .training import load_codebook, load_transform, save_codebook, save_transform, train_models

log = logging.getLogger("fpindex")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration -----------------------------------------------------------

@dataclasses.dataclass
class Config:
    features: FeatureParams = dataclasses.field(default_factory=FeatureParams)
    gates: MatchGates = dataclasses.field(default_factory=MatchGates)
    grid: tuple[float, ...] = DEFAULT_GRID


def _block(cls, values: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"config [{name}]: unknown keys {sorted(unknown)}")
    if "frequencies" in values:
        values = dict(values, frequencies=tuple(values["frequencies"]))
    return cls(**values)


def load_config(path: str | None) -> Config:
    """Parameter blocks from a JSON file: ``enhance``, ``gabor``, ``gates``, ``grid``."""
    if not path:
        return Config()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(doc) - {"enhance", "gabor", "gates", "grid"}
    if unknown:
        raise UsageError(f"config: unknown sections {sorted(unknown)}")
    enh = _block(EnhanceParams, doc.get("enhance", {}), "enhance")
    gab = _block(GaborBankParams, doc.get("gabor", {}), "gabor")
    try:
        enh.validate()
        gab.validate()
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from exc
    cfg = Config(FeatureParams(enh, gab), _block(MatchGates, doc.get("gates", {}), "gates"))
    if "grid" in doc:
        cfg.grid = _parse_grid(",".join(str(v) for v in doc["grid"]))
    return cfg


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad penetration grid {text!r}") from exc
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise UsageError(f"penetration grid values must lie in (0, 1], got {text!r}")
    return tuple(sorted(set(vals)))


def _pr(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"penetration rate must be in (0, 1], got {text}")
    return v


def _impression(arg: str, dpi: float):
    """``IMAGE[:MINUTIAE]``; minutiae default to the image path with ``.fpmin``."""
    image, _, mins = arg.partition(":")
    mins = mins or str(Path(image).with_suffix(".fpmin"))
    return read_pgm(image, dpi), read_minutiae(mins)


@contextmanager
def _locked(gallery: str):
    with FileLock(f"{gallery}.lock", timeout=60):
        yield


def _models(args):
    return load_transform(args.transform), load_codebook(args.codebook)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args, cfg: Config) -> int:
    manifest = write_synthetic_corpus(args.out_dir, args.fingers, args.impressions, args.seed)
    print(f"manifest={manifest}")
    print(f"fingers={args.fingers} impressions={args.impressions}")
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    entries = read_manifest(args.manifest)
    samples = []
    for e in entries:
        img, mins, labels = e.load(args.dpi)
        samples.append((e.subject_id, img, mins, labels))
    feats, ids = training_set(samples, cfg.features)
    log.info("extracted %d Gabor features from %d impressions", len(feats), len(entries))
    t, cb, rep = train_models(feats, ids, args.pca_dim, args.lda_dim, args.k, args.seed, args.max_iter, args.tol)
    save_transform(args.out_transform, t)
    save_codebook(args.out_codebook, cb)
    print(f"samples={rep.n_features} labeled={rep.n_labeled} classes={rep.n_classes}")
    print(f"kmeans_iterations={rep.n_iter} inertia={rep.inertia:.6f}")
    return EXIT_OK


def cmd_enroll(args, cfg: Config) -> int:
    t, cb = _models(args)
    impressions = [_impression(s, args.dpi) for s in args.impressions]
    with _locked(args.gallery):
        g = Gallery.load(args.gallery) if Path(args.gallery).exists() else Gallery(cb.k)
        rec = enroll(g, args.subject_id, impressions, t, cb, cfg.features, cfg.gates)
        g.save(args.gallery)
    print(f"enrolled={rec.subject_id} minutiae={len(rec.template)} source_count={rec.template.source_count}")
    return EXIT_OK


def cmd_identify(args, cfg: Config) -> int:
    t, cb = _models(args)
    img, mins = _impression(args.impression, args.dpi)
    query = build_index(img, mins, t, cb, cfg.features)
    with _locked(args.gallery):
        g = Gallery.load(args.gallery)
    for sid, dist in g.search(query, args.pr).ranked:
        print(f"{sid} {dist:.6f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: Config) -> int:
    t, cb = _models(args)
    grid = _parse_grid(args.grid) if args.grid else cfg.grid
    queries = []
    for e in read_manifest(args.queries):
        img, mins, _ = e.load(args.dpi)
        queries.append((build_index(img, mins, t, cb, cfg.features), e.subject_id))
    with _locked(args.gallery):
        g = Gallery.load(args.gallery)
    curve = pr_er_curve(g, queries, grid)
    write_curve_csv(args.out, curve)
    print(f"curve={args.out} queries={curve.n_queries}")
    if not args.no_plot:
        from .report import plot_pr_er

        fig = Path(args.out).with_suffix(".png")
        plot_pr_er([("", curve)], fig)
        print(f"figure={fig}")
    if args.bench_reps:
        stats = bench_search(g, [q for q, _ in queries], args.bench_reps)
        sys.stdout.write(stats.report())
    return EXIT_OK


def cmd_gallery_inspect(args, cfg: Config) -> int:
    with _locked(args.gallery):
        g = Gallery.load(args.gallery)
    print(f"k={g.k} records={len(g)}")
    for r in g:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(r.enrolled_at))
        print(f"{r.subject_id} minutiae={len(r.template)} source_count={r.template.source_count} enrolled_at={stamp}")
    return EXIT_OK


def cmd_gallery_remove(args, cfg: Config) -> int:
    with _locked(args.gallery):
        g = Gallery.load(args.gallery)
        g.remove(args.subject_id)
        g.save(args.gallery)
    print(f"removed={args.subject_id}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fpindex", description="Fingerprint indexing with minutia descriptors and clustering.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--config", help="JSON file with enhance/gabor/gates/grid blocks")
    p.add_argument("--dpi", type=float, default=500.0, help="resolution of input images (default 500)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("out_dir")
    s.add_argument("--fingers", type=int, default=50)
    s.add_argument("--impressions", type=int, default=4)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="learn the descriptor transform and codebook")
    s.add_argument("manifest")
    s.add_argument("--out-transform", required=True)
    s.add_argument("--out-codebook", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--k", type=int, default=200)
    s.add_argument("--pca-dim", type=int, default=30)
    s.add_argument("--lda-dim", type=int, default=25)
    s.add_argument("--max-iter", type=int, default=300)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_train)

    def models(sp):
        sp.add_argument("--transform", required=True)
        sp.add_argument("--codebook", required=True)

    s = sub.add_parser("enroll", help="enroll one finger from one or more impressions")
    s.add_argument("gallery")
    s.add_argument("subject_id")
    s.add_argument("impressions", nargs="+", metavar="IMAGE[:MINUTIAE]")
    models(s)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("identify", help="rank enrolled fingers for a query impression")
    s.add_argument("gallery")
    s.add_argument("impression", metavar="IMAGE[:MINUTIAE]")
    s.add_argument("--pr", type=_pr, default=1.0, help="penetration rate in (0, 1]")
    models(s)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("evaluate", help="penetration-rate vs error-rate curve")
    s.add_argument("gallery")
    s.add_argument("queries", help="manifest of query impressions")
    s.add_argument("--out", required=True, help="CSV output; a PNG figure is written alongside")
    s.add_argument("--grid", help="comma-separated penetration rates")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--bench-reps", type=int, default=0, help="also time the search this many times per query")
    models(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gallery", help="gallery maintenance")
    gsub = s.add_subparsers(dest="gallery_command", required=True, parser_class=_Parser)
    gi = gsub.add_parser("inspect", help="list enrolled records")
    gi.add_argument("gallery")
    gi.set_defaults(func=cmd_gallery_inspect)
    gr = gsub.add_parser("remove", help="delete one record")
    gr.add_argument("gallery")
    gr.add_argument("subject_id")
    gr.set_defaults(func=cmd_gallery_remove)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not (math.isfinite(args.dpi) and args.dpi > 0):
        print("fpindex: error: --dpi must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"fpindex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, UnicodeDecodeError) as exc:
        print(f"fpindex: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FPIndexError as exc:
        print(f"fpindex: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
