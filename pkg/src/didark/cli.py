"""Batch entry points: stats, simulate, glyphs, train, infer, eval, eval-text.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric or training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import fit_pair_stats, load_paired_dataset, sample_stats_subset, write_glyph_dataset
from .degrade import DegradeParams, simulate_lowlight
from .errors import ArgumentError, DomainError, FitError, NumericError
from .imagecore import Domain, Image, linear_to_srgb, read_png, srgb_decode, srgb_to_linear, write_png
from .metrics import exposure_consistency, ned, normalize_word, one_minus_ned, psnr, ssim, word_accuracy
from .normalize import load_stats, save_stats
from .pipeline import prepare_input

log = logging.getLogger("didark")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pngs(d: Path) -> list[Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"no such directory: {d}")
    return sorted((p for p in d.iterdir() if p.is_file() and p.suffix.lower() == ".png"),
                  key=lambda p: p.name.encode("utf-8"))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# --- subcommands ------------------------------------------------------------


def cmd_stats(args) -> int:
    from .plots import plot_stats_histogram

    pairs = load_paired_dataset(args.data)
    if not pairs:
        raise ArgumentError(f"{args.data}: no usable pairs")
    subset = sample_stats_subset(pairs, args.n, np.random.default_rng(args.seed))
    stats = fit_pair_stats(subset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_stats(stats, out)
    linear = {
        "lowlight": np.concatenate([srgb_decode(lo.data).ravel() for lo, _ in subset]),
        "welllit": np.concatenate([srgb_decode(hi.data).ravel() for _, hi in subset]),
    }
    plot_stats_histogram(linear, stats, _sibling(out, ".hist.png"))
    for k, s in sorted(stats.items()):
        log.info("%s: mu=%.6f sigma=%.6f from %d images", k, s.mu, s.sigma, s.sample_count)
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ArgumentError(f"expected comma-separated numbers, got {text!r}") from exc


def _simulate_dir(files: list[Path], out: Path, params: DegradeParams, bits: int) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(files):
        rng = np.random.default_rng([params.seed, i])
        write_png(simulate_lowlight(read_png(f), params, rng), out / f.name, bits=bits)
        names.append(f.name)
    manifest = {**params.to_dict(), "files": names, "bits": bits}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return names


def cmd_simulate(args) -> int:
    files = _pngs(Path(args.inp))
    out = Path(args.out)
    grid = args.brightness_list is not None or args.noise_list is not None
    if not grid:
        _simulate_dir(files, out, DegradeParams(args.brightness, args.noise, args.seed), args.bits)
        return EXIT_OK
    levels_b = _float_list(args.brightness_list) if args.brightness_list else [args.brightness]
    levels_n = _float_list(args.noise_list) if args.noise_list else [args.noise]
    settings = [DegradeParams(b, n, args.seed) for b in levels_b for n in levels_n]
    rows = []
    for p in settings:
        sub = f"b{p.brightness:g}_n{p.noise_level:g}"
        _simulate_dir(files, out / sub, p, args.bits)
        rows.append([sub, p.brightness, p.noise_level, p.seed])
    _write_csv(out / "grid.csv", ["directory", "brightness", "noise_level", "seed"], rows)
    return EXIT_OK


def cmd_glyphs(args) -> int:
    write_glyph_dataset(args.out, args.count, args.seed, DegradeParams(args.brightness, args.noise, args.seed))
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import load_run_config
    from .plots import plot_loss_curve
    from .train import PairDataset, train_loop

    denoiser_cfg, diffusion_cfg, train_cfg = load_run_config(args.config)
    stats = load_stats(args.stats)
    if set(stats) != {"lowlight", "welllit"}:
        raise ArgumentError(f"{args.stats}: expected lowlight and welllit entries")
    pairs = load_paired_dataset(args.data)
    dataset = PairDataset(pairs, stats["lowlight"], stats["welllit"])
    out = Path(args.out)
    log_path = _sibling(out, ".loss.csv")
    every = max(1, train_cfg.iterations // 20)

    def progress(it, comp):
        if (it + 1) % every == 0 or it == 0:
            log.info("iteration %d/%d loss %.5f", it + 1, train_cfg.iterations, float(comp.total.detach()))

    result = train_loop(dataset, denoiser_cfg, diffusion_cfg, train_cfg, log_path, out, progress=progress)
    plot_loss_curve(result.losses, _sibling(out, ".loss.png"))
    return EXIT_OK


def _scale_output(img: Image, factor: float) -> Image:
    lin = srgb_to_linear(img).data * factor
    return linear_to_srgb(Image(np.clip(lin, 0.0, 1.0), Domain.LINEAR))


def cmd_infer(args) -> int:
    from .train import load_checkpoint

    if args.samples < 1:
        raise ArgumentError("--samples must be >= 1")
    if args.scale_output <= 0:
        raise ArgumentError("--scale-output must be positive")
    src, dst = Path(args.inp), Path(args.out)
    if src.is_dir():
        jobs = [(f, dst / f.name) for f in _pngs(src)]
    else:
        if not src.is_file():
            raise FileNotFoundError(f"no such file: {src}")
        jobs = [(src, dst)]
    cascade = load_checkpoint(args.ckpt).cascade()
    for f, target in jobs:
        outs = cascade(read_png(f), seed=args.seed, ilvr=not args.no_ilvr, samples=args.samples)
        for k, img in enumerate(outs):
            if args.scale_output != 1.0:
                img = _scale_output(img, args.scale_output)
            path = target if args.samples == 1 else _sibling(target, f"_s{k}.png")
            write_png(img, path, bits=args.bits)
        log.info("%s -> %s", f, target)
    return EXIT_OK


def _read_scores(path: str) -> tuple[list[str], dict[str, list[str]]]:
    """Per-image external scores: a CSV whose first column names the image."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or len(rows[0]) < 2:
        raise ArgumentError(f"{path}: expected a header row with an image column and at least one score")
    header, table = rows[0][1:], {}
    for r in rows[1:]:
        if len(r) != len(header) + 1:
            raise ArgumentError(f"{path}: row {r!r} has {len(r)} fields, expected {len(header) + 1}")
        try:
            [float(v) for v in r[1:]]
        except ValueError as exc:
            raise ArgumentError(f"{path}: non-numeric score in row {r!r}") from exc
        table[r[0]] = r[1:]
    return header, table


def cmd_eval(args) -> int:
    from .plots import plot_eval

    extra, scores = _read_scores(args.scores) if args.scores else ([], {})

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = _pngs(pred_dir)
    if not preds:
        raise ArgumentError(f"{pred_dir}: no predictions")
    rows, names, ps, ss = [], [], [], []
    for f in preds:
        g = gt_dir / f.name
        if not g.is_file():
            raise FileNotFoundError(f"no ground truth for {f.name} in {gt_dir}")
        pred, gt = read_png(f), read_png(g)
        if gt.shape != pred.shape:
            gt = prepare_input(gt, pred.height) if pred.height == pred.width else gt
        if gt.shape != pred.shape:
            raise ArgumentError(f"{f.name}: prediction {pred.shape[:2]} vs ground truth {gt.shape[:2]}")
        p, s = psnr(pred, gt), ssim(pred, gt)
        e_pred, e_gt = exposure_consistency(pred), exposure_consistency(gt)
        if extra and f.name not in scores:
            raise ArgumentError(f"{args.scores}: no scores for {f.name}")
        rows.append([f.name, _fmt(p), _fmt(s), _fmt(e_pred), _fmt(e_gt), *scores.get(f.name, [])])
        names.append(f.stem)
        ps.append(p)
        ss.append(s)
    means = np.mean([[float(v) for v in r[1:]] for r in rows], axis=0)
    rows.append(["mean", *(_fmt(v) for v in means)])
    report = Path(args.report)
    _write_csv(report, ["image", "psnr_db", "ssim", "exposure_pred", "exposure_gt", *extra], rows)
    plot_eval(names, ps, ss, _sibling(report, ".png"))
    log.info("mean PSNR %.3f dB, SSIM %.4f over %d images", means[0], means[1], len(preds))
    return EXIT_OK


def _read_words(path: str) -> list[str]:
    return [line.rstrip("\r\n") for line in Path(path).read_text(encoding="utf-8").splitlines()]


def cmd_eval_text(args) -> int:
    preds, gts = _read_words(args.pred), _read_words(args.gt)
    if len(preds) != len(gts):
        raise ArgumentError(f"{len(preds)} predictions but {len(gts)} ground-truth words")
    rows = [["word_accuracy", _fmt(word_accuracy(preds, gts))],
            ["one_minus_ned", _fmt(one_minus_ned(preds, gts))],
            ["count", str(len(gts))]]
    _write_csv(Path(args.report), ["metric", "value"], rows)
    if args.details:
        detail = [[i, p, g, int(normalize_word(p) == normalize_word(g)),
                   _fmt(1.0 - ned(normalize_word(p), normalize_word(g)))]
                  for i, (p, g) in enumerate(zip(preds, gts))]
        _write_csv(Path(args.details), ["index", "pred", "gt", "correct", "one_minus_ned"], detail)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="didark", description="Low-light reconstruction with a multi-scale conditional diffusion model.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stats", help="fit tail-normalization stats on a paired dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("simulate", help="write dimmed, noised copies of a directory of PNGs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--brightness", type=float, default=0.4)
    s.add_argument("--noise", type=float, default=0.25)
    s.add_argument("--brightness-list", help="comma-separated brightness sweep")
    s.add_argument("--noise-list", help="comma-separated noise-level sweep")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("glyphs", help="generate the synthetic paired dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--brightness", type=float, default=0.4)
    s.add_argument("--noise", type=float, default=0.25)
    s.set_defaults(func=cmd_glyphs)

    s = sub.add_parser("train", help="train the denoiser and write a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", required=True, help="flat JSON of config overrides")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="reconstruct well-lit images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True, help="PNG file or directory")
    s.add_argument("--out", required=True, help="PNG file or directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-ilvr", action="store_true")
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--scale-output", type=float, default=1.0, help="linear-light gain applied to the output")
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR/SSIM/exposure-consistency report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--scores", help="CSV of externally computed per-image scores to merge into the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("eval-text", help="word accuracy and 1-NED from one-word-per-line files")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--details", help="optional per-word CSV")
    s.set_defaults(func=cmd_eval_text)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (NumericError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArgumentError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())
