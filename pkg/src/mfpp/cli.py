"""Command-line entry point: explain, segment, eval, bench.

All commands honor --seed and write their outputs under --out with fixed
filenames (saliency.f32, saliency.json, heatmap.png, manifest.json,
results.json) so runs are scriptable and replayable.  `explain` records a
RunManifest capturing the fully resolved configuration and input hashes;
feeding that manifest back (`explain --manifest ...`) reproduces the
saliency raster byte for byte.

Exit codes: 0 success, 1 user error (bad paths, invalid configuration),
2 runtime failure (transport errors, failed explain jobs).
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional

import click
import matplotlib
import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .engine import (
    ExplainConfig,
    SaliencyMap,
    saliency,
    saliency_from_batch,
)
from .errors import (
    ExplainJobError,
    InvalidConfigError,
    ProtocolError,
    TransportError,
)
from .evaluation import (
    accuracy_stddev,
    benchmark_time,
    load_coco,
    load_voc,
    pointing_game,
    synthetic_pointing_dataset,
)
from .masks import DEFAULT_LAYER_FRAGMENTS, PyramidConfig, gen_grid_masks
from .predictors import RemotePredictor, ToyPredictorSpec, make_toy
from .segmentation import SlicParams, colorize_labels, slic_segment

_USER_ERRORS = (
    InvalidConfigError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    UnidentifiedImageError,
    KeyError,
    ValueError,
)
_RUNTIME_ERRORS = (TransportError, ProtocolError, ExplainJobError)


class _RuntimeFailure(click.ClickException):
    exit_code = 2


def _guard(fn):
    """Map package exceptions onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _RUNTIME_ERRORS as exc:
            raise _RuntimeFailure(str(exc)) from exc
        except _USER_ERRORS as exc:
            raise click.ClickException(str(exc)) from exc

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# shared helpers


def load_image(path, resize: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Read an image file as float32 RGB in [0, 1], optionally resized
    (plain bilinear resize, no letterboxing)."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resize is not None:
            h, w = resize
            im = im.resize((w, h), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def save_image(arr: np.ndarray, path) -> None:
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def render_heatmap(img: np.ndarray, values: np.ndarray, path,
                   alpha: float = 0.5) -> None:
    """Overlay a min-max normalized heatmap (display scaling only) on the
    image with a perceptually uniform colormap."""
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin
    norm = (values - vmin) / span if span > 0 else np.zeros_like(values)
    colored = matplotlib.colormaps["viridis"](norm)[..., :3]
    save_image((1.0 - alpha) * img + alpha * colored, path)


def parse_toy(spec: str) -> ToyPredictorSpec:
    """Parse 'constant:V[,V...]' or 'region_mean:y0,x0,y1,x1'."""
    kind, _, params = spec.partition(":")
    if kind == "constant":
        values = [float(v) for v in params.split(",")] if params else [1.0]
        return ToyPredictorSpec(kind="constant",
                                value=values[0] if len(values) == 1 else values)
    if kind == "region_mean":
        coords = tuple(int(v) for v in params.split(","))
        if len(coords) != 4:
            raise InvalidConfigError(
                "region_mean toy needs region_mean:y0,x0,y1,x1"
            )
        return ToyPredictorSpec(kind="region_mean", region=coords)
    raise InvalidConfigError(
        f"unknown toy predictor {spec!r} (use constant:V or "
        "region_mean:y0,x0,y1,x1)"
    )


def build_predictor(toy: Optional[str], url: Optional[str]):
    if toy and url:
        raise InvalidConfigError("pass either --toy or --url, not both")
    if toy:
        return make_toy(parse_toy(toy))
    return RemotePredictor(url=url)  # falls back to MFPP_MODEL_URL


def parse_layers(spec: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in spec.split(","))
    except ValueError as exc:
        raise InvalidConfigError(
            f"--layers expects comma-separated fragment counts, got {spec!r}"
        ) from exc


def parse_grid(spec: str) -> tuple[int, int]:
    try:
        gh, gw = spec.lower().split("x")
        return int(gh), int(gw)
    except ValueError as exc:
        raise InvalidConfigError(
            f"--grid expects ROWSxCOLS (e.g. 7x7), got {spec!r}"
        ) from exc


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_from_dict(d: dict) -> ExplainConfig:
    return ExplainConfig(
        pyramid=PyramidConfig(**d["pyramid"]),
        slic=SlicParams(**d["slic"]),
        normalization=d["normalization"],
        batch_size=d["batch_size"],
        target_class=d["target_class"],
    )


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.version_option(__version__, prog_name="mfpp")
def main():
    """Black-box saliency maps from multi-scale fragment perturbation."""


@main.command("explain")
@click.option("--image", "image_path", type=click.Path(), default=None,
              help="Input image (PNG/JPEG).")
@click.option("--resize", nargs=2, type=int, default=None,
              help="Resize input to H W before explaining.")
@click.option("--toy", default=None,
              help="In-process predictor, e.g. constant:1.")
@click.option("--url", default=None,
              help="Model server endpoint (default: $MFPP_MODEL_URL).")
@click.option("--target", default="top-1", show_default=True,
              help="Class index to explain, or top-1.")
@click.option("--masks", type=int, default=4000, show_default=True,
              help="Total number of masks across all layers.")
@click.option("--layers", default=",".join(map(str, DEFAULT_LAYER_FRAGMENTS)),
              show_default=True, help="Comma-separated fragment counts.")
@click.option("--keep-prob", type=float, default=0.5, show_default=True)
@click.option("--upscale", type=float, default=2.2, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--compactness", type=float, default=10.0, show_default=True)
@click.option("--normalization", default="expectation", show_default=True,
              type=click.Choice(["expectation", "empirical"]))
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Replay a previous run from its manifest.")
@click.option("--out", required=True, help="Output directory.")
@_guard
def cmd_explain(image_path, resize, toy, url, target, masks, layers,
                keep_prob, upscale, sigma, compactness, normalization,
                batch_size, seed, manifest_path, out):
    """Explain one image and write raster, heatmap, and manifest."""
    out_path = _out_dir(out)
    if manifest_path:
        manifest = json.loads(Path(manifest_path).read_text())
        image_path = manifest["image"]["path"]
        resize = manifest["image"]["resize"]
        resize = tuple(resize) if resize else None
        if _sha256(image_path) != manifest["image"]["sha256"]:
            raise InvalidConfigError(
                f"image {image_path} does not match the manifest hash"
            )
        toy = manifest["predictor"]["toy"]
        url = manifest["predictor"]["url"]
        cfg = _config_from_dict(manifest["explain"])
    else:
        if image_path is None:
            raise InvalidConfigError("--image is required without --manifest")
        target_class = target if target == "top-1" else int(target)
        cfg = ExplainConfig(
            pyramid=PyramidConfig(
                layer_fragment_counts=parse_layers(layers),
                upscale_offset=upscale,
                keep_prob=keep_prob,
                n_masks_total=masks,
                seed=seed,
            ),
            slic=SlicParams(sigma=sigma, compactness=compactness, seed=seed),
            normalization=normalization,
            batch_size=batch_size,
            target_class=target_class,
        )
    predictor = build_predictor(toy, url)
    img = load_image(image_path, resize)
    timings: dict = {}
    smap = saliency(img, predictor, cfg, timings=timings)
    smap.save(out_path / "saliency.f32")
    render_heatmap(img, smap.values, out_path / "heatmap.png")
    manifest = {
        "tool": "mfpp",
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.pyramid.seed,
        "image": {
            "path": str(Path(image_path).resolve()),
            "sha256": _sha256(image_path),
            "resize": list(resize) if resize else None,
        },
        "predictor": {
            "kind": "toy" if toy else "remote",
            "toy": toy,
            "url": url or os.environ.get("MFPP_MODEL_URL"),
        },
        "explain": dataclasses.asdict(cfg),
    }
    (out_path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(
        f"explained class {smap.target_class} with {smap.n_masks} masks "
        f"in {timings['total']:.2f}s -> {out_path}"
    )


@main.command("segment")
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--segments", "segment_counts", type=int, multiple=True,
              default=(100,), show_default=True,
              help="Fragment counts; repeat for several scales.")
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--compactness", type=float, default=10.0, show_default=True)
@click.option("--resize", nargs=2, type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@_guard
def cmd_segment(image_path, segment_counts, sigma, compactness, resize, seed,
                out):
    """Write colored fragment maps at the requested scales."""
    out_path = _out_dir(out)
    img = load_image(image_path, tuple(resize) if resize else None)
    for k in segment_counts:
        lm = slic_segment(
            img,
            SlicParams(n_segments=k, sigma=sigma, compactness=compactness,
                       seed=seed),
        )
        name = f"segments_k{k}_sigma{sigma:g}.png"
        Image.fromarray(colorize_labels(lm, seed=seed)).save(out_path / name)
        click.echo(f"k={k}: {lm.n_fragments} fragments -> {name}")


_METHODS = {
    # (n_masks, uses fragment pyramid)
    "mfpp": (20000, True),
    "fast-mfpp": (4000, True),
    "rise": (4000, False),
}


@main.command("eval")
@click.option("--method", type=click.Choice(sorted(_METHODS)),
              default="fast-mfpp", show_default=True)
@click.option("--dataset", type=click.Choice(["voc", "coco", "synthetic"]),
              default="synthetic", show_default=True)
@click.option("--ann-dir", type=click.Path(), default=None,
              help="VOC annotation directory.")
@click.option("--split", type=click.Path(), default=None,
              help="VOC split file of image ids.")
@click.option("--ann-json", type=click.Path(), default=None,
              help="COCO annotation JSON.")
@click.option("--images-dir", type=click.Path(), default=None)
@click.option("--class-map", type=click.Path(), default=None,
              help="JSON mapping class names to model class indices.")
@click.option("--toy", default=None)
@click.option("--url", default=None)
@click.option("--n-images", type=int, default=50, show_default=True,
              help="Synthetic dataset size.")
@click.option("--image-size", type=int, default=224, show_default=True)
@click.option("--square", type=int, default=56, show_default=True)
@click.option("--masks", type=int, default=None,
              help="Override the method's mask budget.")
@click.option("--layers", default=",".join(map(str, DEFAULT_LAYER_FRAGMENTS)),
              show_default=True)
@click.option("--grid", default="7x7", show_default=True,
              help="RISE cell grid, ROWSxCOLS.")
@click.option("--keep-prob", type=float, default=0.5, show_default=True)
@click.option("--upscale", type=float, default=2.2, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--tolerance", type=float, default=0.0, show_default=True,
              help="Per-side box dilation in pixels (15 = lenient protocol).")
@click.option("--include-difficult/--exclude-difficult", default=True,
              show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@_guard
def cmd_eval(method, dataset, ann_dir, split, ann_json, images_dir, class_map,
             toy, url, n_images, image_size, square, masks, layers, grid,
             keep_prob, upscale, sigma, tolerance, include_difficult,
             batch_size, repeats, seed, out):
    """Run the pointing game and write results.json + decisions.csv."""
    out_path = _out_dir(out)
    n_masks = masks if masks is not None else _METHODS[method][0]
    use_pyramid = _METHODS[method][1]
    grid_cells = parse_grid(grid)
    if repeats < 1:
        raise InvalidConfigError("--repeats must be >= 1")

    samples = _load_eval_samples(
        dataset, ann_dir, split, ann_json, images_dir, n_images, image_size,
        square, seed,
    )
    if not samples:
        raise InvalidConfigError("dataset is empty, nothing to evaluate")
    class_indices = (
        json.loads(Path(class_map).read_text()) if class_map else {}
    )

    shared_predictor = (
        None if dataset == "synthetic" else build_predictor(toy, url)
    )
    results = []
    for r in range(repeats):
        run_seed = seed + r
        maps = {}
        for img, gt in samples:
            for cls in gt.present_classes(include_difficult):
                predictor = shared_predictor or _planted_box_probe(gt, cls)
                target = class_indices.get(cls, 0)
                if use_pyramid:
                    cfg = ExplainConfig(
                        pyramid=PyramidConfig(
                            layer_fragment_counts=parse_layers(layers),
                            upscale_offset=upscale,
                            keep_prob=keep_prob,
                            n_masks_total=n_masks,
                            seed=run_seed,
                        ),
                        slic=SlicParams(sigma=sigma, seed=run_seed),
                        batch_size=batch_size,
                        target_class=target,
                    )
                    smap = saliency(img, predictor, cfg)
                else:
                    batch = gen_grid_masks(
                        n_masks, grid_cells, keep_prob, img.shape[:2],
                        seed=run_seed,
                    )
                    smap = saliency_from_batch(
                        img, predictor, batch, target_class=target,
                        batch_size=batch_size,
                    )
                maps[(gt.image_id, cls)] = smap
        results.append(
            pointing_game(maps, [gt for _, gt in samples],
                          tolerance=tolerance,
                          include_difficult=include_difficult)
        )

    final = results[0]
    final.stddev = accuracy_stddev([res.accuracy for res in results])
    payload = final.to_dict()
    payload["config"] = {
        "method": method,
        "dataset": dataset,
        "n_masks": n_masks,
        "repeats": repeats,
        "seed": seed,
        "tolerance": tolerance,
        "accuracies": [res.accuracy for res in results],
    }
    (out_path / "results.json").write_text(json.dumps(payload, indent=2))
    with open(out_path / "decisions.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["image_id", "class_name", "row", "col", "hit"]
        )
        writer.writeheader()
        writer.writerows(final.decisions)
    click.echo(
        f"{method} on {dataset}: accuracy {final.accuracy:.3f} "
        f"({final.hits}/{final.hits + final.misses})"
        + (f" +/- {final.stddev:.3f}" if repeats > 1 else "")
    )
    if final.config_errors:
        click.echo(f"{len(final.config_errors)} configuration errors",
                   err=True)


def _load_eval_samples(dataset, ann_dir, split, ann_json, images_dir,
                       n_images, image_size, square, seed):
    """Return [(image array, GroundTruth)] for the chosen dataset."""
    if dataset == "synthetic":
        return synthetic_pointing_dataset(
            n_images=n_images, image_size=image_size, square=square,
            seed=seed,
        )
    if dataset == "voc":
        if not (ann_dir and split):
            raise InvalidConfigError("voc needs --ann-dir and --split")
        gts = load_voc(ann_dir, split)
    else:
        if not ann_json:
            raise InvalidConfigError("coco needs --ann-json")
        gts = load_coco(ann_json)
    if not images_dir:
        raise InvalidConfigError(f"{dataset} needs --images-dir")
    samples = []
    for gt in gts:
        path = _find_image(Path(images_dir), gt.image_id)
        samples.append((load_image(path, (image_size, image_size)), gt))
    return samples


def _find_image(images_dir: Path, image_id: str) -> Path:
    for ext in (".jpg", ".jpeg", ".png"):
        path = images_dir / f"{image_id}{ext}"
        if path.exists():
            return path
    raise InvalidConfigError(f"no image file for id {image_id!r} in "
                             f"{images_dir}")


def _planted_box_probe(gt, cls):
    # each synthetic image carries its own planted box; score it with a
    # mean-intensity probe over exactly that region
    box = next(b for b in gt.boxes if b.class_name == cls)
    return make_toy(
        ToyPredictorSpec(
            kind="region_mean",
            region=(int(box.ymin), int(box.xmin),
                    int(box.ymax), int(box.xmax)),
        )
    )


@main.command("bench")
@click.option("--image", "image_path", type=click.Path(), default=None,
              help="Benchmark image (default: seeded synthetic 224x224).")
@click.option("--resize", nargs=2, type=int, default=None)
@click.option("--toy", default="constant:1", show_default=True)
@click.option("--url", default=None)
@click.option("--masks", "mask_counts", type=int, multiple=True,
              default=(100, 200, 400), show_default=True)
@click.option("--layers", default=",".join(map(str, DEFAULT_LAYER_FRAGMENTS)),
              show_default=True)
@click.option("--keep-prob", type=float, default=0.5, show_default=True)
@click.option("--upscale", type=float, default=2.2, show_default=True)
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--target", default="0", show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@_guard
def cmd_bench(image_path, resize, toy, url, mask_counts, layers, keep_prob,
              upscale, sigma, target, batch_size, repeats, seed, out):
    """Time explanations at several mask budgets; write results.json."""
    out_path = _out_dir(out)
    if image_path:
        img = load_image(image_path, tuple(resize) if resize else None)
    else:
        img, _ = synthetic_pointing_dataset(1, 224, 56, seed=seed)[0]
    predictor = build_predictor(toy if not url else None, url)
    target_class = target if target == "top-1" else int(target)
    reports = []
    for n_masks in mask_counts:
        cfg = ExplainConfig(
            pyramid=PyramidConfig(
                layer_fragment_counts=parse_layers(layers),
                upscale_offset=upscale,
                keep_prob=keep_prob,
                n_masks_total=n_masks,
                seed=seed,
            ),
            slic=SlicParams(sigma=sigma, seed=seed),
            batch_size=batch_size,
            target_class=target_class,
        )
        report = benchmark_time([img], predictor, cfg, repeats=repeats)
        reports.append({"n_masks": n_masks, **report.to_dict()})
        click.echo(
            f"masks={n_masks}: {report.mean_seconds:.3f} "
            f"+/- {report.std_seconds:.3f} s"
        )
    (out_path / "results.json").write_text(json.dumps(reports, indent=2))


if __name__ == "__main__":
    sys.exit(main())
