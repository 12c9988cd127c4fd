"""Pointing-game evaluation and wall-clock benchmarking.

The pointing game scores a saliency map by whether its maximum lands inside
a ground-truth bounding box of the explained class:

    Acc = Hits / (Hits + Misses)

Annotations come from Pascal-VOC XML directories or COCO-format JSON.
Saliency maps live at model-input resolution; boxes are rescaled from
original-image pixels into the map frame before the inside test, and can be
dilated by a per-side pixel tolerance (0 = strict inside, 15 matches the
common pointing-game protocol).

:func:`benchmark_time` measures per-sample explanation wall-clock with a
monotonic clock, averaged over repeats, with a per-phase breakdown.
"""

from __future__ import annotations

import json
import statistics
import time
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .engine import ExplainConfig, SaliencyMap, saliency
from .errors import ExplainJobError, InvalidConfigError

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat",
    "chair", "cow", "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


@dataclass(frozen=True)
class Box:
    class_name: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    difficult: bool = False
    iscrowd: bool = False


@dataclass
class GroundTruth:
    image_id: str
    image_size: tuple[int, int]  # (H, W) in original-image pixels
    boxes: list[Box] = field(default_factory=list)

    def validate(self) -> None:
        h, w = self.image_size
        if h < 1 or w < 1:
            raise InvalidConfigError(
                f"{self.image_id}: bad image size {self.image_size}"
            )
        for b in self.boxes:
            if not (0 <= b.xmin < b.xmax <= w and 0 <= b.ymin < b.ymax <= h):
                raise InvalidConfigError(
                    f"{self.image_id}: box {b} outside image "
                    f"(H={h}, W={w}) or degenerate"
                )

    def present_classes(self, include_difficult: bool = True) -> list[str]:
        names = {
            b.class_name
            for b in self.boxes
            if include_difficult or not b.difficult
        }
        return sorted(names)


@dataclass
class PointingResult:
    hits: int = 0
    misses: int = 0
    per_class: dict = field(default_factory=dict)
    config_errors: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    stddev: float = 0.0

    @property
    def accuracy(self) -> float:
        n = self.hits + self.misses
        return self.hits / n if n else 0.0

    def to_dict(self) -> dict:
        return {
            "overall": {
                "hits": self.hits,
                "misses": self.misses,
                "accuracy": self.accuracy,
            },
            "per_class": self.per_class,
            "n": self.hits + self.misses,
            "config_errors": self.config_errors,
            "stddev": self.stddev,
        }


# ---------------------------------------------------------------------------
# annotation loading


def load_voc(
    ann_dir: Union[str, Path],
    split_file: Union[str, Path],
    errors: Optional[list] = None,
) -> list[GroundTruth]:
    """Read VOC-2007-layout XML annotations for the ids in a split file.

    Malformed files or objects are collected into `errors` (strings) and the
    run continues; a summary warning is raised when anything was skipped.
    """
    ann_dir = Path(ann_dir)
    errs = errors if errors is not None else []
    ids = []
    for line in Path(split_file).read_text().splitlines():
        line = line.strip()
        if line:
            ids.append(line.split()[0])
    records = []
    for image_id in ids:
        path = ann_dir / f"{image_id}.xml"
        try:
            records.append(_parse_voc_xml(path, image_id, errs))
        except (ET.ParseError, OSError, InvalidConfigError, ValueError) as exc:
            errs.append(f"{path}: {exc}")
    if errs and errors is None:
        warnings.warn(
            f"{len(errs)} annotation problems while loading VOC data",
            RuntimeWarning,
            stacklevel=2,
        )
    return records


def _parse_voc_xml(path: Path, image_id: str, errs: list) -> GroundTruth:
    root = ET.parse(path).getroot()
    size = root.find("size")
    if size is None:
        raise InvalidConfigError("missing <size>")
    w = int(size.findtext("width"))
    h = int(size.findtext("height"))
    boxes = []
    for obj in root.findall("object"):
        name = (obj.findtext("name") or "").strip()
        if name not in VOC_CLASSES:
            errs.append(f"{path}: unknown class {name!r}, object skipped")
            continue
        bb = obj.find("bndbox")
        try:
            xmin = float(bb.findtext("xmin"))
            ymin = float(bb.findtext("ymin"))
            xmax = float(bb.findtext("xmax"))
            ymax = float(bb.findtext("ymax"))
        except (AttributeError, TypeError, ValueError):
            errs.append(f"{path}: malformed bndbox for {name!r}, skipped")
            continue
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        boxes.append(Box(name, xmin, ymin, xmax, ymax, difficult=difficult))
    gt = GroundTruth(image_id=image_id, image_size=(h, w), boxes=boxes)
    gt.validate()
    return gt


def load_coco(ann_json: Union[str, Path]) -> list[GroundTruth]:
    """Read COCO-format annotations: (x, y, w, h) boxes become corner form,
    iscrowd=1 annotations are dropped, and images left with no boxes are
    excluded."""
    data = json.loads(Path(ann_json).read_text())
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise InvalidConfigError(f"COCO file missing {key!r} array")
    cat_names = {c["id"]: c["name"] for c in data["categories"]}
    by_image: dict = {}
    for img in data["images"]:
        by_image[img["id"]] = GroundTruth(
            image_id=str(img["id"]),
            image_size=(int(img["height"]), int(img["width"])),
        )
    for ann in data["annotations"]:
        if ann.get("iscrowd", 0) == 1:
            continue
        gt = by_image.get(ann["image_id"])
        if gt is None:
            raise InvalidConfigError(
                f"annotation {ann.get('id')} references unknown image "
                f"{ann['image_id']}"
            )
        x, y, w, h = ann["bbox"]
        gt.boxes.append(
            Box(cat_names[ann["category_id"]], x, y, x + w, y + h)
        )
    records = [gt for gt in by_image.values() if gt.boxes]
    for gt in records:
        gt.validate()
    return records


# ---------------------------------------------------------------------------
# pointing game


def pointing_game(
    maps: dict,
    gts: list[GroundTruth],
    tolerance: float = 0.0,
    include_difficult: bool = True,
) -> PointingResult:
    """Score per-(image, class) saliency maps against ground-truth boxes.

    `maps` is keyed by (image_id, class_name).  The map's argmax (ties to
    the lowest row-major index) is a hit iff it lies inside any same-class
    box — rescaled into the map frame and dilated by `tolerance` pixels per
    side.  Missing maps count as configuration errors, not misses.
    """
    if tolerance < 0:
        raise InvalidConfigError("tolerance must be >= 0")
    result = PointingResult()
    for gt in gts:
        gt.validate()
        orig_h, orig_w = gt.image_size
        for cls in gt.present_classes(include_difficult):
            smap = maps.get((gt.image_id, cls))
            if smap is None:
                result.config_errors.append(
                    f"no saliency map for image {gt.image_id!r} "
                    f"class {cls!r}"
                )
                continue
            sy = smap.height / orig_h
            sx = smap.width / orig_w
            r, c = smap.argmax()
            hit = False
            for b in gt.boxes:
                if b.class_name != cls:
                    continue
                if b.difficult and not include_difficult:
                    continue
                if (
                    b.xmin * sx - tolerance <= c <= b.xmax * sx + tolerance
                    and b.ymin * sy - tolerance <= r <= b.ymax * sy + tolerance
                ):
                    hit = True
                    break
            stats = result.per_class.setdefault(
                cls, {"hits": 0, "misses": 0, "accuracy": 0.0}
            )
            if hit:
                result.hits += 1
                stats["hits"] += 1
            else:
                result.misses += 1
                stats["misses"] += 1
            result.decisions.append(
                {
                    "image_id": gt.image_id,
                    "class_name": cls,
                    "row": r,
                    "col": c,
                    "hit": hit,
                }
            )
    for stats in result.per_class.values():
        n = stats["hits"] + stats["misses"]
        stats["accuracy"] = stats["hits"] / n if n else 0.0
    return result


def accuracy_stddev(accuracies: list[float]) -> float:
    """Population-free std across repeated runs (0 for a single run)."""
    if len(accuracies) < 2:
        return 0.0
    return float(statistics.stdev(accuracies))


def synthetic_pointing_dataset(
    n_images: int = 50,
    image_size: int = 224,
    square: int = 56,
    seed: int = 0,
) -> list[tuple[np.ndarray, GroundTruth]]:
    """Seeded localization fixture: dark noisy images with one bright
    square planted at a random position, boxed as class 'object'.

    Pairing each image with a mean-intensity predictor over its own square
    gives a ground truth whose saliency argmax must fall inside the box.
    """
    if square >= image_size:
        raise InvalidConfigError("square must be smaller than image_size")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_images):
        y0 = int(rng.integers(0, image_size - square + 1))
        x0 = int(rng.integers(0, image_size - square + 1))
        img = (0.05 + 0.15 * rng.random((image_size, image_size, 3))).astype(
            np.float32
        )
        img[y0 : y0 + square, x0 : x0 + square] = (
            0.8 + 0.15 * rng.random((square, square, 3))
        ).astype(np.float32)
        gt = GroundTruth(
            image_id=f"synthetic-{i}",
            image_size=(image_size, image_size),
            boxes=[Box("object", x0, y0, x0 + square, y0 + square)],
        )
        out.append((img, gt))
    return out


# ---------------------------------------------------------------------------
# timing


@dataclass
class TimingReport:
    mean_seconds: float
    std_seconds: float
    phase_means: dict
    n_samples: int
    repeats: int
    per_sample_seconds: list
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_seconds": self.mean_seconds,
            "std_seconds": self.std_seconds,
            "phase_means": self.phase_means,
            "n_samples": self.n_samples,
            "repeats": self.repeats,
            "per_sample_seconds": self.per_sample_seconds,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def benchmark_time(
    images: list,
    predictor,
    cfg: ExplainConfig,
    repeats: int = 3,
) -> TimingReport:
    """Wall-clock the full explanation of each image, `repeats` times.

    Reports mean and std of the per-run totals plus mean per-phase seconds.
    A failing sample is recorded under `failures` and skipped; the run
    continues.
    """
    if not images:
        raise InvalidConfigError("benchmark needs at least one image")
    if repeats < 1:
        raise InvalidConfigError("repeats must be >= 1")
    totals: list[float] = []
    per_sample: dict[int, list[float]] = {i: [] for i in range(len(images))}
    phase_sums = {"segmentation": 0.0, "masking": 0.0, "inference": 0.0,
                  "aggregation": 0.0}
    failures: list[str] = []
    for _ in range(repeats):
        for i, img in enumerate(images):
            tm: dict = {}
            t0 = time.perf_counter()
            try:
                saliency(img, predictor, cfg, timings=tm)
            except ExplainJobError as exc:
                failures.append(f"sample {i}: {exc}")
                continue
            total = time.perf_counter() - t0
            totals.append(total)
            per_sample[i].append(total)
            for phase in phase_sums:
                phase_sums[phase] += tm[phase]
    n_runs = max(len(totals), 1)
    return TimingReport(
        mean_seconds=float(np.mean(totals)) if totals else 0.0,
        std_seconds=float(np.std(totals)) if totals else 0.0,
        phase_means={k: v / n_runs for k, v in phase_sums.items()},
        n_samples=len(images),
        repeats=repeats,
        per_sample_seconds=[
            float(np.mean(v)) if v else 0.0 for v in per_sample.values()
        ],
        failures=failures,
    )
