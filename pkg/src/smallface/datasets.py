"""Dataset I/O and the synthetic face-scene generator.

Annotations use the standard block text format: an image path line, a count
line, then count lines of "x y w h" with six optional attribute integers
(blur, expression, illumination, invalid, occlusion, pose); invalid=1 marks
a box to be ignored. A zero count is followed by one all-zero line.

Images are binary PPM (P6, maxval 255), read into (H, W, 3) float arrays in
[0, 1]. The generator paints warm-toned ellipse faces (two eye dots and a
mouth bar) over a noisy background with cool-toned distractor shapes; a
configurable fraction of faces is dimmed to create genuinely hard examples.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box, iou

log = logging.getLogger(__name__)

_ATTR_INVALID = 3  # position of the invalid flag in the 6-attribute tail


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class GtBox:
    box: Box
    ignored: bool = False
    attrs: tuple[int, ...] = (0, 0, 0, 0, 0, 0)


@dataclass
class ImageRecord:
    id: str
    path: Path
    width: int
    height: int
    gts: list[GtBox] = field(default_factory=list)

    @property
    def num_faces(self) -> int:
        return len(self.gts)


# -- PPM ---------------------------------------------------------------------

def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise AnnotationError(f"{path}: truncated PPM header")
        return data[start:pos]

    magic = token()
    if magic != b"P6":
        raise AnnotationError(f"{path}: bad PPM magic {magic!r}, expected P6")
    w = int(token())
    h = int(token())
    maxval = int(token())
    if maxval != 255:
        raise AnnotationError(f"{path}: PPM maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = w * h * 3
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise AnnotationError(
            f"{path}: short PPM payload, expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float32) / 255.0


def read_ppm_size(path) -> tuple[int, int]:
    """(width, height) from the header without loading pixels."""
    with open(path, "rb") as f:
        head = f.read(64)
    fields = head.split(maxsplit=3)
    if len(fields) < 3 or fields[0] != b"P6":
        raise AnnotationError(f"{path}: bad PPM header")
    return int(fields[1]), int(fields[2])


def write_ppm(path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pixels.tobytes())


# -- annotations ---------------------------------------------------------------

def parse_annotations(path, image_root=None) -> list[ImageRecord]:
    """Parse a block-format annotation file into ImageRecords.

    Image sizes come from the referenced PPM headers (paths resolved against
    image_root, by default the annotation file's directory); boxes are
    clipped to the image at load time and zero-area boxes are dropped with a
    warning.
    """
    path = Path(path)
    root = Path(image_root) if image_root is not None else path.parent
    lines = path.read_text().splitlines()
    records = []
    i = 0

    def fail(lineno, msg):
        raise AnnotationError(f"{path}:{lineno + 1}: {msg}")

    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        rel = lines[i].strip()
        if i + 1 >= len(lines):
            fail(i, f"missing count line after image path {rel!r}")
        try:
            count = int(lines[i + 1].strip())
        except ValueError:
            fail(i + 1, f"bad face count {lines[i + 1]!r}")
        if count < 0:
            fail(i + 1, f"negative face count {count}")
        body_rows = max(count, 1)  # count 0 still carries one all-zero line
        if i + 2 + body_rows > len(lines):
            fail(i + 1, f"truncated block for {rel!r}: expected {body_rows} box lines")

        img_path = root / rel
        try:
            width, height = read_ppm_size(img_path)
        except FileNotFoundError:
            fail(i, f"image file not found: {img_path}")

        gts = []
        for j in range(body_rows):
            lineno = i + 2 + j
            parts = lines[lineno].split()
            if len(parts) not in (4, 10):
                fail(lineno, f"expected 4 or 10 integers, got {len(parts)}")
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                fail(lineno, f"non-integer field in {lines[lineno]!r}")
            if count == 0:
                if any(vals):
                    fail(lineno, "zero-count block must carry one all-zero line")
                continue
            x, y, w, h = vals[:4]
            attrs = tuple(vals[4:]) if len(vals) == 10 else (0,) * 6
            if w < 0 or h < 0:
                fail(lineno, f"negative box size {w}x{h}")
            if w == 0 or h == 0:
                log.warning("%s:%d: dropping zero-area box", path, lineno + 1)
                continue
            box = Box(
                min(max(float(x), 0.0), width),
                min(max(float(y), 0.0), height),
                min(max(float(x + w), 0.0), width),
                min(max(float(y + h), 0.0), height),
            )
            if box.area <= 0:
                log.warning("%s:%d: dropping box fully outside the image", path, lineno + 1)
                continue
            gts.append(GtBox(box=box, ignored=bool(attrs[_ATTR_INVALID]), attrs=attrs))
        records.append(ImageRecord(id=Path(rel).stem, path=img_path,
                                   width=width, height=height, gts=gts))
        i += 2 + body_rows
    return records


def write_annotations(path, records: list[ImageRecord], image_root=None) -> None:
    root = Path(image_root) if image_root is not None else Path(path).parent
    out = []
    for rec in records:
        out.append(str(Path(rec.path).relative_to(root)))
        out.append(str(len(rec.gts)))
        if not rec.gts:
            out.append(" ".join(["0"] * 10))
            continue
        for gt in rec.gts:
            b = gt.box
            row = [int(round(b.x_min)), int(round(b.y_min)),
                   int(round(b.x_max - b.x_min)), int(round(b.y_max - b.y_min))]
            row.extend(gt.attrs)
            out.append(" ".join(str(v) for v in row))
    Path(path).write_text("\n".join(out) + "\n")


def write_manifest(path, records: list[ImageRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "path", "width", "height", "num_faces"])
        for rec in records:
            w.writerow([rec.id, str(rec.path), rec.width, rec.height, rec.num_faces])


# -- synthetic scenes ----------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    canvas_h: int = 256
    canvas_w: int = 256
    min_faces: int = 1
    max_faces: int = 6
    face_height_range: tuple[float, float] = (10.0, 120.0)  # log-uniform
    hard_face_fraction: float = 0.3
    hard_brightness_range: tuple[float, float] = (0.3, 0.6)
    distractor_range: tuple[int, int] = (2, 5)
    noise_amplitude: float = 0.05
    max_face_iou: float = 0.3
    seed: int = 0

STREAM_SYNTH = 3


def _supersampled_mask(h, w, fn, factor=2):
    """Fractional coverage of an implicit region, factor^2 samples per pixel."""
    offs = (np.arange(factor) + 0.5) / factor
    acc = np.zeros((h, w), dtype=np.float64)
    for oy in offs:
        for ox in offs:
            ys = np.arange(h)[:, None] + oy
            xs = np.arange(w)[None, :] + ox
            acc += fn(xs, ys)
    return acc / (factor * factor)


def _paint(image, y0, x0, mask, color):
    h, w = mask.shape
    region = image[y0:y0 + h, x0:x0 + w]
    region += mask[..., None] * (np.asarray(color) - region)


def _draw_face(image, box: Box, brightness: float, rng) -> None:
    x0, y0 = int(box.x_min), int(box.y_min)
    w, h = int(round(box.width)), int(round(box.height))
    cx, cy = w / 2.0, h / 2.0
    a, b = w / 2.0, h / 2.0
    base = rng.uniform(0.72, 0.95) * brightness
    face_color = np.array([base, 0.80 * base, 0.62 * base])
    dark = np.array([0.10, 0.08, 0.08]) * max(brightness, 0.5)

    ellipse = _supersampled_mask(
        h, w, lambda xs, ys: (((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0))
    _paint(image, y0, x0, ellipse, face_color)

    er_x, er_y = max(0.14 * a, 0.45), max(0.12 * b, 0.45)
    for ex in (cx - 0.40 * a, cx + 0.40 * a):
        eye = _supersampled_mask(
            h, w, lambda xs, ys: (((xs - ex) / er_x) ** 2 + ((ys - (cy - 0.30 * b)) / er_y) ** 2 <= 1.0))
        _paint(image, y0, x0, eye * ellipse, dark)
    mouth = _supersampled_mask(
        h, w, lambda xs, ys: (np.abs(xs - cx) <= 0.30 * a) & (np.abs(ys - (cy + 0.42 * b)) <= max(0.06 * b, 0.45)))
    _paint(image, y0, x0, mouth * ellipse, dark)


def _place_box(rng, canvas_h, canvas_w, bw, bh, taken, max_iou, tries=60) -> Box | None:
    for _ in range(tries):
        x0 = int(rng.integers(1, canvas_w - bw))
        y0 = int(rng.integers(1, canvas_h - bh))
        cand = Box(float(x0), float(y0), float(x0 + bw), float(y0 + bh))
        if all(iou(cand, other) <= max_iou for other in taken):
            return cand
    return None


def generate_image(cfg: SynthConfig, rng) -> tuple[np.ndarray, list[GtBox]]:
    h, w = cfg.canvas_h, cfg.canvas_w
    base = rng.uniform(0.15, 0.35)
    tint = rng.uniform(-0.03, 0.03, size=3)
    image = np.clip(base + tint, 0.0, 1.0) * np.ones((h, w, 3))
    image += rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=(h, w, 1))
    image = np.clip(image, 0.0, 1.0)

    lo, hi = cfg.face_height_range
    n_faces = int(rng.integers(cfg.min_faces, cfg.max_faces + 1))
    boxes: list[Box] = []
    gts: list[GtBox] = []
    for _ in range(n_faces):
        fh = int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
        fh = max(int(lo), min(fh, min(h, w) - 4))
        fw = max(4, int(round(fh * rng.uniform(0.74, 0.86))))
        placed = _place_box(rng, h, w, fw, fh, boxes, cfg.max_face_iou)
        if placed is None:
            continue
        hard = rng.random() < cfg.hard_face_fraction
        brightness = rng.uniform(*cfg.hard_brightness_range) if hard else 1.0
        _draw_face(image, placed, brightness, rng)
        boxes.append(placed)
        gts.append(GtBox(box=placed, ignored=False, attrs=(int(hard), 0, 0, 0, 0, 0)))

    n_distract = int(rng.integers(cfg.distractor_range[0], cfg.distractor_range[1] + 1))
    for _ in range(n_distract):
        _draw_distractor(image, rng, boxes)
    return np.clip(image, 0.0, 1.0).astype(np.float32), gts


def _draw_distractor(image, rng, face_boxes):
    # cool-toned shapes, placed so they leave every face box mostly uncovered
    h, w = image.shape[:2]
    size = float(np.exp(rng.uniform(np.log(8.0), np.log(90.0))))
    dw = max(4, int(round(size * rng.uniform(0.6, 1.4))))
    dh = max(4, int(round(size)))
    if dw >= w - 2 or dh >= h - 2:
        return None
    spot = _place_box(rng, h, w, dw, dh, face_boxes, max_iou=0.1, tries=20)
    if spot is None:
        return None
    blue = rng.uniform(0.45, 0.9)
    color = np.array([0.55 * blue, 0.70 * blue, blue])
    kind = int(rng.integers(0, 3))
    bw, bh = dw, dh
    cx, cy, a, b = bw / 2.0, bh / 2.0, bw / 2.0, bh / 2.0
    if kind == 0:
        mask = np.ones((bh, bw), dtype=np.float64)
    elif kind == 1:
        mask = np.zeros((bh, bw), dtype=np.float64)
        t = max(1, int(round(0.12 * min(bw, bh))))
        mask[:t], mask[-t:], mask[:, :t], mask[:, -t:] = 1.0, 1.0, 1.0, 1.0
    else:
        mask = _supersampled_mask(
            bh, bw,
            lambda xs, ys: ((((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0)
                            & (((xs - cx) / (0.62 * a)) ** 2 + ((ys - cy) / (0.62 * b)) ** 2 > 1.0)))
    _paint(image, int(spot.y_min), int(spot.x_min), mask, color)
    return spot


def generate_synthetic(cfg: SynthConfig, n_images: int, out_dir) -> list[ImageRecord]:
    """Write n_images scenes + annotations + manifest; byte-identical per seed."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for idx in range(n_images):
        rng = np.random.default_rng([int(cfg.seed), STREAM_SYNTH, idx])
        image, gts = generate_image(cfg, rng)
        image_id = f"img_{idx:05d}"
        rel = Path("images") / f"{image_id}.ppm"
        write_ppm(out_dir / rel, image)
        records.append(ImageRecord(id=image_id, path=out_dir / rel,
                                   width=cfg.canvas_w, height=cfg.canvas_h, gts=gts))
    write_annotations(out_dir / "annotations.txt", records, image_root=out_dir)
    write_manifest(out_dir / "manifest.csv", records)
    return records


def load_dataset(data_dir) -> list[ImageRecord]:
    data_dir = Path(data_dir)
    return parse_annotations(data_dir / "annotations.txt", image_root=data_dir)
