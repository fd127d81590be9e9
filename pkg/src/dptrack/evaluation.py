"""Overlap metrics, tracking protocols and synthetic test sequences."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

__all__ = [
    "overlap",
    "Sequence",
    "RunReport",
    "SyntheticSpec",
    "Occluder",
    "run_reset_based",
    "run_no_reset",
    "make_synthetic_sequence",
    "read_boxes",
    "write_boxes",
    "parse_box",
    "load_frames",
    "compare_boxes",
    "SKIP_AFTER_FAILURE",
    "BURN_IN",
]

SKIP_AFTER_FAILURE = 5
BURN_IN = 10


def overlap(a, b):
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    # clamp: rounding in the differences can nudge identical boxes past 1
    return float(min(inter / union, 1.0)) if union > 0 else 0.0


def parse_box(text):
    parts = [p for p in text.replace("\t", ",").replace(" ", ",").split(",") if p]
    if len(parts) != 4:
        raise ValueError(f"expected 'x,y,w,h', got {text!r}")
    box = tuple(float(p) for p in parts)
    if not np.isfinite(box).all():
        raise ValueError(f"non-finite box {text!r}")
    return box


def read_boxes(path):
    with open(path) as fh:
        return [parse_box(line) for line in fh if line.strip()]


def write_boxes(path, boxes):
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(",".join(f"{v:.2f}" for v in b) + "\n")


@dataclass
class Sequence:
    """Frames (file paths or in-memory arrays) with one ground-truth box each."""

    frames: list
    groundtruth: list
    name: str = "sequence"

    def __post_init__(self):
        if len(self.frames) != len(self.groundtruth):
            raise ValueError(
                f"{len(self.frames)} frames but {len(self.groundtruth)} ground-truth boxes"
            )
        for i, (_, _, w, h) in enumerate(self.groundtruth):
            if not (w > 0 and h > 0):
                raise ValueError(f"ground-truth box {i} has no area")

    def __len__(self):
        return len(self.frames)

    def image(self, i):
        frame = self.frames[i]
        if isinstance(frame, np.ndarray):
            return frame
        return read_image(frame)

    def save(self, directory):
        """Write frames as PNG files plus a ``groundtruth.txt``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i in range(len(self)):
            write_image(directory / f"{i + 1:05d}.png", self.image(i))
        write_boxes(directory / "groundtruth.txt", self.groundtruth)


def read_image(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB if img.shape[2] == 3 else cv2.COLOR_BGRA2RGB)
    return img


def write_image(path, image):
    img = np.asarray(image)
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), img):
        raise OSError(f"cannot write image {path}")


def load_frames(directory, groundtruth=None, name=None):
    """Sequence from a directory of PNG/PGM/PPM frames ordered by file name."""
    directory = Path(directory)
    frames = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
    if groundtruth is None:
        gt_path = directory / "groundtruth.txt"
        groundtruth = read_boxes(gt_path) if gt_path.exists() else [(0.0, 0.0, 1.0, 1.0)] * len(frames)
    return Sequence(frames, list(groundtruth), name or directory.name)


@dataclass
class RunReport:
    overlaps: list
    failure_count: int
    accuracy: float
    average_overlap: float
    timings: list
    protocol: str
    boxes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    valid: list = field(default_factory=list)

    def summary(self):
        return {
            "protocol": self.protocol,
            "frames": len(self.overlaps),
            "failures": self.failure_count,
            "accuracy": self.accuracy,
            "average_overlap": self.average_overlap,
            "mean_frame_time_s": float(np.mean(self.timings)) if self.timings else 0.0,
        }

    def to_json(self, path=None):
        data = {
            "summary": self.summary(),
            "overlaps": self.overlaps,
            "boxes": [list(b) if b is not None else None for b in self.boxes],
            "failures": self.failures,
        }
        text = json.dumps(data, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def _make_tracker(tracker):
    if callable(tracker) and not hasattr(tracker, "initialize"):
        return tracker()
    from .tracker import DeformablePartsTracker, TrackerConfig

    if tracker is None or isinstance(tracker, TrackerConfig):
        return DeformablePartsTracker(tracker)
    return tracker


def run_reset_based(tracker, sequence, skip=SKIP_AFTER_FAILURE, burn_in=BURN_IN):
    """Re-initialize from ground truth after every failure (zero overlap).

    ``tracker`` is a TrackerConfig, a tracker object with ``initialize`` and
    ``update``, or a factory returning one. After a failure at frame f the
    tracker restarts at f + skip; the first ``burn_in`` frames after every
    initialization are left out of the accuracy average.
    """
    trk = _make_tracker(tracker)
    n = len(sequence)
    overlaps = [0.0] * n
    boxes = [None] * n
    valid = [False] * n
    timings, failures = [], []
    f = 0
    while f < n:
        t0 = time.perf_counter()
        trk.initialize(sequence.image(f), sequence.groundtruth[f])
        timings.append(time.perf_counter() - t0)
        boxes[f] = tuple(sequence.groundtruth[f])
        overlaps[f] = 1.0
        start = f
        f += 1
        while f < n:
            t0 = time.perf_counter()
            box = trk.update(sequence.image(f))
            timings.append(time.perf_counter() - t0)
            boxes[f] = tuple(box)
            overlaps[f] = overlap(box, sequence.groundtruth[f])
            if overlaps[f] <= 0.0:
                failures.append(f)
                f += skip
                break
            valid[f] = f - start >= burn_in
            f += 1
    scored = [o for o, v in zip(overlaps, valid) if v]
    accuracy = float(np.mean(scored)) if scored else float("nan")
    return RunReport(
        overlaps=overlaps,
        failure_count=len(failures),
        accuracy=accuracy,
        average_overlap=float(np.mean(overlaps)),
        timings=timings,
        protocol="reset",
        boxes=boxes,
        failures=failures,
        valid=valid,
    )


def run_no_reset(tracker, sequence):
    """Single initialization; AO is the mean overlap over every frame."""
    trk = _make_tracker(tracker)
    t0 = time.perf_counter()
    trk.initialize(sequence.image(0), sequence.groundtruth[0])
    timings = [time.perf_counter() - t0]
    boxes = [tuple(sequence.groundtruth[0])]
    for f in range(1, len(sequence)):
        t0 = time.perf_counter()
        boxes.append(tuple(trk.update(sequence.image(f))))
        timings.append(time.perf_counter() - t0)
    return compare_boxes(boxes, sequence.groundtruth, timings)


def compare_boxes(boxes, groundtruth, timings=None):
    """No-reset report for a fixed list of output boxes."""
    if len(boxes) != len(groundtruth):
        raise ValueError(f"{len(boxes)} output boxes but {len(groundtruth)} ground-truth boxes")
    overlaps = [overlap(b, g) for b, g in zip(boxes, groundtruth)]
    ao = float(np.mean(overlaps)) if overlaps else float("nan")
    lost = [i for i, o in enumerate(overlaps) if o <= 0.0]
    return RunReport(
        overlaps=overlaps,
        failure_count=len(lost),
        accuracy=float(np.mean([o for o in overlaps if o > 0])) if len(lost) < len(overlaps) else 0.0,
        average_overlap=ao,
        timings=list(timings or []),
        protocol="noreset",
        boxes=[tuple(b) for b in boxes],
        failures=lost,
    )


@dataclass
class Occluder:
    """Rectangle drawn over part of the target for frames [start, stop).

    ``region`` is (x, y, w, h) in units of the target box, e.g. the lower
    half is (0, 0.5, 1, 0.5). ``margin`` widens it by that many pixels.
    """

    start: int
    stop: int
    region: tuple = (0.0, 0.5, 1.0, 0.5)
    margin: float = 4.0


@dataclass
class SyntheticSpec:
    n_frames: int = 100
    frame_size: tuple = (400, 240)
    target_size: tuple = (64.0, 64.0)
    start_center: tuple | None = None
    velocity: tuple = (2.0, 0.0)
    scale_rate: float = 0.002
    deformation: float = 0.0
    occluders: list = field(default_factory=list)
    distractors: int = 0
    lookalike: tuple | None = None
    texture_change: float = 0.0
    texture_contrast: float = 0.65
    texture_cells: int = 8
    noise: float = 4.0


def _smooth_noise(rng, shape, blob, channels):
    low = rng.random((max(shape[0] // blob, 2), max(shape[1] // blob, 2), channels))
    return cv2.resize(low, (shape[1], shape[0]), interpolation=cv2.INTER_CUBIC).reshape(shape + (channels,))


def _target_texture(rng, cells, hue, contrast=0.65):
    """Blocky gray pattern tinted with one saturated hue (RGB float in [0, 1])."""
    gray = 1.0 - contrast + contrast * rng.random((cells, cells))
    tint = cv2.cvtColor(np.uint8([[[hue, 220, 255]]]), cv2.COLOR_HSV2RGB)[0, 0] / 255.0
    return gray[:, :, None] * tint[None, None, :]


def _render(tex, w, h):
    return cv2.resize(tex, (max(int(round(w)), 1), max(int(round(h)), 1)), interpolation=cv2.INTER_NEAREST)


def _paste(frame, patch, x, y):
    h, w = patch.shape[:2]
    x0, y0 = int(round(x)), int(round(y))
    fx0, fy0 = max(x0, 0), max(y0, 0)
    fx1, fy1 = min(x0 + w, frame.shape[1]), min(y0 + h, frame.shape[0])
    if fx1 > fx0 and fy1 > fy0:
        frame[fy0:fy1, fx0:fx1] = patch[fy0 - y0 : fy1 - y0, fx0 - x0 : fx1 - x0]


def make_synthetic_sequence(spec=None, seed=0, name="synthetic"):
    """Deterministic frames and exact boxes of a textured, colored target.

    The target translates by ``velocity`` px/frame and grows by ``scale_rate``
    per frame about its center. With ``deformation`` > 0 each quadrant of the
    target wanders independently within that many pixels. Distractors carry
    the target's gray pattern in a different hue; ``lookalike`` = (dx, dy, vx,
    vy) adds one more, drawn behind the target at offset (dx, dy) px from
    it and moving at (vx, vy) px/frame relative to it. ``texture_change`` is
    the per-frame probability that a texture block is redrawn.
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    fw, fh = spec.frame_size
    tw0, th0 = spec.target_size
    cx0, cy0 = spec.start_center if spec.start_center is not None else (fw * 0.25, fh * 0.5)

    background = 0.15 + 0.5 * _smooth_noise(rng, (fh, fw), 24, 3) * np.array([0.6, 0.9, 0.8])
    background += 0.15 * _smooth_noise(rng, (fh, fw), 4, 1)
    hue = int(rng.integers(0, 12))
    texture = _target_texture(rng, spec.texture_cells, hue, spec.texture_contrast)
    occluder_tex = 0.2 + 0.6 * _smooth_noise(rng, (fh, fw), 6, 1) * np.array([0.3, 0.4, 1.0])

    distractors = []
    for _ in range(spec.distractors):
        other_hue = int(rng.integers(60, 130))
        gray = texture.max(axis=2, keepdims=True)
        tint = cv2.cvtColor(np.uint8([[[other_hue, 220, 255]]]), cv2.COLOR_HSV2RGB)[0, 0] / 255.0
        pos = (rng.uniform(0, fw - tw0), rng.uniform(0, fh - th0))
        distractors.append((gray * tint, pos))

    lookalike = None
    if spec.lookalike is not None:
        tint = cv2.cvtColor(np.uint8([[[int(rng.integers(90, 120)), 220, 255]]]), cv2.COLOR_HSV2RGB)[0, 0] / 255.0
        lookalike = texture.max(axis=2, keepdims=True) * tint

    offsets = np.zeros((4, 2))
    frames, boxes = [], []
    half = spec.texture_cells // 2
    for t in range(spec.n_frames):
        s = (1.0 + spec.scale_rate) ** t
        w, h = tw0 * s, th0 * s
        cx, cy = cx0 + spec.velocity[0] * t, cy0 + spec.velocity[1] * t
        x, y = cx - w / 2.0, cy - h / 2.0
        if x < 0 or y < 0 or x + w > fw or y + h > fh:
            raise ValueError(f"target leaves the {fw}x{fh} frame at frame {t}")
        if spec.texture_change > 0 and t > 0:
            fresh = _target_texture(rng, spec.texture_cells, hue, spec.texture_contrast)
            swap = rng.random((spec.texture_cells, spec.texture_cells)) < spec.texture_change
            texture = np.where(swap[:, :, None], fresh, texture)
        frame = background.copy()
        for tex, (dx, dy) in distractors:
            _paste(frame, _render(tex, w, h), dx, dy)
        if spec.deformation > 0 and t > 0:
            offsets = np.clip(offsets + rng.normal(0.0, spec.deformation / 3.0, offsets.shape),
                              -spec.deformation, spec.deformation)
        if lookalike is not None:
            lx, ly, lvx, lvy = spec.lookalike
            _paste(frame, _render(lookalike, w, h), x + lx + lvx * t, y + ly + lvy * t)
        # the undeformed target underneath keeps gaps between parts on-object
        _paste(frame, _render(texture, w, h), x, y)
        for q, (qr, qc) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            quad = texture[qr * half : (qr + 1) * half, qc * half : (qc + 1) * half]
            _paste(frame, _render(quad, w / 2, h / 2), x + qc * w / 2 + offsets[q, 0], y + qr * h / 2 + offsets[q, 1])
        for occ in spec.occluders:
            if occ.start <= t < occ.stop:
                ox, oy, ow, oh = occ.region
                m = occ.margin
                x0 = int(round(max(x + ox * w - m, 0)))
                y0 = int(round(max(y + oy * h, 0)))
                x1 = int(round(min(x + (ox + ow) * w + m, fw)))
                y1 = int(round(min(y + (oy + oh) * h + m, fh)))
                frame[y0:y1, x0:x1] = occluder_tex[y0:y1, x0:x1]
        frame = frame + rng.normal(0.0, spec.noise / 255.0, frame.shape)
        frames.append(np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8))
        boxes.append((float(x), float(y), float(w), float(h)))
    return Sequence(frames, boxes, name)


def spec_to_dict(spec):
    return asdict(spec)
