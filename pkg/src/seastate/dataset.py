"""Balanced, split, cropped image datasets from labeled video sessions.

Frames are sampled from each class at a fixed stride so every class ends up
with roughly the same number of images, and a 331x331 patch is cut from each
sampled frame, either at a fixed lower-left anchor (``LL``) or at a uniformly
random position inside a configured sea rectangle (``R``).
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import cv2
import numpy as np

from . import __version__
from .errors import ConfigError, DataError, GeometryError, InsufficientFramesError, LabelError

log = logging.getLogger(__name__)

CROP_SIZE = 331
NATIVE_LABEL_RANGE = (1, 8)
NATIVE_CAMERA_HEIGHTS = (38.12, 40.32)
SPLITS = ("train", "val", "test")
BALANCE_LIMIT = 1.1
COUNT_TOLERANCE = 0.10
MAX_VETO_RETRIES = 64


class Strategy(str, enum.Enum):
    LL = "LL"
    R = "R"
    CENTER_EVAL = "center_eval"
    # Near-horizon crops; kept only as a named option, never produced.
    HORIZON = "horizon"


class LoadingCondition(str, enum.Enum):
    CARGO = "cargo"
    BALLAST = "ballast"


def check_label(value: int, label_range: tuple[int, int] = NATIVE_LABEL_RANGE) -> int:
    value = int(value)
    lo, hi = label_range
    if not lo <= value <= hi:
        raise LabelError(f"Beaufort label {value} outside range {lo}..{hi}")
    return value


@dataclass(frozen=True)
class CropRegion:
    x: int
    y: int
    width: int
    height: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.width, self.height)

    def fits(self, frame_width: int, frame_height: int) -> bool:
        return (self.x >= 0 and self.y >= 0 and self.x + self.width <= frame_width
                and self.y + self.height <= frame_height)

    def contains(self, other: "CropRegion") -> bool:
        return (other.x >= self.x and other.y >= self.y
                and other.x + other.width <= self.x + self.width
                and other.y + other.height <= self.y + self.height)

    @classmethod
    def parse(cls, text: str) -> "CropRegion":
        try:
            x, y, w, h = (int(v) for v in text.split(","))
        except ValueError:
            raise ConfigError(f"region must be 'x,y,w,h', got {text!r}") from None
        return cls(x, y, w, h)


@dataclass(frozen=True)
class VideoSession:
    id: str
    path: str
    label: int
    frame_count: int
    duration: float
    resolution: tuple[int, int]
    camera_height: float
    loading_condition: LoadingCondition
    sea_region: CropRegion | None = None
    exclusion_mask: str | None = None

    def validate(self, label_range=NATIVE_LABEL_RANGE, camera_heights=NATIVE_CAMERA_HEIGHTS):
        check_label(self.label, label_range)
        if self.frame_count <= 0:
            raise DataError(f"session {self.id}: frame_count must be positive")
        w, h = self.resolution
        if w < CROP_SIZE or h < CROP_SIZE:
            raise GeometryError(f"session {self.id}: resolution {w}x{h} smaller than {CROP_SIZE}x{CROP_SIZE}")
        if camera_heights is not None and not any(
                abs(self.camera_height - c) < 1e-9 for c in camera_heights):
            raise DataError(f"session {self.id}: camera height {self.camera_height} not in {camera_heights}")
        if self.sea_region is not None and not self.sea_region.fits(w, h):
            raise GeometryError(f"session {self.id}: sea_region {self.sea_region.as_tuple()} outside frame")
        return self


@dataclass(frozen=True)
class SamplingEntry:
    label: int
    split: str
    interval: int
    target: int
    available: int


@dataclass(frozen=True)
class ImageRecord:
    id: str
    session_id: str
    frame_index: int
    crop: CropRegion
    label: int
    split: str
    strategy: str

    @property
    def path(self) -> str:
        return f"{self.split}/{self.label}/{self.id}.png"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "frame_index": self.frame_index,
            "crop": list(self.crop.as_tuple()),
            "label": self.label,
            "split": self.split,
            "strategy": self.strategy,
            "path": self.path,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ImageRecord":
        return cls(
            id=str(data["id"]),
            session_id=str(data["session_id"]),
            frame_index=int(data["frame_index"]),
            crop=CropRegion(*(int(v) for v in data["crop"])),
            label=int(data["label"]),
            split=str(data["split"]),
            strategy=str(data["strategy"]),
        )


def count_classes(records: Iterable[ImageRecord]) -> dict[str, dict[int, int]]:
    counts: dict[str, dict[int, int]] = {}
    for r in records:
        per_split = counts.setdefault(r.split, {})
        per_split[r.label] = per_split.get(r.label, 0) + 1
    return {s: dict(sorted(c.items())) for s, c in sorted(counts.items(), key=lambda kv: _split_rank(kv[0]))}


def _split_rank(split: str) -> int:
    return SPLITS.index(split) if split in SPLITS else len(SPLITS)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    strategy: str
    seed: int
    records: tuple[ImageRecord, ...]
    label_range: tuple[int, int]
    class_counts: dict = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "label_range", tuple(int(v) for v in self.label_range))
        derived = count_classes(self.records)
        if self.class_counts is not None and self.class_counts != derived:
            raise DataError("class_counts inconsistent with records")
        object.__setattr__(self, "class_counts", derived)

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(range(self.label_range[0], self.label_range[1] + 1))

    def split(self, name: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == name]

    def subset(self, records: Iterable[ImageRecord], name: str | None = None) -> "DatasetManifest":
        return DatasetManifest(name or self.name, self.strategy, self.seed, tuple(records), self.label_range)


# -- manifest file -----------------------------------------------------------

def dumps_manifest(manifest: DatasetManifest) -> str:
    header = {
        "name": manifest.name,
        "strategy": manifest.strategy,
        "seed": manifest.seed,
        "label_range": list(manifest.label_range),
        "tool_version": __version__,
    }
    lines = [json.dumps({"header": header}, separators=(",", ":"))]
    lines += [json.dumps(r.to_json(), separators=(",", ":")) for r in manifest.records]
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(manifest), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"empty manifest: {path}")
    try:
        header = json.loads(lines[0])["header"]
        records = [ImageRecord.from_json(json.loads(ln)) for ln in lines[1:]]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from None
    return DatasetManifest(
        name=header["name"],
        strategy=header["strategy"],
        seed=int(header["seed"]),
        records=tuple(records),
        label_range=tuple(header["label_range"]),
    )


def manifest_hash(manifest: DatasetManifest) -> str:
    return hashlib.sha256(dumps_manifest(manifest).encode("utf-8")).hexdigest()


def dataset_root(manifest_path: str | Path) -> Path:
    p = Path(manifest_path)
    return p if p.is_dir() else p.parent


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as an RGB uint8 array."""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise DataError(f"cannot read image {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def save_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.dtype != np.uint8:
        image = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    ok = cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR), [cv2.IMWRITE_PNG_COMPRESSION, 1])
    if not ok:
        raise DataError(f"cannot write image {path}")


# -- frame sources -----------------------------------------------------------

class VideoFileSource:
    """Frames of a video container, decoded with OpenCV, as RGB uint8."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        cap = cv2.VideoCapture(self.path)
        if not cap.isOpened():
            raise DataError(f"cannot open video {self.path}")
        self.frame_count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        self.fps = float(cap.get(cv2.CAP_PROP_FPS)) or 30.0
        self.resolution = (int(cap.get(cv2.CAP_PROP_FRAME_WIDTH)), int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT)))
        cap.release()

    def frames(self, indices: Sequence[int]):
        """Yield ``(index, frame)`` for the requested indices in increasing order."""
        wanted = sorted(set(indices))
        cap = cv2.VideoCapture(self.path)
        try:
            pos = 0
            for idx in wanted:
                while pos < idx:
                    if not cap.grab():
                        raise DataError(f"{self.path}: stream ended before frame {idx}")
                    pos += 1
                ok, frame = cap.read()
                pos += 1
                if not ok:
                    raise DataError(f"{self.path}: cannot decode frame {idx}")
                yield idx, cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
        finally:
            cap.release()


class FrameDirectorySource:
    """A directory of still images, ordered by file name, treated as a video."""

    EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}

    def __init__(self, path: str | Path, fps: float = 30.0):
        self.path = Path(path)
        self.files = sorted(p for p in self.path.iterdir() if p.suffix.lower() in self.EXTENSIONS)
        if not self.files:
            raise DataError(f"no frames in {self.path}")
        first = load_image(self.files[0])
        self.frame_count = len(self.files)
        self.fps = fps
        self.resolution = (first.shape[1], first.shape[0])

    def frames(self, indices: Sequence[int]):
        for idx in sorted(set(indices)):
            yield idx, load_image(self.files[idx])


def open_frame_source(path: str | Path, label: int | None = None):
    text = str(path)
    if text.startswith("synth:"):
        from .synth import SyntheticVideo

        return SyntheticVideo.from_uri(text, label)
    p = Path(text)
    if p.is_dir():
        return FrameDirectorySource(p)
    if not p.exists():
        raise DataError(f"video not found: {p}")
    return VideoFileSource(p)


# -- session index -----------------------------------------------------------

INDEX_FIELDS = ("id", "path", "label", "camera_height", "loading_condition", "sea_region", "exclusion_mask")


def read_session_index(path: str | Path, label_range=NATIVE_LABEL_RANGE,
                       camera_heights=NATIVE_CAMERA_HEIGHTS) -> list[VideoSession]:
    """Parse a delimited session index and probe every referenced video."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"session index not found: {path}")
    text = path.read_text(encoding="utf-8")
    first = text.splitlines()[0] if text else ""
    delimiter = "\t" if "\t" in first else ","
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    missing = {"id", "path", "label", "camera_height", "loading_condition"} - set(reader.fieldnames or ())
    if missing:
        raise ConfigError(f"session index {path} lacks columns: {sorted(missing)}")
    sessions = []
    for row in reader:
        src_path = row["path"]
        if not src_path.startswith("synth:") and not Path(src_path).is_absolute():
            src_path = str((path.parent / src_path))
        label = check_label(int(row["label"]), label_range)
        source = open_frame_source(src_path, label)
        region = row.get("sea_region") or ""
        mask = row.get("exclusion_mask") or None
        if mask and not Path(mask).is_absolute():
            mask = str(path.parent / mask)
        try:
            loading = LoadingCondition(row["loading_condition"].strip().lower())
        except ValueError:
            raise ConfigError(f"session {row['id']}: unknown loading condition {row['loading_condition']!r}") from None
        session = VideoSession(
            id=row["id"].strip(),
            path=src_path,
            label=label,
            frame_count=source.frame_count,
            duration=source.frame_count / source.fps,
            resolution=source.resolution,
            camera_height=float(row["camera_height"]),
            loading_condition=loading,
            sea_region=CropRegion.parse(region) if region.strip() else None,
            exclusion_mask=mask,
        )
        sessions.append(session.validate(label_range, camera_heights))
    ids = [s.id for s in sessions]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate session ids in index")
    return sessions


def write_session_index(sessions: Sequence[VideoSession], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(INDEX_FIELDS)
        for s in sessions:
            region = ",".join(map(str, s.sea_region.as_tuple())) if s.sea_region else ""
            writer.writerow([s.id, s.path, s.label, s.camera_height, s.loading_condition.value,
                             region, s.exclusion_mask or ""])
    return path


# -- sampling and cropping ---------------------------------------------------

def compute_sampling_interval(frame_count: int, target: int, label: int | None = None) -> int:
    if target < 1:
        raise ConfigError(f"target must be >= 1, got {target}")
    if frame_count < target:
        who = f"class {label}" if label is not None else "class"
        raise InsufficientFramesError(
            f"{who}: {frame_count} frames cannot supply {target} images",
            {label: target - frame_count} if label is not None else None,
        )
    return frame_count // target


def ll_region(frame_width: int, frame_height: int, offset: tuple[int, int] = (0, 0),
              size: int = CROP_SIZE) -> CropRegion:
    dx, dy = offset
    region = CropRegion(dx, frame_height - size - dy, size, size)
    if not region.fits(frame_width, frame_height):
        raise GeometryError(
            f"lower-left crop {region.as_tuple()} does not fit a {frame_width}x{frame_height} frame")
    return region


def random_region(sea_region: CropRegion, rng: np.random.Generator, frame_size: tuple[int, int] | None = None,
                  size: int = CROP_SIZE) -> CropRegion:
    if sea_region.width < size or sea_region.height < size:
        raise GeometryError(
            f"sea region {sea_region.as_tuple()} is smaller than a {size}x{size} crop")
    if frame_size is not None and not sea_region.fits(*frame_size):
        raise GeometryError(f"sea region {sea_region.as_tuple()} exceeds frame {frame_size}")
    x = sea_region.x + int(rng.integers(0, sea_region.width - size + 1))
    y = sea_region.y + int(rng.integers(0, sea_region.height - size + 1))
    return CropRegion(x, y, size, size)


def center_region(frame_width: int, frame_height: int, size: int = CROP_SIZE) -> CropRegion:
    return CropRegion((frame_width - size) // 2, (frame_height - size) // 2, size, size)


def plan_region(strategy: Strategy | str, frame_size: tuple[int, int], sea_region: CropRegion | None = None,
                rng: np.random.Generator | None = None, offset: tuple[int, int] = (0, 0),
                size: int = CROP_SIZE) -> CropRegion:
    strategy = Strategy(strategy)
    w, h = frame_size
    if w < size or h < size:
        raise GeometryError(f"frame {w}x{h} smaller than {size}x{size} crop")
    if strategy is Strategy.LL:
        return ll_region(w, h, offset, size)
    if strategy is Strategy.R:
        if sea_region is None:
            raise ConfigError("R strategy requires a sea_region")
        if rng is None:
            raise ConfigError("R strategy requires a random generator")
        return random_region(sea_region, rng, (w, h), size)
    if strategy is Strategy.CENTER_EVAL:
        return center_region(w, h, size)
    raise ConfigError("the horizon crop strategy is disabled")


def extract_crop(frame: np.ndarray, strategy: Strategy | str, sea_region: CropRegion | None = None,
                 rng: np.random.Generator | None = None, offset: tuple[int, int] = (0, 0),
                 size: int = CROP_SIZE) -> tuple[np.ndarray, CropRegion]:
    """Cut one ``size`` x ``size`` patch from ``frame`` without any resampling."""
    h, w = frame.shape[:2]
    region = plan_region(strategy, (w, h), sea_region, rng, offset, size)
    patch = frame[region.y:region.y + region.height, region.x:region.x + region.width].copy()
    return patch, region


def _stable_int(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def record_rng(seed: int, session_id: str, frame_index: int) -> np.random.Generator:
    """Per-record generator so crop positions do not depend on processing order."""
    return np.random.default_rng([int(seed), _stable_int(session_id), int(frame_index)])


def _load_mask(path: str | None) -> np.ndarray | None:
    if not path:
        return None
    mask = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise DataError(f"cannot read exclusion mask {path}")
    return mask > 0


def _vetoed(mask: np.ndarray | None, region: CropRegion) -> bool:
    if mask is None:
        return False
    return bool(mask[region.y:region.y + region.height, region.x:region.x + region.width].any())


def _normalise_targets(targets, labels: Sequence[int]) -> dict[str, dict[int, int]]:
    out = {}
    for split, value in targets.items():
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        if isinstance(value, Mapping):
            per = {int(k): int(v) for k, v in value.items()}
        else:
            per = {label: int(value) for label in labels}
        if any(v < 0 for v in per.values()):
            raise ConfigError(f"negative target in split {split}")
        out[split] = per
    return out


@dataclass(frozen=True)
class _Segment:
    session: VideoSession
    start: int
    stop: int

    def __len__(self):
        return self.stop - self.start


def _allocate_segments(sessions: Sequence[VideoSession], split_targets: dict[str, int],
                       holdout: str) -> dict[str, list[_Segment]]:
    active = [s for s in SPLITS if split_targets.get(s, 0) > 0]
    segments: dict[str, list[_Segment]] = {s: [] for s in active}
    if holdout == "trailing":
        total = sum(split_targets[s] for s in active)
        for session in sessions:
            cursor, acc = 0, 0
            for i, split in enumerate(active):
                acc += split_targets[split]
                end = session.frame_count if i == len(active) - 1 else (session.frame_count * acc) // total
                if end > cursor:
                    segments[split].append(_Segment(session, cursor, end))
                cursor = end
    elif holdout == "session":
        if len(sessions) < len(active):
            raise InsufficientFramesError(
                f"class {sessions[0].label}: {len(sessions)} sessions cannot be held out across {len(active)} splits")
        remaining = list(sessions)
        for split in reversed(active[1:]):
            session = remaining.pop()
            segments[split].append(_Segment(session, 0, session.frame_count))
        segments[active[0]] = [_Segment(s, 0, s.frame_count) for s in remaining]
    else:
        raise ConfigError(f"unknown holdout mode {holdout!r}")
    return segments


def plan_sampling(sessions: Sequence[VideoSession], targets: Mapping, holdout: str = "trailing"
                  ) -> tuple[list[SamplingEntry], dict[tuple[str, int], list[tuple[VideoSession, int]]]]:
    """Choose ``(session, frame_index)`` pairs for every (split, class).

    Within a split each class's frames form one virtual timeline (sessions in
    id order); frames are taken at ``interval = floor(frames / target)`` and
    truncated to ``target``.
    """
    by_label: dict[int, list[VideoSession]] = {}
    for s in sorted(sessions, key=lambda s: s.id):
        by_label.setdefault(s.label, []).append(s)
    labels = sorted(by_label)
    per_split = _normalise_targets(targets, labels)
    for split, per in per_split.items():
        unknown = set(per) - set(labels)
        if unknown and any(per[l] > 0 for l in unknown):
            raise InsufficientFramesError(
                f"split {split}: no sessions for classes {sorted(unknown)}",
                {l: {split: per[l]} for l in sorted(unknown)})

    plan: list[SamplingEntry] = []
    picks: dict[tuple[str, int], list[tuple[VideoSession, int]]] = {}
    shortfall: dict[int, dict[str, int]] = {}
    for label in labels:
        split_targets = {s: per_split.get(s, {}).get(label, 0) for s in SPLITS}
        segments = _allocate_segments(by_label[label], split_targets, holdout)
        for split, segs in segments.items():
            target = split_targets[split]
            available = sum(len(seg) for seg in segs)
            if available < target:
                shortfall.setdefault(label, {})[split] = target - available
                continue
            interval = compute_sampling_interval(available, target, label)
            plan.append(SamplingEntry(label, split, interval, target, available))
            chosen = []
            wanted = iter(range(0, interval * target, interval))
            nxt = next(wanted, None)
            offset = 0
            for seg in segs:
                while nxt is not None and nxt < offset + len(seg):
                    chosen.append((seg.session, seg.start + nxt - offset))
                    nxt = next(wanted, None)
                offset += len(seg)
            picks[(split, label)] = chosen
    if shortfall:
        detail = "; ".join(f"class {l}: " + ", ".join(f"{s} short by {n}" for s, n in v.items())
                           for l, v in sorted(shortfall.items()))
        raise InsufficientFramesError(f"insufficient frames ({detail})", shortfall)
    return plan, picks


def _extract_session(session, items, strategy, seed, offset, out_dir, mask):
    """Crop every requested frame of one session. Runs on a worker thread."""
    records = []
    regions = {}
    for split, frame_index in items:
        rid = f"{session.id}_f{frame_index:06d}"
        if strategy is Strategy.LL:
            region = ll_region(*session.resolution, offset)
            if _vetoed(mask, region):
                continue
        else:
            rng = record_rng(seed, session.id, frame_index)
            sea = session.sea_region or CropRegion(0, 0, *session.resolution)
            region = None
            for _ in range(MAX_VETO_RETRIES):
                candidate = random_region(sea, rng, session.resolution)
                if not _vetoed(mask, candidate):
                    region = candidate
                    break
            if region is None:
                continue
        regions[frame_index] = region
        records.append(ImageRecord(rid, session.id, frame_index, region, session.label, split, strategy.value))
    if out_dir is not None and records:
        source = open_frame_source(session.path, session.label)
        by_frame = {r.frame_index: r for r in records}
        for idx, frame in source.frames(list(by_frame)):
            rec = by_frame[idx]
            if (frame.shape[1], frame.shape[0]) != session.resolution:
                raise GeometryError(f"session {session.id}: frame {idx} has unexpected size {frame.shape}")
            c = rec.crop
            save_image(Path(out_dir) / rec.path, frame[c.y:c.y + c.height, c.x:c.x + c.width])
    return records


def build_dataset(sessions: Sequence[VideoSession], targets: Mapping, strategy: Strategy | str = Strategy.LL,
                  seed: int = 0, out_dir: str | Path | None = None, name: str = "dataset",
                  holdout: str = "trailing", ll_offset: tuple[int, int] = (0, 0),
                  workers: int = 1, label_range: tuple[int, int] | None = None) -> DatasetManifest:
    """Sample, crop and (optionally) write a balanced dataset.

    ``targets`` maps split name to either a per-class count or a
    ``{label: count}`` mapping. With ``out_dir=None`` only the manifest is
    produced; crop geometry does not need decoded frames.
    """
    strategy = Strategy(strategy)
    if strategy not in (Strategy.LL, Strategy.R):
        raise ConfigError(f"strategy {strategy.value} cannot build a dataset")
    if not sessions:
        raise DataError("no sessions supplied")
    if label_range is None:
        labels = [s.label for s in sessions]
        label_range = (min(labels), max(labels))
    for s in sessions:
        s.validate(label_range, camera_heights=None)
    _, picks = plan_sampling(sessions, targets, holdout)

    work: dict[str, list[tuple[str, int]]] = {}
    by_id = {s.id: s for s in sessions}
    for (split, _label), chosen in picks.items():
        for session, frame_index in chosen:
            work.setdefault(session.id, []).append((split, frame_index))

    def run(session_id):
        session = by_id[session_id]
        return _extract_session(session, sorted(work[session_id], key=lambda t: t[1]), strategy, seed,
                                ll_offset, out_dir, _load_mask(session.exclusion_mask))

    ordered = sorted(work)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ordered))
    else:
        results = [run(sid) for sid in ordered]
    records = sorted((r for batch in results for r in batch),
                     key=lambda r: (r.label, _split_rank(r.split), r.session_id, r.frame_index))
    manifest = DatasetManifest(name, strategy.value, int(seed), tuple(records), label_range)

    per_split = _normalise_targets(targets, manifest.labels)
    shortfall = {}
    for split, per in per_split.items():
        for label, target in per.items():
            got = manifest.class_counts.get(split, {}).get(label, 0)
            if target and got < (1 - COUNT_TOLERANCE) * target:
                shortfall.setdefault(label, {})[split] = target - got
    if shortfall:
        raise InsufficientFramesError(f"exclusion masks left classes short: {shortfall}", shortfall)
    report = verify_manifest(manifest)
    if report.duplicates or report.overlaps or report.count_mismatch:
        raise DataError(f"manifest invariants violated: {report.problems()}")
    if out_dir is not None:
        write_manifest(manifest, Path(out_dir) / "manifest.jsonl")
    return manifest


# -- verification ------------------------------------------------------------

def balance_ratio(counts: Iterable[int]) -> float:
    counts = list(counts)
    if not counts:
        return float("nan")
    lo, hi = min(counts), max(counts)
    return float("inf") if lo == 0 else hi / lo


@dataclass
class BalanceReport:
    class_counts: dict[str, dict[int, int]]
    ratios: dict[str, float]
    imbalanced: list[str]
    overlaps: list[tuple[str, int]]
    duplicates: list[str]
    count_mismatch: bool = False
    mixed_strategies: bool = False

    @property
    def balanced(self) -> bool:
        return not self.imbalanced

    @property
    def ok(self) -> bool:
        return not self.problems()

    def problems(self) -> list[str]:
        out = [f"split {s} imbalanced (max/min {self.ratios[s]:.3f})" for s in self.imbalanced]
        if self.overlaps:
            out.append(f"{len(self.overlaps)} frames shared between splits")
        if self.duplicates:
            out.append(f"{len(self.duplicates)} duplicated records")
        if self.count_mismatch:
            out.append("class counts disagree with records")
        if self.mixed_strategies:
            out.append("records mix crop strategies")
        return out

    def format(self) -> str:
        lines = []
        for split, counts in self.class_counts.items():
            cells = " ".join(f"{k}:{v}" for k, v in counts.items())
            lines.append(f"{split:<6} total={sum(counts.values()):<6} ratio={self.ratios[split]:.3f}  {cells}")
        problems = self.problems()
        lines.append("status: " + ("OK" if not problems else "; ".join(problems)))
        return "\n".join(lines) + "\n"


def verify_manifest(manifest: DatasetManifest, limit: float = BALANCE_LIMIT) -> BalanceReport:
    """Balance and integrity report. Never raises for content problems."""
    counts = count_classes(manifest.records)
    ratios, imbalanced = {}, []
    for split, per in counts.items():
        full = [per.get(label, 0) for label in manifest.labels] if split == "train" else list(per.values())
        ratios[split] = balance_ratio(full)
        if ratios[split] > limit:
            imbalanced.append(split)
    id_counts: dict[str, int] = {}
    owner: dict[tuple[str, int], list[str]] = {}
    for r in manifest.records:
        id_counts[r.id] = id_counts.get(r.id, 0) + 1
        owner.setdefault((r.session_id, r.frame_index), []).append(r.split)
    duplicates = [rid for rid, n in id_counts.items() if n > 1]
    duplicates += [f"{sid}:{f}" for (sid, f), splits in owner.items() if len(splits) != len(set(splits))]
    overlaps = sorted(k for k, v in owner.items() if len(set(v)) > 1)
    return BalanceReport(
        class_counts=counts,
        ratios=ratios,
        imbalanced=imbalanced,
        overlaps=overlaps,
        duplicates=sorted(set(duplicates)),
        count_mismatch=sum(sum(v.values()) for v in manifest.class_counts.values()) != len(manifest.records),
        mixed_strategies=len({r.strategy for r in manifest.records}) > 1,
    )
