"""Persisted formats: the RGB-D frame container, truth streams and dataset manifests."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import BoundingBox, CameraIntrinsics, RgbdFrame
from .perception import KeypointSet
from .simworld.people import Gaze
from .simworld.scene import GroundTruthRecord, render_frame, default_camera
from .simworld.scripts import ScenarioScript, dump_script, load_script

RGBD_MAGIC = b"RGBD"
RGBD_VERSION = 1
_HEADER = struct.Struct("<4sHHHI")
_FRAME = struct.Struct("<Id")
DATASET_FORMAT = "socialcues-dataset"
DATASET_VERSION = 1
FRAMES_FILE = "frames.rgbd"
TRUTH_FILE = "truth.jsonl"
SCRIPT_FILE = "script.json"


class DataError(ValueError):
    """Malformed, missing or checksum-mismatched persisted data."""


class ArtifactExistsError(FileExistsError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def check_writable(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise ArtifactExistsError(f"{path} exists; pass --force to overwrite")
    return path


# -- frame container -------------------------------------------------------


def write_rgbd(path, frames: Iterable[RgbdFrame]) -> int:
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to write")
    w, h = frames[0].width, frames[0].height
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RGBD_MAGIC, RGBD_VERSION, w, h, len(frames)))
        for f in frames:
            if (f.width, f.height) != (w, h):
                raise ValueError("all frames in a container share one size")
            fh.write(_FRAME.pack(f.index, f.timestamp))
            fh.write(np.ascontiguousarray(f.rgb).tobytes())
            fh.write(np.ascontiguousarray(f.depth, dtype="<f4").tobytes())
    return len(frames)


def iter_rgbd(path) -> Iterator[RgbdFrame]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, w, h, count = _HEADER.unpack(head)
        if magic != RGBD_MAGIC:
            raise DataError(f"{path}: not an RGBD container")
        if version != RGBD_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        n_rgb, n_depth = w * h * 3, w * h * 4
        for _ in range(count):
            rec = fh.read(_FRAME.size + n_rgb + n_depth)
            if len(rec) != _FRAME.size + n_rgb + n_depth:
                raise DataError(f"{path}: truncated frame data")
            index, ts = _FRAME.unpack_from(rec)
            rgb = np.frombuffer(rec, dtype=np.uint8, count=n_rgb, offset=_FRAME.size).reshape(h, w, 3).copy()
            depth = np.frombuffer(rec, dtype="<f4", count=w * h, offset=_FRAME.size + n_rgb).reshape(h, w).astype(np.float32)
            yield RgbdFrame(rgb, depth, ts, index)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after {count} frames")


def read_rgbd(path) -> list[RgbdFrame]:
    return list(iter_rgbd(path))


# -- truth stream ----------------------------------------------------------


def record_to_json(r: GroundTruthRecord) -> dict:
    return {
        "frame_index": r.frame_index,
        "true_object_box": None if r.true_object_box is None else list(r.true_object_box.as_tuple()),
        "keypoints": [kp.to_json() for kp in r.keypoints],
        "teacher_ref": r.teacher_ref,
        "teacher_gaze": r.teacher_gaze.value,
        "object_visible": r.object_visible,
        "identities": list(r.identities),
        "object_depth": None if not np.isfinite(r.object_depth) else r.object_depth,
    }


def record_from_json(d: dict) -> GroundTruthRecord:
    box = d.get("true_object_box")
    depth = d.get("object_depth")
    return GroundTruthRecord(
        frame_index=int(d["frame_index"]),
        true_object_box=None if box is None else BoundingBox.from_seq(box),
        keypoints=tuple(KeypointSet.from_json(k) for k in d["keypoints"]),
        teacher_ref=d.get("teacher_ref"),
        teacher_gaze=Gaze(d["teacher_gaze"]),
        object_visible=bool(d["object_visible"]),
        identities=tuple(d.get("identities", ())),
        object_depth=float("nan") if depth is None else float(depth),
    )


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- datasets --------------------------------------------------------------


@dataclass
class LoadedSequence:
    """One rendered sequence loaded from a dataset directory."""

    name: str
    script: ScenarioScript
    frames: list[RgbdFrame]
    truth: list[GroundTruthRecord]

    @property
    def label(self) -> str:
        return self.script.object.label

    def teacher_keypoints(self) -> list[Optional[KeypointSet]]:
        return [r.teacher_keypoints() for r in self.truth]


@dataclass
class DatasetManifest:
    camera: CameraIntrinsics
    registry: list[str]
    sequences: list[dict] = field(default_factory=list)
    version: int = DATASET_VERSION

    @property
    def frame_count(self) -> int:
        return sum(int(s["n_frames"]) for s in self.sequences)

    def to_json(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": self.version,
            "camera": self.camera.to_dict(),
            "frame_count": self.frame_count,
            "registry": list(self.registry),
            "sequences": self.sequences,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        if d.get("format") != DATASET_FORMAT:
            raise DataError("not a dataset manifest")
        if d.get("version") != DATASET_VERSION:
            raise DataError(f"unsupported dataset version {d.get('version')}")
        m = cls(CameraIntrinsics(**d["camera"]), list(d["registry"]), list(d["sequences"]), int(d["version"]))
        if m.frame_count != int(d["frame_count"]):
            raise DataError("manifest frame count disagrees with its sequences")
        return m


def sequence_name(script: ScenarioScript) -> str:
    return f"{script.kind.value}_{script.object.label}_s{script.seed}"


def write_sequence(root, script: ScenarioScript) -> dict:
    """Render ``script`` into ``root/<name>/`` and return its manifest entry."""
    name = sequence_name(script)
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    cam = default_camera(script.width, script.height)
    frames, truth = [], []
    for i in range(script.n_frames):
        f, r = render_frame(script, i, cam)
        frames.append(f)
        truth.append(record_to_json(r))
    write_rgbd(d / FRAMES_FILE, frames)
    write_jsonl(d / TRUTH_FILE, truth)
    dump_script(script, d / SCRIPT_FILE)
    return {
        "name": name,
        "label": script.object.label,
        "scenario": script.kind.value,
        "seed": script.seed,
        "n_frames": script.n_frames,
        "checksums": {fn: sha256_file(d / fn) for fn in (FRAMES_FILE, TRUTH_FILE, SCRIPT_FILE)},
    }


def write_dataset(root, scripts: Sequence[ScenarioScript], force: bool = False) -> DatasetManifest:
    root = Path(root)
    manifest_path = check_writable(root / "manifest.json", force)
    root.mkdir(parents=True, exist_ok=True)
    cams = {(s.width, s.height) for s in scripts}
    if len(cams) != 1:
        raise ValueError("a dataset uses a single camera")
    w, h = cams.pop()
    registry: list[str] = []
    entries = []
    for s in scripts:
        entries.append(write_sequence(root, s))
        if s.object.label not in registry:
            registry.append(s.object.label)
    m = DatasetManifest(default_camera(w, h), registry, entries)
    manifest_path.write_text(json.dumps(m.to_json(), indent=2, sort_keys=True))
    return m


def load_manifest(root, verify: bool = True) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DataError(f"{root} has no manifest.json")
    try:
        m = DatasetManifest.from_json(json.loads(path.read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed manifest: {exc}") from exc
    if verify:
        for s in m.sequences:
            for fn, digest in s["checksums"].items():
                p = root / s["name"] / fn
                if not p.exists():
                    raise DataError(f"missing {p}")
                if sha256_file(p) != digest:
                    raise DataError(f"checksum mismatch for {p}")
    return m


def load_sequence(root, entry: dict) -> LoadedSequence:
    d = Path(root) / entry["name"]
    frames = read_rgbd(d / FRAMES_FILE)
    truth = [record_from_json(r) for r in read_jsonl(d / TRUTH_FILE)]
    if len(frames) != len(truth) or len(frames) != int(entry["n_frames"]):
        raise DataError(f"{d}: frame and truth counts disagree")
    return LoadedSequence(entry["name"], load_script(d / SCRIPT_FILE), frames, truth)


def load_dataset(root, verify: bool = True) -> tuple[DatasetManifest, list[LoadedSequence]]:
    m = load_manifest(root, verify)
    return m, [load_sequence(root, e) for e in m.sequences]
