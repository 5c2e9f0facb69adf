"""Dataset layout, two-channel depth packing and the JSON manifest.

Layout of a dataset directory::

    manifest.json
    frames/NNNN_rgb.png         8-bit intensity, gray replicated over RGB
    frames/NNNN_depth.png       R = high byte, G = low byte, B = 0
    frames/NNNN_mask_left.png   1-bit
    frames/NNNN_mask_right.png  1-bit

Depth is stored normalized by one dataset-wide scale (mm per unit).
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError, DomainError, EmptyFrameError
from .geometry import CameraIntrinsics
from .kinematics import RobotState, SegmentLengths
from .photometry import normals_from_depth
from .render import FrameBundle, render, specular_mask
from .scene import Lumen, Scene

SCHEMA = "endosim.dataset"
SCHEMA_VERSION = 1
DEFAULT_SCALE_MM = 128.0
DEFAULT_INTRINSICS = CameraIntrinsics(90.0, 90.0, 111.5, 111.5, 224, 224)
DEPTH_ENCODING = {
    "channels": {"R": "high", "G": "low", "B": "zero"},
    "high": "floor(d * 256)",
    "low": "round(frac(d * 256) * 255)",
    "decode": "scale_mm * (high / 256 + (low / 255) / 256)",
}
MIN_MASK_PX = 100
_STATE_TRIES = 20


# ---------------------------------------------------------------- depth packing

def encode_depth(d):
    """Split normalized depth in [0, 1) into (high, low) bytes.

    Note that (h, 255) and (h + 1, 0) decode to the same value, so the
    encoder may emit either for depths on those boundaries.
    """
    d = np.asarray(d, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d >= 1.0):
        raise DomainError("normalized depth must lie in [0, 1)")
    scaled = d * 256.0
    high = np.floor(scaled)
    low = np.rint((scaled - high) * 255.0)
    return high.astype(np.uint8), low.astype(np.uint8)


def decode_depth(high, low, scale: float = 1.0):
    """Depth from the two bytes; ``scale`` is mm per normalized unit."""
    if not scale > 0:
        raise DomainError("scale must be positive")
    h = np.asarray(high, dtype=float)
    lo = np.asarray(low, dtype=float)
    return scale * (h / 256.0 + (lo / 255.0) / 256.0)


def depth_to_rgb(depth_mm, scale: float) -> np.ndarray:
    d = np.asarray(depth_mm, dtype=float) / scale
    if np.any(d >= 1.0):
        raise DatasetError(f"depth {float(np.max(depth_mm)):.6g} mm does not fit scale {scale:.6g} mm")
    high, low = encode_depth(d)
    return np.stack([high, low, np.zeros_like(high)], axis=-1)


def rgb_to_depth(rgb, scale: float) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 2:
        raise DatasetError("encoded depth needs at least two channels")
    return decode_depth(rgb[..., 0], rgb[..., 1], scale)


# ---------------------------------------------------------------- file helpers

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_png(path, array, mode: str | None = None) -> None:
    img = Image.fromarray(np.asarray(array))
    if mode is not None:
        img = img.convert(mode)
    _atomic_write(Path(path), lambda tmp: img.save(tmp, format="PNG"))


def load_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with Image.open(path) as img:
        return np.array(img)


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
    _atomic_write(Path(path), write)


def intensity_to_bytes(intensity) -> np.ndarray:
    return np.rint(np.clip(np.asarray(intensity, float), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_intensity(path, intensity) -> None:
    g = intensity_to_bytes(intensity)
    save_png(path, np.stack([g, g, g], axis=-1))


def load_intensity(path) -> np.ndarray:
    a = load_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    return a.astype(float) / 255.0


def save_mask(path, mask) -> None:
    save_png(path, (np.asarray(mask) > 0).astype(np.uint8) * 255, mode="1")


def load_mask(path) -> np.ndarray:
    return (load_png(path) > 0).astype(np.uint8)


def save_depth(path, depth_mm, scale: float) -> None:
    save_png(path, depth_to_rgb(depth_mm, scale))


def load_depth(path, scale: float) -> np.ndarray:
    return rgb_to_depth(load_png(path), scale)


# ---------------------------------------------------------------- manifest

FILE_KEYS = ("rgb", "depth", "mask_left", "mask_right")


@dataclass
class FrameRecord:
    index: int
    state_left: RobotState | None
    state_right: RobotState | None
    files: dict
    sha256: dict = field(default_factory=dict)
    sigma0: float = 1.0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "state_left": None if self.state_left is None else self.state_left.to_dict(),
            "state_right": None if self.state_right is None else self.state_right.to_dict(),
            "files": dict(self.files),
            "sha256": dict(self.sha256),
            "sigma0": self.sigma0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRecord":
        def st(x):
            return None if x is None else RobotState.from_dict(x)
        return cls(int(d["index"]), st(d.get("state_left")), st(d.get("state_right")),
                   dict(d["files"]), dict(d.get("sha256", {})), float(d.get("sigma0", 1.0)))


@dataclass
class Manifest:
    dataset_id: str
    intrinsics: CameraIntrinsics
    scene_seed: int
    scene: dict
    lengths: SegmentLengths
    frames: list
    depth_scale_mm: float = DEFAULT_SCALE_MM
    units: dict = field(default_factory=lambda: {"length": "mm", "angle": "rad", "intensity": "8-bit, 1/255 per step"})
    root: Path | None = None

    def __post_init__(self):
        if not self.depth_scale_mm > 0:
            raise DatasetError("depth scale must be positive")
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DatasetError("frame indices must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "intrinsics": self.intrinsics.to_dict(),
            "scene_seed": self.scene_seed,
            "scene": self.scene,
            "lengths": self.lengths.to_dict(),
            "units": self.units,
            "depth_scale_mm": self.depth_scale_mm,
            "depth_encoding": DEPTH_ENCODING,
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict, root=None) -> "Manifest":
        if d.get("schema") != SCHEMA:
            raise DatasetError(f"not a dataset manifest (schema {d.get('schema')!r})")
        if int(d.get("schema_version", -1)) != SCHEMA_VERSION:
            raise DatasetError(f"unsupported schema_version {d.get('schema_version')!r}")
        if d.get("depth_encoding", DEPTH_ENCODING) != DEPTH_ENCODING:
            raise DatasetError("unsupported depth encoding")
        try:
            return cls(str(d["dataset_id"]), CameraIntrinsics.from_dict(d["intrinsics"]),
                       int(d["scene_seed"]), dict(d["scene"]), SegmentLengths.from_dict(d["lengths"]),
                       [FrameRecord.from_dict(f) for f in d["frames"]], float(d["depth_scale_mm"]),
                       dict(d["units"]), None if root is None else Path(root))
        except KeyError as e:
            raise DatasetError(f"manifest lacks field {e.args[0]!r}") from None

    def frame(self, index: int) -> FrameRecord:
        for f in self.frames:
            if f.index == index:
                return f
        raise DatasetError(f"no frame {index} in dataset {self.dataset_id}")

    def path(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def check_files(self) -> None:
        for f in self.frames:
            for key in FILE_KEYS:
                p = self.path(f.files[key])
                if not p.is_file():
                    raise DatasetError(f"missing file: {p}")


def manifest_path(root) -> Path:
    return Path(root) / "manifest.json"


def save_manifest(manifest: Manifest, root) -> Path:
    p = manifest_path(root)
    write_json(p, manifest.to_dict())
    return p


def load_manifest(root, check: bool = True) -> Manifest:
    p = Path(root)
    if p.is_dir():
        p = manifest_path(p)
    if not p.is_file():
        raise DatasetError(f"missing file: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest {p}: {e}") from None
    m = Manifest.from_dict(d, root=p.parent)
    if check:
        m.check_files()
    return m


# ---------------------------------------------------------------- frames

def frame_files(index: int) -> dict:
    return {key: f"frames/{index:04d}_{key}.png" for key in FILE_KEYS}


def write_frame(root, index: int, frame: FrameBundle, scale: float,
                state_left: RobotState | None = None, state_right: RobotState | None = None) -> FrameRecord:
    """Write one frame's rasters under ``root`` and return its manifest record."""
    root = Path(root)
    files = frame_files(index)
    save_intensity(root / files["rgb"], frame.intensity)
    save_depth(root / files["depth"], frame.depth, scale)
    save_mask(root / files["mask_left"], frame.mask_left)
    save_mask(root / files["mask_right"], frame.mask_right)
    sums = {k: sha256(root / v) for k, v in files.items()}
    return FrameRecord(index, state_left, state_right, files, sums, float(frame.sigma0))


def read_frame(manifest: Manifest, index: int, verify: bool = True) -> FrameBundle:
    """Load one frame; normals are recomputed from the decoded depth."""
    rec = manifest.frame(index)
    paths = {k: manifest.path(rec.files[k]) for k in FILE_KEYS}
    for k, p in paths.items():
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")
        if verify and k in rec.sha256 and sha256(p) != rec.sha256[k]:
            raise DatasetError(f"checksum mismatch: {p}")
    intensity = load_intensity(paths["rgb"])
    depth = load_depth(paths["depth"], manifest.depth_scale_mm)
    ml, mr = load_mask(paths["mask_left"]), load_mask(paths["mask_right"])
    shape = manifest.intrinsics.shape
    for name, a in (("rgb", intensity), ("depth", depth), ("mask_left", ml), ("mask_right", mr)):
        if a.shape != shape:
            raise DatasetError(f"{paths[name]}: shape {a.shape} does not match intrinsics {shape}")
    valid = depth > 0
    normal = np.zeros(shape + (3,))
    if valid.all():
        n, ok = normals_from_depth(depth, manifest.intrinsics)
        normal[ok] = n[ok]
    return FrameBundle(intensity, depth, normal, ml, mr, specular_mask(intensity), rec.sigma0)


# ---------------------------------------------------------------- generation

def random_state(rng: np.random.Generator) -> RobotState:
    return RobotState(
        alpha=float(rng.uniform(0.0, np.pi / 2)),
        beta=float(rng.uniform(0.0, np.pi / 2)),
        gamma=float(rng.uniform(-np.pi / 8, np.pi / 8)),
        delta=float(rng.uniform(-np.pi, np.pi)),
        insertion=float(rng.uniform(3.0, 10.0)),
    )


def scene_for_seed(seed: int) -> Scene:
    return Scene(Lumen.random(seed), auto_exposure=True)


def render_frame(seed: int, index: int, K: CameraIntrinsics, lengths: SegmentLengths):
    """Render frame ``index`` of scene ``seed``; both instruments keep at least MIN_MASK_PX pixels.

    States are drawn from a generator keyed by (seed, index), so any frame can
    be regenerated on its own.
    """
    scene = scene_for_seed(seed)
    rng = np.random.default_rng([seed, index])
    frame = left = right = None
    for _ in range(_STATE_TRIES):
        left, right = random_state(rng), random_state(rng)
        frame = render(scene, left, right, K, lengths)
        if frame.mask_left.sum() >= MIN_MASK_PX and frame.mask_right.sum() >= MIN_MASK_PX:
            break
    if frame is None:
        raise EmptyFrameError("could not render a frame")
    return frame, left, right


def generate_dataset(root, seed: int, frames: int, K: CameraIntrinsics | None = None,
                     lengths: SegmentLengths | None = None, scale: float = DEFAULT_SCALE_MM) -> Manifest:
    if frames < 1:
        raise DomainError("frames must be >= 1")
    K = K or DEFAULT_INTRINSICS
    lengths = lengths or SegmentLengths()
    root = Path(root)
    records = []
    for i in range(frames):
        frame, left, right = render_frame(seed, i, K, lengths)
        records.append(write_frame(root, i, frame, scale, left, right))
    scene = scene_for_seed(seed)
    m = Manifest(f"endosim-s{seed}-n{frames}", K, seed,
                 {"lumen": scene.tissue.to_dict(), "light_pos": [0.0, 0.0, 0.0], "auto_exposure": True},
                 lengths, records, scale, root=root)
    save_manifest(m, root)
    return m


def regenerate_frame(manifest: Manifest, index: int) -> FrameBundle:
    frame, _, _ = render_frame(manifest.scene_seed, index, manifest.intrinsics, manifest.lengths)
    return frame
