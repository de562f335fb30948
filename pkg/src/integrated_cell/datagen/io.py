"""Corpus storage: one float32 TIFF per image (channel names in the TIFF
description as JSON) and a line-delimited JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import tifffile
import yaml

from ..errors import ImageError

MANIFEST = "manifest.jsonl"
SPEC = "spec.yaml"
CHANNELS = ("membrane", "nucleus", "structure")


def write_image(path, img: np.ndarray, channels, **meta) -> None:
    desc = json.dumps({"channels": list(channels), **meta}, sort_keys=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(path, np.asarray(img, dtype=np.float32), description=desc,
                     metadata=None, photometric="minisblack")


def read_image(path) -> tuple[np.ndarray, dict]:
    try:
        with tifffile.TiffFile(path) as tf:
            arr = tf.asarray()
            desc = tf.pages[0].description
    except (OSError, ValueError, tifffile.TiffFileError) as e:
        raise ImageError(f"cannot read image {path}: {e}") from e
    try:
        meta = json.loads(desc) if desc else {}
    except json.JSONDecodeError:
        meta = {}
    if arr.ndim == 2:
        arr = arr[None]
    if not np.isfinite(arr).all():
        raise ImageError(f"{path} contains non-finite pixels")
    return arr.astype(np.float32), meta


def write_manifest(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_corpus(root, images: np.ndarray, records, spec=None) -> list[dict]:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    out = []
    for img, r in zip(images, records):
        r = dict(r)
        rel = f"images/{r['id']}.tif"
        write_image(root / rel, img, CHANNELS, label=r["label"], structure=r["structure"])
        r["path"] = rel
        out.append(r)
    write_manifest(root / MANIFEST, out)
    if spec is not None:
        (root / SPEC).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=True))
    return out


def read_corpus(root, split: str | None = None):
    """Load ``(images, labels, records)``, optionally restricted to one split."""
    root = Path(root)
    mpath = root / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest at {mpath}")
    records = read_manifest(mpath)
    if split is not None:
        records = [r for r in records if r.get("split") == split]
    if not records:
        return np.zeros((0, 3, 1, 1), np.float32), np.zeros(0, np.int64), []
    images = np.stack([read_image(root / r["path"])[0] for r in records])
    labels = np.array([r["label"] for r in records], dtype=np.int64)
    return images, labels, records
