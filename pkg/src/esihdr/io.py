"""PNG and PFM codecs, scene directories and checkpoints.

PNG carries 8-bit LDR data. PFM carries HDR data as little-endian float32
with scale -1.0 and rows stored bottom to top. Checkpoints are a flat
``params.bin`` of float64 blobs described by ``manifest.json``.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from PIL import Image

from .config import NetworkConfig
from .imaging import ExposureStack, HdrImage, LdrImage
from .mhdr import HdrNet

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
STACK_FILES = ("ldr_0.png", "ldr_1.png", "ldr_2.png")
CHECKPOINT_FORMAT = "esihdr-checkpoint-1"


class DataError(ValueError):
    """Input file that cannot be decoded."""


class MalformedHeader(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class UnsupportedBitDepth(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


# -- PNG -----------------------------------------------------------------


def _png_bit_depth(path):
    with open(path, "rb") as fh:
        head = fh.read(26)
    if len(head) < 26 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise MalformedHeader(f"{path}: not a PNG file")
    return head[24]


def read_png(path):
    """8-bit PNG to floats in [0, 1]: ``H x W x 3`` for colour, ``H x W`` for grey."""
    depth = _png_bit_depth(path)
    if depth != 8:
        raise UnsupportedBitDepth(f"{path}: {depth}-bit PNG; only 8-bit is supported")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "RGBA":
                im = im.convert("RGB")
            if im.mode not in ("RGB", "L"):
                raise UnsupportedBitDepth(f"{path}: PNG mode {im.mode} is not 8-bit RGB or grey")
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise TruncatedPayload(f"{path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def write_png(path, pixels):
    """Write values in [0, 1] as 8-bit PNG (rounded to the nearest level)."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"PNG data must be H x W or H x W x 3, got {arr.shape}")
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


# -- PFM -----------------------------------------------------------------


def _read_token(fh, path):
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise MalformedHeader(f"{path}: header ends early")
        if ch.isspace():
            if tok:
                return tok.decode("ascii", errors="replace")
            continue
        tok += ch
        if len(tok) > 32:
            raise MalformedHeader(f"{path}: header token too long")


def read_pfm(path):
    """Return float32 pixels, ``H x W x 3`` for ``PF`` or ``H x W`` for ``Pf``."""
    with open(path, "rb") as fh:
        magic = _read_token(fh, path)
        if magic not in ("PF", "Pf"):
            raise MalformedHeader(f"{path}: bad PFM magic {magic!r}")
        try:
            w = int(_read_token(fh, path))
            h = int(_read_token(fh, path))
            scale = float(_read_token(fh, path))
        except ValueError as exc:
            raise MalformedHeader(f"{path}: {exc}") from exc
        if w <= 0 or h <= 0 or scale == 0.0:
            raise MalformedHeader(f"{path}: bad dimensions {w}x{h} or scale {scale}")
        channels = 3 if magic == "PF" else 1
        count = w * h * channels
        payload = fh.read(4 * count)
    if len(payload) < 4 * count:
        raise TruncatedPayload(f"{path}: expected {4 * count} payload bytes, got {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    arr = arr.reshape((h, w, channels) if channels == 3 else (h, w))
    return np.ascontiguousarray(arr[::-1])


def write_pfm(path, pixels):
    arr = np.asarray(pixels)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    elif arr.ndim == 2:
        magic = b"Pf"
    else:
        raise ValueError(f"PFM data must be H x W or H x W x 3, got {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii") + body)


# -- scenes --------------------------------------------------------------


def write_stack(directory, stack):
    os.makedirs(directory, exist_ok=True)
    for name, im in zip(STACK_FILES, stack.images):
        write_png(os.path.join(directory, name), im.pixels)
    frames = [{"file": n, "ev": im.ev, "t": im.exposure_time} for n, im in zip(STACK_FILES, stack.images)]
    with open(os.path.join(directory, "exposure.json"), "w") as fh:
        json.dump({"frames": frames}, fh, indent=2)


def read_stack(directory):
    path = os.path.join(directory, "exposure.json")
    try:
        with open(path) as fh:
            frames = json.load(fh)["frames"]
        meta = [(f["file"], float(f["ev"]), float(f["t"])) for f in frames]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    images = []
    for name, ev, t in meta:
        px = read_png(os.path.join(directory, name))
        if px.ndim == 2:
            raise DataError(f"{name}: exposures must be RGB")
        images.append(LdrImage(px, t, ev))
    try:
        return ExposureStack(images)
    except ValueError as exc:
        raise DataError(f"{directory}: {exc}") from exc


def write_scene(directory, scene):
    """Stack, ``gt.pfm`` and ``mask.png`` for one synthetic scene."""
    write_stack(directory, scene.stack)
    write_pfm(os.path.join(directory, "gt.pfm"), scene.ground_truth.pixels)
    write_png(os.path.join(directory, "mask.png"), scene.motion_mask.astype(np.float64))


def read_hdr(path):
    arr = read_pfm(path)
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a 3-channel PFM")
    try:
        return HdrImage(arr.astype(np.float64))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(directory, model):
    """Write every parameter and running statistic of ``model``."""
    os.makedirs(directory, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, arr in model.store.state_dict().items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
        blobs.append(blob)
        offset += len(blob)
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "network": {k: getattr(model.cfg, k) for k in model.cfg.__dataclass_fields__},
        "training": model.store.training,
        "entries": entries,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(directory):
    """Rebuild the network from a manifest and fill in its saved values."""
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(directory, "params.bin"), "rb") as fh:
            raw = fh.read()
    except (OSError, ValueError) as exc:
        raise DataError(f"{directory}: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise MalformedHeader(f"{directory}: unknown checkpoint format {manifest.get('format')!r}")
    state = {}
    for e in manifest["entries"]:
        blob = raw[e["offset"]:e["offset"] + e["nbytes"]]
        if len(blob) != e["nbytes"]:
            raise TruncatedPayload(f"{directory}: params.bin ends inside {e['name']}")
        if hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise ChecksumMismatch(f"{directory}: checksum mismatch for {e['name']}")
        state[e["name"]] = np.frombuffer(blob, dtype="<f8").reshape(e["shape"])
    model = HdrNet(NetworkConfig(**manifest["network"]))
    model.store.load_state_dict(state)
    model.store.training = bool(manifest.get("training", False))
    return model
