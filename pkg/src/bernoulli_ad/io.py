"""On-disk formats: BDT1 tensor container, PGM previews, key-value configs, checkpoints.

BDT1 layout (little-endian)::

    b"BDT1" | u8 dtype tag | u8 rank | u16 reserved (0) | rank x u64 dims | payload

Tag 0 is bit-packed (row-major, MSB first, zero-padded to a whole byte),
tag 1 is float64.
"""
from __future__ import annotations

import os
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"BDT1"
TAG_BITS = 0
TAG_F64 = 1


class FormatError(ValueError):
    pass


def _atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    _atomic_write_bytes(path, text.encode())


def tensor_to_bytes(arr, dtype: str = None) -> bytes:
    """Serialize ``arr``; ``dtype`` is ``"bits"`` or ``"float64"`` (inferred if None)."""
    arr = np.asarray(arr)
    if dtype is None:
        dtype = "bits" if arr.dtype in (np.bool_, np.uint8) and np.isin(arr, (0, 1)).all() \
            else "float64"
    if arr.ndim > 255:
        raise FormatError("rank too large")
    if dtype == "bits":
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise FormatError("bit tensors must be binary")
        tag, payload = TAG_BITS, np.packbits(arr.astype(np.uint8).ravel()).tobytes()
    elif dtype == "float64":
        tag, payload = TAG_F64, np.ascontiguousarray(arr, dtype="<f8").tobytes()
    else:
        raise FormatError(f"unknown dtype {dtype!r}")
    header = MAGIC + struct.pack("<BBH", tag, arr.ndim, 0) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + payload


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a BDT1 container")
    tag, rank, _ = struct.unpack_from("<BBH", data, 4)
    off = 8 + 8 * rank
    if len(data) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    body = data[off:]
    if tag == TAG_BITS:
        need = (n + 7) // 8
        if len(body) != need:
            raise FormatError(f"payload has {len(body)} bytes, expected {need}")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n)
        return bits.reshape(dims)
    if tag == TAG_F64:
        if len(body) != 8 * n:
            raise FormatError(f"payload has {len(body)} bytes, expected {8 * n}")
        return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(dims)
    raise FormatError(f"unknown dtype tag {tag}")


def write_tensor(path, arr, dtype: str = None):
    _atomic_write_bytes(path, tensor_to_bytes(arr, dtype))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_pgm(path, img, normalize: bool = False):
    """Write a 2-d array as an 8-bit binary PGM; values are clipped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2-d image, got {img.shape}")
    if normalize:
        span = img.max() - img.min()
        img = (img - img.min()) / span if span > 0 else np.zeros_like(img)
    px = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = px.shape
    _atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + px.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    px = np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)
    return px / maxval


def write_image_pgms(prefix, img, normalize=False):
    """One PGM per channel: ``<prefix>_c<k>.pgm``; 2-d inputs write ``<prefix>.pgm``.

    Returns the written paths.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        paths = [Path(f"{prefix}.pgm")]
        write_pgm(paths[0], img, normalize)
        return paths
    paths = [Path(f"{prefix}_c{k}.pgm") for k in range(len(img))]
    for path, ch in zip(paths, img):
        write_pgm(path, ch, normalize)
    return paths


# key-value text -------------------------------------------------------------

def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


# checkpoints ----------------------------------------------------------------

def _atomic_dir(path, writer):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        writer(tmp)
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def save_checkpoint(path, denoiser, schedule, iteration: int = 0, seed: int = 0):
    """Write schedule, architecture, parameters and training position to a directory."""
    meta = {"format": "bernoulli-ad-model/1", "iteration": iteration, "seed": seed}
    meta.update({f"schedule.{k}": v for k, v in schedule.params().items()})
    meta.update({f"arch.{k}": v for k, v in denoiser.arch.to_dict().items()})

    def writer(d):
        (d / "meta.cfg").write_text(format_kv(meta))
        (d / "params.bdt").write_bytes(tensor_to_bytes(denoiser.params, "float64"))
        (d / "beta.bdt").write_bytes(tensor_to_bytes(np.asarray(schedule.beta), "float64"))

    _atomic_dir(path, writer)


def load_checkpoint(path):
    """Return ``(denoiser, schedule, meta)``."""
    from .denoiser import Architecture, ConvDenoiser
    from .schedule import schedule_from_betas

    path = Path(path)
    meta = parse_kv((path / "meta.cfg").read_text())
    arch = Architecture(
        channels=int(meta["arch.channels"]), width=int(meta["arch.width"]),
        n_blocks=int(meta["arch.n_blocks"]), kernel=int(meta["arch.kernel"]),
        emb_dim=int(meta["arch.emb_dim"]), recenter=meta["arch.recenter"] == "True")
    den = ConvDenoiser(arch, params=read_tensor(path / "params.bdt"))
    extra = {}
    for key in ("beta_start", "beta_end"):
        if f"schedule.{key}" in meta:
            extra[key] = float(meta[f"schedule.{key}"])
    sched = schedule_from_betas(read_tensor(path / "beta.bdt"), meta.get("schedule.kind", "custom"),
                                **extra)
    return den, sched, meta


def save_codec(path, codec):
    from .codec import BitplaneCodec

    state = codec.to_state()
    params = state.pop("params", None)
    if isinstance(codec, BitplaneCodec):
        state["image_shape"] = ",".join(str(v) for v in state["image_shape"])

    def writer(d):
        (d / "codec.cfg").write_text(format_kv(state))
        if params is not None:
            (d / "params.bdt").write_bytes(tensor_to_bytes(params, "float64"))

    _atomic_dir(path, writer)


def load_codec(path):
    from .codec import BinaryAutoencoder, BitplaneCodec

    path = Path(path)
    state = parse_kv((path / "codec.cfg").read_text())
    if state["kind"] == "bitplane":
        shape = tuple(int(s) for s in state["image_shape"].split(","))
        codec = BitplaneCodec(bits=int(state["bits"]), factor=int(state["factor"]))
        return codec.fit(np.zeros((1,) + shape))
    ae = BinaryAutoencoder(
        latent_channels=int(state["latent_channels"]), factor=int(state["factor"]),
        width=int(state["width"]), learning_rate=float(state["learning_rate"]),
        batch_size=int(state["batch_size"]), iterations=int(state["iterations"]),
        optimizer=state["optimizer"], seed=int(state["seed"]))
    shape = tuple(int(v) for v in state.get("image_shape", "").split(",") if v)
    ae.initialize(int(state["n_channels"]), shape or None)
    ae.params_ = read_tensor(path / "params.bdt").copy()
    return ae
