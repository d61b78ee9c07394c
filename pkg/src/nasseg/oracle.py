"""Model oracle gateway: logits and activations behind a uniform interface.

Backends:

* ``file://<dir>`` — a precomputed store. Layout::

      <root>/manifest.json
      <root>/images/<id>.png
      <root>/acts/act_<id>_d<k>.npy
      <root>/logits/logits_<id>.npy
      <root>/saliency/<method>_<id>.npy      (optional)

  Queries are answered by matching the standardized image bytes against the
  stored images, so novel (e.g. masked) images raise ``NotPrecomputedError``.

* ``http://host:port`` — a live service speaking JSON over HTTP/1.1.
  Tensor payloads are ``{"dtype": "float32", "shape": [...], "data":
  base64(little-endian f32, C order)}``. Endpoints: ``GET /v1/meta``,
  ``POST /v1/logits`` with ``{"tensor": ...}``, ``POST /v1/activations``
  with ``{"tensor": [1,C,H,W], "depths": [...]}``.

* ``synthetic://linear?...`` — an in-process linear model over pixels, used
  by tests and benchmarks so masking experiments run with no external
  process.

Standardization convention: PNG values in [0, 255] are scaled to [0, 1],
then shifted/scaled per channel by the meta's normalization constants, then
transposed to [C, H, W]. Masking zeroes standardized pixels.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib import error as urlerror
from urllib import parse as urlparse
from urllib import request as urlrequest

import numpy as np

from . import tensorio
from .errors import (
    BadManifestError,
    MetaMismatchError,
    NotPrecomputedError,
    OracleFailure,
    ShapeMismatchError,
    UnreachableError,
)


@dataclass
class ModelMeta:
    num_classes: int
    depths: int
    channels: list[int]
    input_size: tuple[int, int, int]  # (H, W, C)
    mean: list[float]
    std: list[float]
    spatial: list[tuple[int, int]] | None = None  # per-depth (h, w), optional

    def __post_init__(self):
        if self.num_classes < 2:
            raise BadManifestError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.channels) != self.depths:
            raise BadManifestError(
                f"channels list has {len(self.channels)} entries for {self.depths} depths"
            )
        h, w, c = self.input_size
        if min(h, w, c) < 1:
            raise BadManifestError(f"bad input_size {self.input_size}")
        if len(self.mean) != c or len(self.std) != c:
            raise BadManifestError("normalization constants must have one entry per channel")
        if self.spatial is not None and len(self.spatial) != self.depths:
            raise BadManifestError("spatial list must have one entry per depth")

    def to_json(self) -> dict:
        doc = {
            "num_classes": self.num_classes,
            "depths": self.depths,
            "channels": list(self.channels),
            "input_size": list(self.input_size),
            "normalization": {"mean": list(self.mean), "std": list(self.std)},
        }
        if self.spatial is not None:
            doc["spatial"] = [list(s) for s in self.spatial]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ModelMeta":
        try:
            norm = doc["normalization"]
            return cls(
                num_classes=int(doc["num_classes"]),
                depths=int(doc["depths"]),
                channels=[int(c) for c in doc["channels"]],
                input_size=tuple(int(v) for v in doc["input_size"]),
                mean=[float(v) for v in norm["mean"]],
                std=[float(v) for v in norm["std"]],
                spatial=[tuple(int(v) for v in s) for s in doc["spatial"]]
                if "spatial" in doc
                else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadManifestError(f"bad manifest: {exc}") from exc

    def same_contract(self, other: "ModelMeta") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.depths == other.depths
            and list(self.channels) == list(other.channels)
            and tuple(self.input_size) == tuple(other.input_size)
            and np.allclose(self.mean, other.mean)
            and np.allclose(self.std, other.std)
        )


def standardize(image_hwc, meta: ModelMeta) -> np.ndarray:
    """[H, W, C] pixels in [0, 255] -> standardized [C, H, W] float32."""
    img = np.asarray(image_hwc, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != meta.input_size[2]:
        raise ShapeMismatchError(f"expected [H, W, {meta.input_size[2]}], got {img.shape}")
    mean = np.asarray(meta.mean, dtype=np.float32)
    std = np.asarray(meta.std, dtype=np.float32)
    out = (img / np.float32(255.0) - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


# --- wire payloads ---


def encode_tensor(arr) -> dict:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    return {
        "dtype": "float32",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_tensor(payload: dict) -> np.ndarray:
    if not isinstance(payload, dict):
        raise ValueError("tensor payload must be an object")
    if payload.get("dtype") != "float32":
        raise ValueError(f"unsupported payload dtype {payload.get('dtype')!r}")
    shape = tuple(int(s) for s in payload["shape"])
    if any(s < 1 for s in shape) or not shape:
        raise ValueError(f"bad payload shape {shape}")
    raw = base64.b64decode(payload["data"], validate=True)
    count = int(np.prod(shape))
    if len(raw) != count * 4:
        raise ValueError(f"payload holds {len(raw)} bytes, shape implies {count * 4}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


# --- backends ---


class OracleHandle:
    """Common surface: ``meta``, ``logits(batch)``, ``activations(image, depths)``."""

    backend = "abstract"
    meta: ModelMeta

    def logits(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def activations(self, image: np.ndarray, depths: list[int]) -> list[np.ndarray]:
        raise NotImplementedError

    def _check_batch(self, batch) -> np.ndarray:
        arr = np.asarray(batch, dtype=np.float32)
        h, w, c = self.meta.input_size
        if arr.ndim != 4 or arr.shape[1:] != (c, h, w):
            raise ShapeMismatchError(
                f"expected batch [N, {c}, {h}, {w}], got {arr.shape}"
            )
        return arr

    def _check_image(self, image) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float32)
        h, w, c = self.meta.input_size
        if arr.shape != (c, h, w):
            raise ShapeMismatchError(f"expected image [{c}, {h}, {w}], got {arr.shape}")
        return arr

    def _check_depths(self, depths) -> list[int]:
        depths = [int(d) for d in depths]
        if any(not 0 <= d < self.meta.depths for d in depths):
            raise ShapeMismatchError(
                f"depths {depths} outside [0, {self.meta.depths})"
            )
        return depths


class FileOracle(OracleHandle):
    backend = "file"

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / "manifest.json"
        if not manifest.is_file():
            raise BadManifestError(f"{manifest} not found")
        try:
            doc = json.loads(manifest.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadManifestError(f"cannot parse {manifest}: {exc}") from exc
        self.meta = ModelMeta.from_json(doc)
        self._index: dict[bytes, str] | None = None
        self._lock = threading.Lock()

    # -- id-based access (CLI surface) --

    def image_ids(self) -> list[str]:
        img_dir = self.root / "images"
        if not img_dir.is_dir():
            return []
        return sorted(p.stem for p in img_dir.glob("*.png"))

    def load_image(self, image_id: str) -> np.ndarray:
        path = self.root / "images" / f"{image_id}.png"
        if not path.is_file():
            raise NotPrecomputedError(f"no stored image {image_id!r} in {self.root}")
        return tensorio.read_image_png(path)

    def logits_for_id(self, image_id: str) -> np.ndarray:
        path = self.root / "logits" / f"logits_{image_id}.npy"
        if not path.is_file():
            raise NotPrecomputedError(f"no stored logits for image {image_id!r}")
        return tensorio.read_npy(path)

    def activations_for_id(self, image_id: str, depths) -> list[np.ndarray]:
        depths = self._check_depths(depths)
        out = []
        for d in depths:
            path = self.root / "acts" / f"act_{image_id}_d{d}.npy"
            if not path.is_file():
                raise NotPrecomputedError(
                    f"no stored activations for image {image_id!r} depth {d}"
                )
            out.append(tensorio.read_npy(path))
        return out

    def saliency_for_id(self, method: str, image_id: str) -> np.ndarray:
        path = self.root / "saliency" / f"{method}_{image_id}.npy"
        if not path.is_file():
            raise NotPrecomputedError(f"no stored {method!r} saliency for {image_id!r}")
        return tensorio.read_npy(path)

    # -- tensor-based access (oracle contract) --

    def _lookup(self, image_std: np.ndarray) -> str:
        with self._lock:
            if self._index is None:
                index = {}
                for image_id in self.image_ids():
                    std = standardize(self.load_image(image_id), self.meta)
                    index[hashlib.sha256(std.tobytes()).digest()] = image_id
                self._index = index
        key = hashlib.sha256(np.ascontiguousarray(image_std, dtype=np.float32).tobytes()).digest()
        image_id = self._index.get(key)
        if image_id is None:
            raise NotPrecomputedError(
                "file backend cannot serve novel images (content not in store)"
            )
        return image_id

    def logits(self, batch) -> np.ndarray:
        arr = self._check_batch(batch)
        rows = [self.logits_for_id(self._lookup(img)) for img in arr]
        return np.stack(rows).astype(np.float32)

    def activations(self, image, depths) -> list[np.ndarray]:
        arr = self._check_image(image)
        depths = self._check_depths(depths)
        if not depths:
            return []
        return self.activations_for_id(self._lookup(arr), depths)


class HttpOracle(OracleHandle):
    backend = "http"

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.meta = ModelMeta.from_json(self._get("/v1/meta"))

    def _get(self, path: str) -> dict:
        try:
            with urlrequest.urlopen(self.endpoint + path, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urlerror.URLError as exc:
            raise UnreachableError(f"GET {path} failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise OracleFailure(f"GET {path}: bad JSON: {exc}") from exc

    def _post(self, path: str, body: dict) -> dict:
        data = json.dumps(body).encode()
        req = urlrequest.Request(
            self.endpoint + path, data=data, headers={"Content-Type": "application/json"}
        )
        try:
            with urlrequest.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urlerror.HTTPError as exc:
            detail = exc.read().decode(errors="replace")[:200]
            raise OracleFailure(f"POST {path}: HTTP {exc.code}: {detail}") from exc
        except urlerror.URLError as exc:
            raise UnreachableError(f"POST {path} failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise OracleFailure(f"POST {path}: bad JSON: {exc}") from exc

    def logits(self, batch) -> np.ndarray:
        arr = self._check_batch(batch)
        doc = self._post("/v1/logits", {"tensor": encode_tensor(arr)})
        try:
            out = decode_tensor(doc["tensor"])
        except (KeyError, ValueError) as exc:
            raise OracleFailure(f"bad logits response: {exc}") from exc
        if out.shape != (arr.shape[0], self.meta.num_classes):
            raise ShapeMismatchError(f"logits response shape {out.shape}")
        return out

    def activations(self, image, depths) -> list[np.ndarray]:
        arr = self._check_image(image)
        depths = self._check_depths(depths)
        if not depths:
            return []
        doc = self._post(
            "/v1/activations",
            {"tensor": encode_tensor(arr[None]), "depths": depths},
        )
        try:
            tensors = [decode_tensor(p) for p in doc["tensors"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleFailure(f"bad activations response: {exc}") from exc
        if len(tensors) != len(depths):
            raise ShapeMismatchError(
                f"requested {len(depths)} depths, got {len(tensors)} tensors"
            )
        for d, t in zip(depths, tensors):
            if t.ndim != 3 or t.shape[0] != self.meta.channels[d]:
                raise ShapeMismatchError(
                    f"depth {d} activation shape {t.shape} disagrees with meta"
                )
        return tensors


class SyntheticOracle(OracleHandle):
    """Linear scorer over standardized pixels, with deterministic activations.

    Class q's pre-softmax score is sum over pixels of weight_maps[q, h, w]
    times the pixel value summed across channels, so zeroing a region removes
    exactly that region's weighted mass. Activations are seeded random channel
    projections of the block-averaged input, consistent with the meta.
    """

    backend = "synthetic"

    def __init__(self, meta: ModelMeta, seed: int = 0, weight_maps: np.ndarray | None = None):
        self.meta = meta
        h, w, _ = meta.input_size
        rng = np.random.default_rng(seed)
        if weight_maps is None:
            weight_maps = rng.uniform(0.1, 1.0, size=(meta.num_classes, h, w))
        weight_maps = np.asarray(weight_maps, dtype=np.float64)
        if weight_maps.shape != (meta.num_classes, h, w):
            raise ShapeMismatchError(
                f"weight maps must be [{meta.num_classes}, {h}, {w}], got {weight_maps.shape}"
            )
        self.weight_maps = weight_maps
        if meta.spatial is None:
            meta.spatial = [
                (max(1, h // 2 ** (d + 2)), max(1, w // 2 ** (d + 2)))
                for d in range(meta.depths)
            ]
        self._proj = [
            rng.normal(size=(c, meta.input_size[2])).astype(np.float32)
            for c in meta.channels
        ]

    def logits(self, batch) -> np.ndarray:
        arr = self._check_batch(batch)
        pixel_sums = arr.sum(axis=1, dtype=np.float64)  # [N, H, W]
        return np.einsum("nhw,qhw->nq", pixel_sums, self.weight_maps).astype(np.float32)

    def activations(self, image, depths) -> list[np.ndarray]:
        arr = self._check_image(image)
        depths = self._check_depths(depths)
        out = []
        for d in depths:
            hh, ww = self.meta.spatial[d]
            pooled = _block_mean(arr, hh, ww)  # [C, hh, ww]
            out.append(np.einsum("oc,chw->ohw", self._proj[d], pooled).astype(np.float32))
        return out


def _block_mean(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average-pool [C, H, W] to [C, out_h, out_w] (exact when divisible)."""
    c, h, w = arr.shape
    if h % out_h == 0 and w % out_w == 0:
        return arr.reshape(c, out_h, h // out_h, out_w, w // out_w).mean(axis=(2, 4))
    ys = np.linspace(0, h, out_h + 1).astype(int)
    xs = np.linspace(0, w, out_w + 1).astype(int)
    out = np.empty((c, out_h, out_w), dtype=arr.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[:, i, j] = arr[:, ys[i] : ys[i + 1], xs[j] : xs[j + 1]].mean(axis=(1, 2))
    return out


def open_oracle(uri: str, expected_meta: ModelMeta | None = None) -> OracleHandle:
    """Open ``file://<dir>``, ``http://host:port``, or ``synthetic://linear?...``."""
    parsed = urlparse.urlparse(uri)
    if parsed.scheme == "file":
        root = (parsed.netloc or "") + parsed.path
        handle: OracleHandle = FileOracle(root)
    elif parsed.scheme in ("http", "https"):
        handle = HttpOracle(uri)
    elif parsed.scheme == "synthetic":
        qs = urlparse.parse_qs(parsed.query)

        def _int(name, default):
            return int(qs[name][0]) if name in qs else default

        h = _int("h", 96)
        w = _int("w", 96)
        meta = ModelMeta(
            num_classes=_int("classes", 10),
            depths=5,
            channels=[16, 16, 32, 64, 128],
            input_size=(h, w, 3),
            mean=[0.0, 0.0, 0.0],
            std=[1.0, 1.0, 1.0],
        )
        handle = SyntheticOracle(meta, seed=_int("seed", 0))
    else:
        raise BadManifestError(f"unsupported oracle uri {uri!r}")
    if expected_meta is not None and not handle.meta.same_contract(expected_meta):
        raise MetaMismatchError(f"oracle meta at {uri} disagrees with expected meta")
    return handle


# --- companion operations (module-level spellings of the oracle contract) ---


def get_activations(handle: OracleHandle, image, depths) -> list[np.ndarray]:
    return handle.activations(image, depths)


def get_logits(handle: OracleHandle, batch) -> np.ndarray:
    return handle.logits(batch)


# --- serving (wraps any handle behind the wire protocol) ---


class _OracleRequestHandler(BaseHTTPRequestHandler):
    oracle: OracleHandle = None  # injected by _make_handler

    def log_message(self, *args):  # quiet by default
        pass

    def _send(self, code: int, doc: dict):
        body = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/meta":
            self._send(200, self.oracle.meta.to_json())
        else:
            self._send(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError) as exc:
            self._send(400, {"error": f"malformed request body: {exc}"})
            return
        try:
            if self.path == "/v1/logits":
                batch = decode_tensor(doc["tensor"])
                out = self.oracle.logits(batch)
                self._send(200, {"tensor": encode_tensor(out)})
            elif self.path == "/v1/activations":
                tensor = decode_tensor(doc["tensor"])
                if tensor.ndim != 4 or tensor.shape[0] != 1:
                    raise ShapeMismatchError(f"expected [1,C,H,W], got {tensor.shape}")
                acts = self.oracle.activations(tensor[0], doc.get("depths", []))
                self._send(200, {"tensors": [encode_tensor(a) for a in acts]})
            else:
                self._send(404, {"error": f"unknown path {self.path}"})
        except (KeyError, ValueError) as exc:
            self._send(400, {"error": f"malformed payload: {exc}"})
        except ShapeMismatchError as exc:
            self._send(422, {"error": str(exc)})
        except OracleFailure as exc:
            self._send(422, {"error": str(exc)})


def serve_oracle(oracle: OracleHandle, host: str = "127.0.0.1", port: int = 0):
    """Start a wire-protocol server for ``oracle`` on a daemon thread.

    Returns the ``ThreadingHTTPServer``; its bound port is
    ``server.server_address[1]``. Call ``server.shutdown()`` to stop.
    """
    handler = type("Handler", (_OracleRequestHandler,), {"oracle": oracle})
    server = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def export_store(oracle: OracleHandle, images: dict[str, np.ndarray], root) -> None:
    """Write a file-backend store answering for ``images`` ([H, W, 3] pixels)."""
    root = Path(root)
    for sub in ("images", "acts", "logits", "saliency"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps(oracle.meta.to_json(), indent=2))
    all_depths = list(range(oracle.meta.depths))
    for image_id, img in images.items():
        tensorio.write_image_png(img, root / "images" / f"{image_id}.png")
        std = standardize(img, oracle.meta)
        for d, act in zip(all_depths, oracle.activations(std, all_depths)):
            tensorio.write_npy(act, root / "acts" / f"act_{image_id}_d{d}.npy")
        tensorio.write_npy(oracle.logits(std[None])[0], root / "logits" / f"logits_{image_id}.npy")
