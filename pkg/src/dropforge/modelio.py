"""Model and dataset serialization.

Portable model container (single file):

    bytes 0..3   magic ``PNF1``
    bytes 4..7   header length, 32-bit little-endian unsigned
    header       UTF-8 JSON: layer kinds + hyperparameters, declared weight
                 shapes, ``class_count``, ``input_shape``, layout notes
    payload      the weight tensors as little-endian float32 blobs, row-major,
                 concatenated in header declaration order

Dense weights are stored ``(in_dim, out_dim)`` and conv kernels
``(kh, kw, in_ch, out_ch)``; the header records this as ``dense_layout`` so
other producers can check their transposition.

Datasets load from IDX (big-endian, standard MNIST container) or from a toy
CSV with an integer label in the first column and pixels in the rest.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DatasetError, ModelFormatError
from .layers import LAYER_KINDS, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Softmax
from .network import Network
from .rng import RngStream
from .train import he_normal

MAGIC = b"PNF1"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_FIXTURE_SEED = 913680041


# --------------------------------------------------------------------- model

def save_model(net: Network, path: str) -> None:
    header = {
        "format_version": 1,
        "class_count": net.class_count,
        "input_shape": list(net.input_shape),
        "dense_layout": "in_out",
        "layers": [],
    }
    blobs = []
    for layer in net.layers:
        entry = {"kind": layer.kind}
        entry.update(layer.hyperparams())
        weights = []
        for name, param in zip(("kernel", "bias") if layer.kind == "conv2d" else ("w", "b"),
                               layer.params()):
            weights.append({"name": name, "shape": list(param.shape)})
            blobs.append(np.ascontiguousarray(param, dtype="<f4").tobytes())
        if weights:
            entry["weights"] = weights
        header["layers"].append(entry)

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(blobs)
    data = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    _atomic_write_bytes(path, data)


def load_model(path: str) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(data) < 8:
        raise ModelFormatError("file too short for header length field", offset=4)
    (header_len,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + header_len:
        raise ModelFormatError(f"header declares {header_len} bytes but file ends early", offset=8)
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"header is not valid JSON: {err}", offset=8) from None

    payload = data[8 + header_len:]
    payload_start = 8 + header_len
    layers = []
    offset = 0
    for spec in header["layers"]:
        kind = spec["kind"]
        if kind not in LAYER_KINDS:
            raise ModelFormatError(f"unknown layer kind {kind!r}", offset=8)
        hyper = {k: v for k, v in spec.items() if k not in ("kind", "weights")}
        layer = LAYER_KINDS[kind](**hyper)
        params = []
        for wspec in spec.get("weights", []):
            shape = tuple(wspec["shape"])
            count = int(np.prod(shape))
            need = count * 4
            if offset + need > len(payload):
                raise ModelFormatError(
                    f"payload truncated: tensor {wspec['name']!r} of layer {kind!r} needs "
                    f"{need} bytes, {len(payload) - offset} remain",
                    offset=payload_start + offset,
                )
            params.append(np.frombuffer(payload, dtype="<f4", count=count,
                                        offset=offset).reshape(shape).copy())
            offset += need
        if params:
            layer.set_params(params)
        layers.append(layer)
    if offset != len(payload):
        raise ModelFormatError(
            f"payload has {len(payload) - offset} trailing bytes beyond declared tensors",
            offset=payload_start + offset,
        )
    return Network(layers, header["class_count"], tuple(header["input_shape"]))


# ------------------------------------------------------------------ datasets

@dataclass
class LabeledDataset:
    """Images (``[n, H, W, C]`` for image data, pixels in [0, 1]) plus labels."""

    images: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.images)


def _read_idx(path: str, expected_magic: int, rank: int) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(4 * (1 + rank))
        if len(head) < 4 * (1 + rank):
            raise DatasetError(f"{path}: truncated IDX header")
        magic = struct.unpack(">I", head[:4])[0]
        if magic != expected_magic:
            raise DatasetError(f"{path}: IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        dims = struct.unpack(">" + "I" * rank, head[4:])
        count = int(np.prod(dims))
        body = f.read(count)
        if len(body) != count:
            raise DatasetError(f"{path}: expected {count} data bytes, found {len(body)}")
        return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path: str, labels_path: str, provenance: str = "") -> LabeledDataset:
    """Load an IDX image/label pair; pixels are normalized by 1/255."""
    raw = _read_idx(images_path, IDX_IMAGES_MAGIC, rank=3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, rank=1)
    if raw.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"image count {raw.shape[0]} does not match label count {labels.shape[0]}"
        )
    images = (raw.astype(np.float32) / np.float32(255.0))[..., None]
    return LabeledDataset(images, labels.astype(np.int64), provenance or images_path)


def save_csv_dataset(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    """Toy CSV: integer label first, then the flattened pixels (round-trip floats)."""
    flat = np.asarray(images).reshape(len(images), -1)
    rows = []
    for label, pixels in zip(labels, flat):
        rows.append([str(int(label))] + [repr(float(v)) for v in pixels])
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        csv.writer(f).writerows(rows)
    os.replace(tmp, path)


def load_csv_dataset(path: str, image_shape: tuple[int, ...] | None = None,
                     provenance: str = "") -> LabeledDataset:
    labels, pixels = [], []
    with open(path, newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                labels.append(int(row[0]))
                pixels.append([float(v) for v in row[1:]])
            except ValueError as err:
                raise DatasetError(f"{path}:{line_no}: {err}") from None
    if not pixels:
        raise DatasetError(f"{path}: empty dataset")
    widths = {len(p) for p in pixels}
    if len(widths) != 1:
        raise DatasetError(f"{path}: rows have inconsistent pixel counts {sorted(widths)}")
    images = np.asarray(pixels, dtype=np.float32)
    if image_shape is not None:
        if int(np.prod(image_shape)) != images.shape[1]:
            raise DatasetError(
                f"{path}: rows have {images.shape[1]} pixels, cannot reshape to {image_shape}"
            )
        images = images.reshape((len(images),) + tuple(image_shape))
    return LabeledDataset(images, np.asarray(labels, dtype=np.int64), provenance or path)


def load_toy_digits(split: str = "train") -> LabeledDataset:
    """Bundled 8x8 digit subset (10 classes) shipped with the package."""
    if split not in ("train", "test"):
        raise DatasetError(f"unknown digits split {split!r}")
    data_dir = resources.files(__package__) / "data"
    with resources.as_file(data_dir / f"digits-{split}-images.idx3-ubyte") as img_path, \
         resources.as_file(data_dir / f"digits-{split}-labels.idx1-ubyte") as lab_path:
        return load_idx(str(img_path), str(lab_path), provenance=f"digits8x8-{split}")


# ------------------------------------------------------------------ fixtures

def fixture_models() -> dict[str, Network]:
    """Small deterministic networks used throughout the test suite.

    ``linear``: 2-class hand-weighted dense+softmax (no dropout).
    ``mlp``: 3-class MLP with one dropout layer.
    ``conv``: 10-class conv net with one dropout layer, 8x8 inputs.
    """
    linear = Dense(2, 2)
    linear.set_params([
        np.array([[2.0, -1.0], [-1.0, 1.0]], dtype=np.float32),
        np.array([0.25, -0.25], dtype=np.float32),
    ])
    linear_net = Network([linear, Softmax()], class_count=2, input_shape=(2,))

    gen = RngStream(_FIXTURE_SEED, 1).generator()
    d1, d2 = Dense(4, 8), Dense(8, 3)
    d1.set_params([he_normal((4, 8), 4, gen), np.zeros(8, dtype=np.float32)])
    d2.set_params([he_normal((8, 3), 8, gen), np.zeros(3, dtype=np.float32)])
    mlp_net = Network([d1, ReLU(), Dropout(0.5), d2, Softmax()],
                      class_count=3, input_shape=(4,))

    gen = RngStream(_FIXTURE_SEED, 2).generator()
    conv = Conv2D(3, 3, 1, 4, stride=1, padding=1)
    conv.set_params([he_normal((3, 3, 1, 4), 9, gen), np.zeros(4, dtype=np.float32)])
    fc1, fc2 = Dense(64, 16), Dense(16, 10)
    fc1.set_params([he_normal((64, 16), 64, gen), np.zeros(16, dtype=np.float32)])
    fc2.set_params([he_normal((16, 10), 16, gen), np.zeros(10, dtype=np.float32)])
    conv_net = Network(
        [conv, ReLU(), MaxPool2D(2), Flatten(), fc1, ReLU(), Dropout(0.5), fc2, Softmax()],
        class_count=10, input_shape=(8, 8, 1),
    )
    return {"linear": linear_net, "mlp": mlp_net, "conv": conv_net}


def build_toy_convnet(rng: RngStream, dropout_rate: float = 0.4,
                      input_dropout_rate: float = 0.3,
                      filters: int = 12, hidden: int = 48) -> Network:
    """Untrained conv net sized for the bundled 8x8 digits.

    Dropout sits both on the input (pixel-level stochasticity: benign digit
    structure survives it, brittle perturbation patterns do not) and before
    the classification head.
    """
    gen = rng.generator()
    conv = Conv2D(3, 3, 1, filters, stride=1, padding=1)
    conv.set_params([he_normal((3, 3, 1, filters), 9, gen),
                     np.zeros(filters, dtype=np.float32)])
    flat_dim = 16 * filters
    fc1, fc2 = Dense(flat_dim, hidden), Dense(hidden, 10)
    fc1.set_params([he_normal((flat_dim, hidden), flat_dim, gen),
                    np.zeros(hidden, dtype=np.float32)])
    fc2.set_params([he_normal((hidden, 10), hidden, gen), np.zeros(10, dtype=np.float32)])
    return Network(
        [Dropout(input_dropout_rate), conv, ReLU(), MaxPool2D(2), Flatten(),
         fc1, ReLU(), Dropout(dropout_rate), fc2, Softmax()],
        class_count=10, input_shape=(8, 8, 1),
    )


def _atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
