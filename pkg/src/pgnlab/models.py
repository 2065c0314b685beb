"""Small classifiers: architecture zoo, SGD training, and PGNW serialization.

Three architectures cover the surrogate/target diversity needed by the
transfer experiments:

  * mlp_a  -- flatten, dense 128, ReLU, dense 64, ReLU, dense C
  * mlp_b  -- flatten, dense 256, ReLU, dense C
  * cnn_a  -- 3x3 conv (8 filters), ReLU, 2x2 max-pool, flatten, dense C

Weight files use the "PGNW" container: magic, little-endian u32 version,
JSON header (architecture descriptor + metadata), then each parameter as a
shape-prefixed little-endian float32 blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import (ConsistencyError, FormatError, LengthError, NumericError,
                     ShapeError, TrainingError, UsageError)

PGNW_MAGIC = b"PGNW"
PGNW_VERSION = 1


def mlp_a(input_shape, n_classes):
    n = int(np.prod(input_shape))
    return {"name": "mlp_a", "input_shape": list(input_shape), "n_classes": n_classes,
            "layers": [{"kind": "flatten"},
                       {"kind": "dense", "in": n, "out": 128},
                       {"kind": "relu"},
                       {"kind": "dense", "in": 128, "out": 64},
                       {"kind": "relu"},
                       {"kind": "dense", "in": 64, "out": n_classes}]}


def mlp_b(input_shape, n_classes):
    n = int(np.prod(input_shape))
    return {"name": "mlp_b", "input_shape": list(input_shape), "n_classes": n_classes,
            "layers": [{"kind": "flatten"},
                       {"kind": "dense", "in": n, "out": 256},
                       {"kind": "relu"},
                       {"kind": "dense", "in": 256, "out": n_classes}]}


def cnn_a(input_shape, n_classes):
    h, w, c = input_shape
    if h % 2 or w % 2:
        raise UsageError(f"cnn_a needs even spatial sides, got {input_shape}")
    flat = (h // 2) * (w // 2) * 8
    return {"name": "cnn_a", "input_shape": list(input_shape), "n_classes": n_classes,
            "layers": [{"kind": "conv", "kh": 3, "kw": 3, "in": c, "out": 8},
                       {"kind": "relu"},
                       {"kind": "maxpool"},
                       {"kind": "flatten"},
                       {"kind": "dense", "in": flat, "out": n_classes}]}


ARCHITECTURES = {"mlp_a": mlp_a, "mlp_b": mlp_b, "cnn_a": cnn_a}


def _param_specs(arch):
    """(shape, fan_in) for every parameter tensor, in layer order."""
    specs = []
    for layer in arch["layers"]:
        if layer["kind"] == "dense":
            specs.append(((layer["in"], layer["out"]), layer["in"]))
            specs.append(((layer["out"],), layer["in"]))
        elif layer["kind"] == "conv":
            fan = layer["kh"] * layer["kw"] * layer["in"]
            specs.append(((layer["kh"], layer["kw"], layer["in"], layer["out"]), fan))
            specs.append(((layer["out"],), fan))
    return specs


def init_params(arch, seed):
    """He-style seeded initialization; weights N(0, sqrt(2/fan_in)), zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7001]))
    params = []
    for shape, fan_in in _param_specs(arch):
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=np.float32))
        else:
            sd = np.sqrt(2.0 / fan_in)
            params.append(rng.normal(0.0, sd, size=shape).astype(np.float32))
    return params


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise UsageError(f"invalid training config: {self}")
        if not 0.0 <= self.momentum < 1.0:
            raise UsageError(f"momentum must be in [0,1), got {self.momentum}")

    def digest(self):
        blob = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Classifier:
    """A trained model: architecture descriptor + parameter tensors + metadata.

    Immutable after training; safe to share across threads.  Implements the
    gradient-source protocol used by the attack and curvature code
    (``loss_and_input_grads``).
    """

    def __init__(self, arch, params, meta=None):
        expected = [s for s, _ in _param_specs(arch)]
        if len(params) != len(expected):
            raise ConsistencyError(f"architecture expects {len(expected)} parameter "
                                   f"tensors, got {len(params)}")
        for i, (p, shape) in enumerate(zip(params, expected)):
            if tuple(p.shape) != shape:
                raise ConsistencyError(
                    f"parameter {i} shape {p.shape} does not match descriptor {shape}")
        self.arch = arch
        self.params = params
        self.meta = dict(meta or {})

    @property
    def input_shape(self):
        return tuple(self.arch["input_shape"])

    @property
    def n_classes(self):
        return int(self.arch["n_classes"])

    @property
    def dtype(self):
        return self.params[0].dtype

    @property
    def name(self):
        return self.meta.get("name", self.arch["name"])

    def astype(self, dtype):
        """Copy with parameters cast to ``dtype`` (for 64-bit verification paths)."""
        return Classifier(self.arch, [p.astype(dtype) for p in self.params], self.meta)

    # ---- graph construction ---------------------------------------------

    def wrap_params(self, graph):
        return [graph.leaf(p) for p in self.params]

    def logits_graph(self, graph, x, params):
        """Forward pass on the tape; raises NumericError on non-finite layers."""
        t = x
        idx = iter(range(len(params)))
        for li, layer in enumerate(self.arch["layers"]):
            kind = layer["kind"]
            if kind == "flatten":
                t = graph.flatten(t)
            elif kind == "relu":
                t = graph.relu(t)
            elif kind == "maxpool":
                t = graph.maxpool2x2(t)
            elif kind == "dense":
                t = graph.add_bias(graph.matmul(t, params[next(idx)]),
                                   params[next(idx)])
            elif kind == "conv":
                t = graph.conv2d(t, params[next(idx)])
                t = graph.add_bias(t, params[next(idx)])  # broadcasts over channels
            else:
                raise UsageError(f"unknown layer kind {kind!r}")
            if not np.all(np.isfinite(t.data)):
                raise NumericError("non-finite activation", layer_index=li)
        return t

    # ---- plain numpy fast paths -------------------------------------------

    def logits(self, xs):
        """Batched forward pass without graph bookkeeping; xs is (B, H, W, C)."""
        xs = np.asarray(xs, dtype=self.dtype)
        t = xs
        idx = 0
        for layer in self.arch["layers"]:
            kind = layer["kind"]
            if kind == "flatten":
                t = t.reshape(t.shape[0], -1)
            elif kind == "relu":
                t = np.maximum(t, 0)
            elif kind == "maxpool":
                b, h, w, c = t.shape
                t = (t.reshape(b, h // 2, 2, w // 2, 2, c).max(axis=4).max(axis=2))
            elif kind == "dense":
                t = t @ self.params[idx] + self.params[idx + 1]
                idx += 2
            elif kind == "conv":
                k, bias = self.params[idx], self.params[idx + 1]
                kh, kw = k.shape[:2]
                ph, pw = kh // 2, kw // 2
                b_, h, w, _ = t.shape
                tp = np.pad(t, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
                out = np.zeros((b_, h, w, k.shape[3]), dtype=t.dtype)
                for di in range(kh):
                    for dj in range(kw):
                        out += tp[:, di:di + h, dj:dj + w, :] @ k[di, dj]
                t = out + bias
                idx += 2
        return t

    def predict(self, xs):
        return np.argmax(self.logits(xs), axis=1)

    def accuracy(self, images, labels):
        preds = self.predict(images)
        return float(np.mean(preds == np.asarray(labels)))

    # ---- gradient-source protocol ------------------------------------------

    def loss_and_input_grads(self, xs, ys):
        """Per-example losses and input gradients for a batch of examples."""
        return engine.loss_and_input_grad_batch(self, np.asarray(xs, self.dtype), ys)


def train(arch, data, cfg, test_data=None):
    """Deterministic SGD-with-momentum training; returns a Classifier.

    Metadata records the seed, a digest of the config, and final train (and,
    when ``test_data`` is given, test) accuracy.
    """
    if tuple(arch["input_shape"]) != tuple(data.image_shape):
        raise ShapeError("architecture input does not match dataset",
                         expected=tuple(arch["input_shape"]),
                         actual=tuple(data.image_shape))
    params = init_params(arch, cfg.seed)
    model = Classifier(arch, params,
                       meta={"seed": cfg.seed, "config": cfg.digest(),
                             "name": f"{arch['name']}-s{cfg.seed}"})
    velocity = [np.zeros_like(p) for p in params]
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 7002]))
    n = len(data)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            g = engine.Graph()
            xt = g.leaf(data.images[sel])
            pts = model.wrap_params(g)
            logits = model.logits_graph(g, xt, pts)
            loss = g.softmax_cross_entropy(logits, data.labels[sel], reduction="mean")
            if not np.isfinite(loss.data):
                raise TrainingError("loss diverged", epoch=epoch)
            g.backward(loss)
            for p, v, pt in zip(params, velocity, pts):
                v *= np.float32(cfg.momentum)
                v -= np.float32(cfg.lr) * pt.grad
                p += v
    model.meta["train_acc"] = model.accuracy(data.images, data.labels)
    if test_data is not None:
        model.meta["test_acc"] = model.accuracy(test_data.images, test_data.labels)
    return model


# ---- PGNW weight files -----------------------------------------------------


def save(model, path):
    """Write a Classifier to ``path`` in the PGNW format (float32 parameters)."""
    if model.dtype != np.float32:
        raise UsageError("PGNW stores float32 parameters; cast the model first")
    header = json.dumps({"arch": model.arch, "meta": model.meta},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(PGNW_MAGIC)
        f.write(struct.pack("<I", PGNW_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(model.params)))
        for p in model.params:
            f.write(struct.pack("<I", p.ndim))
            f.write(struct.pack(f"<{p.ndim}I", *p.shape))
            f.write(p.astype("<f4").tobytes())


def load(path):
    """Read a PGNW file back into a Classifier; validates magic, version, shapes."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4:
            raise LengthError("file too short for PGNW magic")
        if magic != PGNW_MAGIC:
            raise FormatError(f"bad magic: expected {PGNW_MAGIC!r}, got {magic!r}")
        version, = struct.unpack("<I", _read(f, 4, "version"))
        if version != PGNW_VERSION:
            raise FormatError(f"unsupported PGNW version {version} "
                              f"(supported: {PGNW_VERSION})")
        hlen, = struct.unpack("<I", _read(f, 4, "header length"))
        header = json.loads(_read(f, hlen, "header"))
        nparams, = struct.unpack("<I", _read(f, 4, "parameter count"))
        params = []
        for i in range(nparams):
            ndim, = struct.unpack("<I", _read(f, 4, f"parameter {i} rank"))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, f"parameter {i} shape"))
            count = int(np.prod(shape)) if shape else 1
            raw = _read(f, 4 * count, f"parameter {i} data")
            params.append(np.frombuffer(raw, dtype="<f4").reshape(shape)
                          .astype(np.float32))
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after PGNW payload")
    return Classifier(header["arch"], params, header["meta"])


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise LengthError(f"truncated PGNW file while reading {what}")
    return buf
