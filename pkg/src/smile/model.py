"""The overapproximator architecture: backbone, lower/upper auxiliaries, clip, linear head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, as_array

ACTIVATIONS = ("relu", "id")
GROUPS = ("backbone", "auxLow", "auxUp", "head")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: str = "relu"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"layer W{self.W.shape} / b{self.b.shape} mismatch")

    @property
    def rows(self) -> int:
        return self.W.shape[0]

    @property
    def cols(self) -> int:
        return self.W.shape[1]


class Mlp:
    """Dense feedforward network; the final layer must be linear."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.rows != b.cols:
                raise DimensionError(f"layer sizes do not chain: {a.rows} -> {b.cols}")
        if self.layers[-1].act != "id":
            raise ValueError("the last layer of an Mlp must use the identity activation")

    @property
    def in_dim(self) -> int:
        return self.layers[0].cols

    @property
    def out_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def family(self) -> str:
        """'affine', 'relu1' (one hidden relu layer) or 'deep'."""
        if len(self.layers) == 1:
            return "affine"
        if len(self.layers) == 2 and self.layers[0].act == "relu":
            return "relu1"
        return "deep"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = x @ layer.W.T + layer.b
            if layer.act == "relu":
                x = np.maximum(x, 0.0)
        return x

    def trace(self, params: dict, prefix: str, x):
        """Forward pass through the tape, reading weights from ``params``."""
        for k, layer in enumerate(self.layers):
            x = nc.affine(params[f"{prefix}.{k}.W"], params[f"{prefix}.{k}.b"], x)
            if layer.act == "relu":
                x = nc.relu(x)
        return x

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{prefix}.{k}.W"] = layer.W
            out[f"{prefix}.{k}.b"] = layer.b
        return out

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.W.copy(), l.b.copy(), l.act) for l in self.layers])

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Random layers for ``sizes = [in, h1, ..., out]``; relu on all but the last.

        Relu layers get He-uniform weights, the linear output layer Xavier-uniform.
        """
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            limit = np.sqrt(6.0 / (fan_in + fan_out)) if last else np.sqrt(6.0 / fan_in)
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(Layer(W, np.zeros(fan_out), "id" if last else "relu"))
        return cls(layers)


@dataclass
class LinearHead:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.b = float(self.b)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return z @ self.w + self.b


@dataclass
class PathwayOutputs:
    z: np.ndarray
    z_low: np.ndarray
    z_up: np.ndarray
    z_clip: np.ndarray
    y_f: np.ndarray
    y_low: np.ndarray
    y_up: np.ndarray
    y_h: np.ndarray


def clip(z, lo, hi):
    """``max(lo, min(hi, z))``; flipped bounds collapse onto ``lo``."""
    return np.maximum(lo, np.minimum(hi, z))


@dataclass
class SmileModel:
    backbone: Mlp
    aux_low: Mlp
    aux_up: Mlp
    head: LinearHead
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m, n = self.backbone.in_dim, self.backbone.out_dim
        for name, net in (("auxLow", self.aux_low), ("auxUp", self.aux_up)):
            if net.in_dim != m or net.out_dim != n:
                raise DimensionError(
                    f"{name} maps R^{net.in_dim} -> R^{net.out_dim}, expected R^{m} -> R^{n}")
            if net.family not in ("affine", "relu1"):
                raise ValueError(f"{name} must be affine or have one hidden relu layer")
        if self.head.w.shape != (n,):
            raise DimensionError(f"head has {self.head.w.shape[0]} weights, latent dim is {n}")

    @property
    def m(self) -> int:
        return self.backbone.in_dim

    @property
    def n(self) -> int:
        return self.backbone.out_dim

    @classmethod
    def init(cls, m: int, n: int = 8, backbone_hidden: Sequence[int] = (32, 32),
             aux_hidden: int | None = None, seed: int = 0) -> "SmileModel":
        rng = np.random.default_rng(seed)
        backbone = Mlp.init([m, *backbone_hidden, n], rng)
        aux_sizes = [m, n] if not aux_hidden else [m, aux_hidden, n]
        aux_low = Mlp.init(aux_sizes, rng)
        aux_up = Mlp.init(aux_sizes, rng)
        limit = np.sqrt(6.0 / (n + 1))
        head = LinearHead(rng.uniform(-limit, limit, size=n), 0.0)
        return cls(backbone, aux_low, aux_up, head)

    # ------------------------------------------------------------ inference

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.m:
            raise DimensionError(f"expected inputs with {self.m} features, got {X.shape[-1]}")
        return X

    def forward(self, X) -> PathwayOutputs:
        X = self._check(X)
        z = self.backbone(X)
        z_low = self.aux_low(X)
        z_up = self.aux_up(X)
        z_clip = clip(z, z_low, z_up)
        return PathwayOutputs(z, z_low, z_up, z_clip, self.head(z_clip),
                              self.head(z_low), self.head(z_up), self.head(z))

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        z = clip(self.backbone(X), self.aux_low(X), self.aux_up(X))
        return self.head(z)

    def predict_label(self, X, threshold: float = 0.0) -> np.ndarray:
        """1 where the logit is at least ``threshold`` (ties go to the positive class)."""
        return (self.predict(X) >= threshold).astype(int)

    def box_width(self, X) -> np.ndarray:
        X = self._check(X)
        return self.aux_up(X) - self.aux_low(X)

    # ------------------------------------------------------------- weights

    def named_arrays(self, groups: Sequence[str] = GROUPS) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if "backbone" in groups:
            out.update(self.backbone.named_arrays("backbone"))
        if "auxLow" in groups:
            out.update(self.aux_low.named_arrays("auxLow"))
        if "auxUp" in groups:
            out.update(self.aux_up.named_arrays("auxUp"))
        if "head" in groups:
            out["head.w"] = self.head.w
            out["head.b"] = np.asarray(self.head.b)
        return out

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        nets = {"backbone": self.backbone, "auxLow": self.aux_low, "auxUp": self.aux_up}
        for name, value in arrays.items():
            group, *rest = name.split(".")
            if group == "head":
                if rest[0] == "w":
                    self.head.w = np.array(value, dtype=np.float64)
                else:
                    self.head.b = float(value)
                continue
            layer = nets[group].layers[int(rest[0])]
            setattr(layer, rest[1], np.array(value, dtype=np.float64))

    def copy(self) -> "SmileModel":
        return SmileModel(self.backbone.copy(), self.aux_low.copy(), self.aux_up.copy(),
                          LinearHead(self.head.w.copy(), self.head.b),
                          json.loads(json.dumps(self.meta)))

    # ------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        def layers(net: Mlp):
            return [{"rows": l.rows, "cols": l.cols, "W": l.W.ravel().tolist(),
                     "b": l.b.tolist(), "act": l.act} for l in net.layers]

        return {"m": self.m, "n": self.n, "backbone": layers(self.backbone),
                "auxLow": layers(self.aux_low), "auxUp": layers(self.aux_up),
                "head": {"w": self.head.w.tolist(), "b": self.head.b},
                "meta": self.meta}

    @classmethod
    def from_dict(cls, doc: dict) -> "SmileModel":
        def net(entries):
            return Mlp([Layer(as_array(e["W"], "W").reshape(e["rows"], e["cols"]),
                              as_array(e["b"], "b"), e["act"]) for e in entries])

        model = cls(net(doc["backbone"]), net(doc["auxLow"]), net(doc["auxUp"]),
                    LinearHead(as_array(doc["head"]["w"], "head.w"), doc["head"]["b"]),
                    dict(doc.get("meta", {})))
        if model.m != doc["m"] or model.n != doc["n"]:
            raise DimensionError("declared m/n do not match the layer shapes")
        return model

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SmileModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SmileModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def trace_pathways(model: SmileModel, params: dict, X):
    """Tape versions of (z, z_low, z_up) for a batch ``X``."""
    z = model.backbone.trace(params, "backbone", X)
    z_low = model.aux_low.trace(params, "auxLow", X)
    z_up = model.aux_up.trace(params, "auxUp", X)
    return z, z_low, z_up


def trace_head(params: dict, z):
    return nc.dot(z, params["head.w"]) + params["head.b"]
