"""VGG-style landmark regressor built from a small design space."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .layers import AvgPool2, BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2, ReLU

POOLING = ("max", "average", "strided-last")
CONV_REG = ("none", "dropout", "bn-block", "bn-layer")
FC_REG = ("none", "dropout", "bn", "bn-dropout5", "bn-dropout10")
FC_SHAPES = {"4/2": (4, 2), "3/4": (3, 4)}  # (dense layers incl. output, width factor)
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ConvNetConfig:
    blocks: int = 2
    layers_per_block: int = 2
    pooling: str = "max"
    conv_reg: str = "none"
    fc: str = "3/4"
    fc_reg: str = "none"
    start_channels: int = 32
    fc_base: int = 32  # width of the last hidden dense layer
    outputs: int = 12
    input_shape: tuple[int, int, int] = (1, 48, 92)

    def __post_init__(self):
        if self.blocks not in (2, 3) or self.layers_per_block not in (2, 3):
            raise ValueError("blocks and layers_per_block must be 2 or 3")
        if self.pooling not in POOLING or self.conv_reg not in CONV_REG or self.fc_reg not in FC_REG:
            raise ValueError("unknown pooling or regularization option")
        if self.fc not in FC_SHAPES:
            raise ValueError(f"fc must be one of {tuple(FC_SHAPES)}")
        if self.outputs < 1 or self.start_channels < 1 or self.fc_base < 1:
            raise ValueError("sizes must be positive")

    def hidden_widths(self) -> list[int]:
        n, f = FC_SHAPES[self.fc]
        return [self.fc_base * f ** (n - 2 - j) for j in range(n - 1)]

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


class Network:
    def __init__(self, config: ConvNetConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        """Accumulate parameter gradients; the input gradient is not formed."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """``(layer index, name, array)`` in a fixed order."""
        return [(i, k, v) for i, l in enumerate(self.layers) for k, v in sorted(l.params.items())]

    def gradients(self):
        return [(i, k, l.grads[k]) for i, l in enumerate(self.layers) for k in sorted(l.params)]

    def predict(self, x, batch_size=256):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    @property
    def dtype(self):
        return self.parameters()[0][2].dtype


def build_network(config: ConvNetConfig, seed: int = 0, dtype=np.float32) -> Network:
    """He-initialized network; the same seed gives the same weights."""
    rng = np.random.default_rng([seed, 11])
    drop_rng = np.random.default_rng([seed, 13])
    layers: list[Layer] = []
    shape = config.input_shape
    ch = config.start_channels
    for b in range(config.blocks):
        for l in range(config.layers_per_block):
            last = l == config.layers_per_block - 1
            stride = 2 if last and config.pooling == "strided-last" else 1
            conv = Conv2D(shape[0], ch, rng, stride=stride, dtype=dtype)
            layers.append(conv)
            shape = conv.out_shape(shape)
            if config.conv_reg == "bn-layer" or (config.conv_reg == "bn-block" and last):
                layers.append(BatchNorm(ch, dtype=dtype))
            layers.append(ReLU())
        if config.pooling != "strided-last":
            pool = MaxPool2() if config.pooling == "max" else AvgPool2()
            layers.append(pool)
            shape = pool.out_shape(shape)
        if config.conv_reg == "dropout":
            layers.append(Dropout(0.2, drop_rng))
        ch *= 2
    layers.append(Flatten())
    width = int(np.prod(shape))
    for h in config.hidden_widths():
        layers.append(Dense(width, h, rng, dtype))
        if config.fc_reg.startswith("bn"):
            layers.append(BatchNorm(h, dtype=dtype))
        layers.append(ReLU())
        rate = {"dropout": 0.2, "bn-dropout5": 0.05, "bn-dropout10": 0.1}.get(config.fc_reg, 0.0)
        if rate:
            layers.append(Dropout(rate, drop_rng))
        width = h
    layers.append(Dense(width, config.outputs, rng, dtype))
    layers[0].input_grad = False
    return Network(config, layers)


def mse_loss(pred, target):
    """Mean over samples and outputs, and its gradient."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def save_weights(net: Network, path, seed: int = 0, epoch: int = 0, extra: dict | None = None) -> None:
    """``path/manifest.json`` plus one little-endian float32 blob per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(net.layers):
        for kind, store in (("param", layer.params), ("state", layer.state)):
            for name in sorted(store):
                fname = f"L{i:02d}_{type(layer).__name__}_{name}.f32"
                np.asarray(store[name], dtype="<f4").tofile(path / fname)
                entries.append({"layer": i, "kind": kind, "name": name, "file": fname,
                                "shape": list(store[name].shape)})
    manifest = {"version": WEIGHTS_VERSION, "config": net.config.to_dict(), "seed": seed, "epoch": epoch,
                "arrays": entries, **(extra or {})}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_weights(path, dtype=np.float32) -> tuple[Network, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {manifest.get('version')}")
    net = build_network(ConvNetConfig.from_dict(manifest["config"]), manifest["seed"], dtype)
    for e in manifest["arrays"]:
        store = net.layers[e["layer"]].params if e["kind"] == "param" else net.layers[e["layer"]].state
        arr = np.fromfile(path / e["file"], dtype="<f4").reshape(e["shape"]).astype(dtype)
        if store[e["name"]].shape != arr.shape:
            raise ValueError(f"shape mismatch for layer {e['layer']} {e['name']}")
        store[e["name"]] = arr
    return net, manifest


class ConvNetPredictor:
    """Landmark predictor backed by a trained network (12 normalized outputs)."""

    def __init__(self, net: Network):
        self.net = net

    def predict(self, patch) -> np.ndarray:
        return self.net.predict(patch.pixels[None])[0].astype(float)
