"""Tiny stochastic 2-D encoder-decoder segmentation network.

Two encoder blocks, a bottleneck and two decoder blocks with skip
connections; dropout after every block makes the network a Monte-Carlo
sampler when run in stochastic mode. One decoder feature map is tapped for
channel-level uncertainty analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import RngStream
from .tensor import Graph, OpKind, Tensor

_TAP_CHOICES = ("bottleneck", "dec1", "dec2")


@dataclass
class ModelConfig:
    in_channels: int = 1
    base_channels: int = 16
    num_classes: int = 2
    dropout_p: float = 0.5
    tap_layer: str = "dec2"

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.tap_layer not in _TAP_CHOICES:
            raise ConfigError(f"tap_layer must be one of {_TAP_CHOICES}, got {self.tap_layer!r}")


@dataclass
class NoiseSpec:
    """Additive Gaussian input noise, clipped symmetrically. sigma=0 disables."""

    sigma: float = 0.1
    clip: float = 0.2


@dataclass
class ForwardResult:
    logits: Tensor
    feature_tap: Tensor


@dataclass
class McSamples:
    """T stochastic passes: per-pass class probabilities and tapped features."""

    probs: np.ndarray  # (T, M, H, W) float32, simplex over class axis
    feats: np.ndarray  # (T, C, H, W) float32


def _conv_shapes(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    bc, ic, m = cfg.base_channels, cfg.in_channels, cfg.num_classes
    return [
        ("enc1.conv1", ic, bc, 3),
        ("enc1.conv2", bc, bc, 3),
        ("enc2.conv1", bc, 2 * bc, 3),
        ("enc2.conv2", 2 * bc, 2 * bc, 3),
        ("bott.conv1", 2 * bc, 4 * bc, 3),
        ("bott.conv2", 4 * bc, 4 * bc, 3),
        ("dec1.conv1", 6 * bc, 2 * bc, 3),
        ("dec1.conv2", 2 * bc, 2 * bc, 3),
        ("dec2.conv1", 3 * bc, bc, 3),
        ("dec2.conv2", bc, bc, 3),
        ("head", bc, m, 1),
    ]


class Model:
    """Parameter set plus forward pass. Weights are plain named tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def tap_width(self) -> int:
        bc = self.config.base_channels
        return {"bottleneck": 4 * bc, "dec1": 2 * bc, "dec2": bc}[self.config.tap_layer]

    def copy(self) -> "Model":
        params = {}
        for name, t in self.params.items():
            params[name] = Tensor(t.data.copy(), requires_grad=True)
        return Model(self.config, params)

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        image,
        stream: RngStream | Sequence[RngStream] | None = None,
        graph: Graph | None = None,
    ) -> ForwardResult:
        """Run the network on (C,H,W) or batched (N,C,H,W) input.

        `stream=None` runs deterministically with dropout disabled entirely;
        otherwise dropout masks are drawn from the given stream (one stream
        per batch row for rank-4 input). Pass a recording graph to retain
        the tape for backward.
        """
        cfg = self.config
        g = graph if graph is not None else Graph(recording=False)
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.data.ndim not in (3, 4):
            raise ShapeError(f"expected (C,H,W) or (N,C,H,W) input, got {x.data.shape}")
        h, w = x.data.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"spatial dims must be divisible by 4, got {h}x{w}")
        if x.data.shape[-3] != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {x.data.shape[-3]}")
        batched = x.data.ndim == 4
        if batched and stream is not None and not isinstance(stream, (list, tuple)):
            raise ShapeError("batched stochastic forward needs one stream per row")

        def drop(t: Tensor) -> Tensor:
            if stream is None or cfg.dropout_p == 0.0:
                return t
            if batched:
                return g.apply(OpKind.DROPOUT, [t], p=cfg.dropout_p, streams=list(stream))
            return g.apply(OpKind.DROPOUT, [t], p=cfg.dropout_p, stream=stream)

        def conv(name: str, t: Tensor, relu: bool = True) -> Tensor:
            out = g.apply(OpKind.CONV2D, [t, self.params[name + ".w"], self.params[name + ".b"]])
            return g.apply(OpKind.RELU, [out]) if relu else out

        taps: dict[str, Tensor] = {}

        def block(prefix: str, t: Tensor, tap: str | None = None) -> Tensor:
            t = conv(prefix + ".conv1", t)
            t = conv(prefix + ".conv2", t)
            if tap is not None:
                taps[tap] = t  # representation before its own dropout mask
            return drop(t)

        e1 = block("enc1", x)
        e2 = block("enc2", g.apply(OpKind.MAXPOOL2X2, [e1]))
        bott = block("bott", g.apply(OpKind.MAXPOOL2X2, [e2]), tap="bottleneck")
        d1 = g.apply(OpKind.UPSAMPLE_NEAREST2X, [bott])
        d1 = block("dec1", g.apply(OpKind.CONCAT_CHANNEL, [d1, e2]), tap="dec1")
        d2 = g.apply(OpKind.UPSAMPLE_NEAREST2X, [d1])
        d2 = block("dec2", g.apply(OpKind.CONCAT_CHANNEL, [d2, e1]), tap="dec2")
        logits = conv("head", d2, relu=False)
        return ForwardResult(logits=logits, feature_tap=taps[cfg.tap_layer])


def build(config: ModelConfig, seed: int) -> Model:
    """He-uniform initialized model, fully determined by (config, seed)."""
    config.validate()
    init = RngStream(seed).child(0)
    params: dict[str, Tensor] = {}
    for idx, (name, ci, co, k) in enumerate(_conv_shapes(config)):
        st = init.child(idx)
        bound = np.sqrt(6.0 / (ci * k * k))
        w = (st.uniform((co, ci, k, k)) * 2.0 - 1.0) * bound
        params[name + ".w"] = Tensor(w.astype(np.float32), requires_grad=True)
        params[name + ".b"] = Tensor(np.zeros(co, dtype=np.float32), requires_grad=True)
    return Model(config, params)


def apply_input_noise(image: np.ndarray, noise: NoiseSpec, stream: RngStream) -> np.ndarray:
    if noise.sigma <= 0.0:
        return image
    n = stream.normal(image.shape) * noise.sigma
    n = np.clip(n, -noise.clip, noise.clip)
    return (image + n.astype(np.float32)).astype(np.float32)


def mc_sample(
    model: Model,
    image: np.ndarray,
    t_passes: int,
    base_stream: RngStream,
    noise: NoiseSpec | None = None,
) -> McSamples:
    """T stochastic forward passes with fresh per-pass dropout and input noise.

    Pass t draws from substream t of `base_stream`; no gradients are kept.
    """
    if t_passes < 2:
        raise ValueError(f"mc_sample needs at least 2 passes, got {t_passes}")
    noise = noise if noise is not None else NoiseSpec()
    probs, feats = [], []
    g = Graph(recording=False)
    for t in range(t_passes):
        ps = base_stream.child(t)
        x = apply_input_noise(np.asarray(image, dtype=np.float32), noise, ps.child(0))
        fr = model.forward(x, stream=ps.child(1), graph=g)
        p = g.apply(OpKind.SOFTMAX_OVER_CHANNEL, [fr.logits])
        probs.append(p.data)
        feats.append(fr.feature_tap.data)
    return McSamples(probs=np.stack(probs), feats=np.stack(feats))
