"""The three networks and the mask-based feature split.

A single shared encoder maps images from both domains into a hidden vector
h. A small mask network predicts a per-sample, per-channel weight map
M = sigmoid(...) in (0, 1) that splits h into a task-relevant part M * h
and a task-irrelevant remainder (1 - M) * h; the two parts always add back
to h exactly. A task network turns (re)combined hidden vectors into an
L2-normalized embedding for cosine retrieval plus source-class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderConfig:
    """Shape of the shared encoder.

    kind "conv": two 3x3 conv layers, each followed by relu and 2x2 average
    pooling, then a linear layer to d_h. kind "mlp": relu MLP over flattened
    input with the layer widths in `hidden`.
    """

    kind: str = "conv"
    input_shape: tuple[int, ...] = (1, 16, 16)  # (C, H, W) for conv, (D,) for mlp
    channels: tuple[int, int] = (8, 16)
    hidden: tuple[int, ...] = (64,)
    d_h: int = 64

    def validate(self) -> None:
        if self.kind not in ("conv", "mlp"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "conv":
            if len(self.input_shape) != 3:
                raise ValueError(f"conv encoder needs a (C, H, W) input shape, got {self.input_shape}")
            if self.input_shape[1] % 4 or self.input_shape[2] % 4:
                raise ValueError("conv encoder pools twice; spatial dims must be divisible by 4")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), ad.tile_rows(b, x.shape[0]))


class Encoder:
    """Shared feature extractor; the same instance serves both domains."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        if cfg.kind == "conv":
            c_in, h, w = cfg.input_shape
            c1, c2 = cfg.channels
            self._add(rng, "conv1.w", (c1, c_in, 3, 3), fan_in=c_in * 9, fan_out=c1 * 9)
            self.params["conv1.b"] = Tensor(np.zeros(c1), requires_grad=True)
            self._add(rng, "conv2.w", (c2, c1, 3, 3), fan_in=c1 * 9, fan_out=c2 * 9)
            self.params["conv2.b"] = Tensor(np.zeros(c2), requires_grad=True)
            flat = c2 * (h // 4) * (w // 4)
            self._add(rng, "fc.w", (flat, cfg.d_h), fan_in=flat, fan_out=cfg.d_h)
            self.params["fc.b"] = Tensor(np.zeros(cfg.d_h), requires_grad=True)
            self._flat = flat
        else:
            dims = [int(np.prod(cfg.input_shape))] + list(cfg.hidden) + [cfg.d_h]
            for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
                self._add(rng, f"fc{i}.w", (d_in, d_out), fan_in=d_in, fan_out=d_out)
                self.params[f"fc{i}.b"] = Tensor(np.zeros(d_out), requires_grad=True)
            self._n_layers = len(dims) - 1

    def _add(self, rng, name, shape, fan_in, fan_out):
        self.params[name] = Tensor(xavier_uniform(rng, fan_in, fan_out, shape), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        p = self.params
        if self.cfg.kind == "conv":
            expected = (x.shape[0],) + tuple(self.cfg.input_shape)
            if x.shape != expected:
                raise ValueError(f"encoder expects input shape {expected}, got {x.shape}")
            h = ad.avgpool2(ad.relu(ad.conv3x3(x, p["conv1.w"], p["conv1.b"])))
            h = ad.avgpool2(ad.relu(ad.conv3x3(h, p["conv2.w"], p["conv2.b"])))
            h = ad.reshape(h, (x.shape[0], self._flat))
            return _linear(h, p["fc.w"], p["fc.b"])
        flat = int(np.prod(self.cfg.input_shape))
        if x.ndim > 2:
            x = ad.reshape(x, (x.shape[0], flat))
        if x.ndim != 2 or x.shape[1] != flat:
            raise ValueError(f"mlp encoder expects (B, {flat}), got {x.shape}")
        h = x
        for i in range(self._n_layers):
            h = _linear(h, p[f"fc{i}.w"], p[f"fc{i}.b"])
            if i + 1 < self._n_layers:
                h = ad.relu(h)
        return h


class MaskNet:
    """Two linear layers with a relu between, then sigmoid, giving M in (0, 1).

    The final bias starts at +1 so training begins with M near 0.73: mostly
    task-relevant, never fully suppressed (an all-zero map would starve the
    task network of input).
    """

    def __init__(self, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.params = {
            "fc1.w": Tensor(xavier_uniform(rng, d_h, d_h, (d_h, d_h)), requires_grad=True),
            "fc1.b": Tensor(np.zeros(d_h), requires_grad=True),
            "fc2.w": Tensor(xavier_uniform(rng, d_h, d_h, (d_h, d_h)), requires_grad=True),
            "fc2.b": Tensor(np.full(d_h, 1.0), requires_grad=True),
        }

    def forward(self, h: Tensor) -> Tensor:
        p = self.params
        z = ad.relu(_linear(h, p["fc1.w"], p["fc1.b"]))
        return ad.sigmoid(_linear(z, p["fc2.w"], p["fc2.b"]))


class TaskNet:
    """Embedding layer plus a source-class head.

    One linear + relu produces the embedding consumed (L2-normalized) by all
    cosine machinery; a second linear maps the unnormalized embedding to
    source-class logits.
    """

    def __init__(self, d_h: int, d_emb: int, n_classes: int, rng: np.random.Generator):
        self.d_emb = d_emb
        self.n_classes = n_classes
        self.params = {
            "emb.w": Tensor(xavier_uniform(rng, d_h, d_emb, (d_h, d_emb)), requires_grad=True),
            "emb.b": Tensor(np.zeros(d_emb), requires_grad=True),
            "head.w": Tensor(xavier_uniform(rng, d_emb, n_classes, (d_emb, n_classes)), requires_grad=True),
            "head.b": Tensor(np.zeros(n_classes), requires_grad=True),
        }

    def forward(self, r: Tensor) -> tuple[Tensor, Tensor]:
        """Return (unit-norm embedding, source-class logits)."""
        p = self.params
        z = ad.relu(_linear(r, p["emb.w"], p["emb.b"]))
        logits = _linear(z, p["head.w"], p["head.b"])
        return ad.l2_normalize_rows(z), logits


@dataclass
class DisentangledPair:
    """Mask split of a hidden batch: h_tr + h_ti reconstructs h exactly."""

    h_tr: Tensor
    h_ti: Tensor
    mask: Tensor


def disentangle(h: Tensor, mask: Tensor) -> DisentangledPair:
    """Split h into mask * h (task-relevant) and (1 - mask) * h (task-irrelevant)."""
    if h.shape != mask.shape:
        raise ValueError(f"disentangle: shape mismatch {h.shape} vs {mask.shape}")
    ones = Tensor(np.ones(mask.shape))
    return DisentangledPair(
        h_tr=ad.mul(mask, h),
        h_ti=ad.mul(ad.sub(ones, mask), h),
        mask=mask,
    )


@dataclass
class Network:
    """Encoder + mask net + task net with flat parameter naming."""

    encoder: Encoder
    mask_net: MaskNet
    task_net: TaskNet

    def named_params(self, include_mask_net: bool = True) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        if include_mask_net:
            out.update({f"mask_net.{k}": v for k, v in self.mask_net.params.items()})
        out.update({f"task_net.{k}": v for k, v in self.task_net.params.items()})
        return out

    def infer(self, x: Tensor, fixed_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Test-time forward: the task network sees only the task-relevant part.

        A run trained with a constant mask must evaluate through the same
        constant mask, so `fixed_mask` (a d_h pattern) overrides the mask
        network when given.
        """
        h = self.encoder.forward(x)
        if fixed_mask is not None:
            mask = Tensor(np.tile(np.asarray(fixed_mask, dtype=np.float64), (h.shape[0], 1)))
        else:
            mask = self.mask_net.forward(h)
        return self.task_net.forward(disentangle(h, mask).h_tr)


def build_network(enc_cfg: EncoderConfig, d_emb: int, n_classes: int, seed_rng: np.random.Generator) -> Network:
    return Network(
        encoder=Encoder(enc_cfg, seed_rng),
        mask_net=MaskNet(enc_cfg.d_h, seed_rng),
        task_net=TaskNet(enc_cfg.d_h, d_emb, n_classes, seed_rng),
    )
