"""Three-headed encoder-decoder for SAR rain estimation, plus the adversarial critic.

Encoder levels apply two 3x3 conv+ReLU then 2x2 max pooling. At the
bottleneck the standardized scalar inputs are spread into constant maps and
concatenated. Each decoder level upsamples with a 2x2 stride-2 transposed
conv, concatenates the skip connection and applies two 3x3 conv+ReLU. Two
1x1 heads give the segmentation logits and the rain-rate map.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from rainsar.errors import ShapeMismatch
from rainsar.models import INPUT_NAMES, ModelConfig
from rainsar.nn import ops
from rainsar.nn.tensor import Tensor

IMAGE_INPUTS = INPUT_NAMES[:3]
SCALAR_INPUTS = INPUT_NAMES[3:]


def conv_params(cin: int, cout: int, k: int) -> int:
    return (cin * k * k + 1) * cout


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form generator parameter count (heads included, critic excluded)."""
    k = cfg.kernel_size
    w = cfg.widths
    total = 0
    cin = cfg.image_channels
    for lvl in range(cfg.depth):
        a, b = w[lvl]
        total += conv_params(cin, a, k) + conv_params(a, b, k)
        cin = b
    a, b = w[cfg.depth]
    total += conv_params(cin + cfg.scalar_channels, a, k) + conv_params(a, b, k)
    for lvl in reversed(range(cfg.depth)):
        a, b = w[lvl]
        total += conv_params(w[lvl + 1][1], b, 2)
        total += conv_params(2 * b, a, k) + conv_params(a, b, k)
    return total + 2 * conv_params(w[0][1], 1, 1)


def critic_parameter_count(cfg: ModelConfig) -> int:
    total, cin = 0, 1
    for width in cfg.discriminator_widths:
        total += conv_params(cin, width, 3)
        cin = width
    return total + conv_params(cin, 1, 1)


class Conv:
    def __init__(self, name: str, cin: int, cout: int, k: int, rng: np.random.Generator, dtype, transposed=False):
        fan_in = cin * k * k
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        self.weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), True, dtype, f"{name}.weight")
        self.bias = Tensor(np.zeros(cout), True, dtype, f"{name}.bias")
        self.transposed = transposed
        self.padding = k // 2

    def __call__(self, x: Tensor, stride: int = 1) -> Tensor:
        if self.transposed:
            return ops.conv_transpose2d(x, self.weight, self.bias, stride=2)
        return ops.conv2d(x, self.weight, self.bias, stride=stride, padding=self.padding)

    def zero(self) -> None:
        self.weight.data[...] = 0
        self.bias.data[...] = 0

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class ConvBlock:
    def __init__(self, name: str, cin: int, a: int, b: int, k: int, rng, dtype):
        self.first = Conv(f"{name}.0", cin, a, k, rng, dtype)
        self.second = Conv(f"{name}.1", a, b, k, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.second(ops.relu(self.first(x))))

    def parameters(self) -> list[Tensor]:
        return self.first.parameters() + self.second.parameters()


@dataclass
class ModelOutput:
    seg_logits: Tensor
    y_seg: Tensor
    y_rr: Tensor  # in target space (log1p or identity)


class Module:
    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ShapeMismatch(f"checkpoint lacks parameters {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class RainNet(Module):
    def __init__(
        self,
        cfg: ModelConfig,
        seed: int = 0,
        dtype: str = "float32",
        drop_input: Iterable[str] = (),
    ):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.drop_input = tuple(sorted(drop_input))
        rng = np.random.default_rng(seed)
        k = cfg.kernel_size
        w = cfg.widths
        self.encoder: list[ConvBlock] = []
        cin = cfg.image_channels
        for lvl in range(cfg.depth):
            self.encoder.append(ConvBlock(f"enc{lvl}", cin, *w[lvl], k, rng, self.dtype))
            cin = w[lvl][1]
        self.bottleneck = ConvBlock("bottleneck", cin + cfg.scalar_channels, *w[cfg.depth], k, rng, self.dtype)
        self.up: list[Conv] = []
        self.decoder: list[ConvBlock] = []
        for lvl in reversed(range(cfg.depth)):
            a, b = w[lvl]
            self.up.append(Conv(f"up{lvl}", w[lvl + 1][1], b, 2, rng, self.dtype, transposed=True))
            self.decoder.append(ConvBlock(f"dec{lvl}", 2 * b, a, b, k, rng, self.dtype))
        self.seg_head = Conv("seg_head", w[0][1], 1, 1, rng, self.dtype)
        self.rr_head = Conv("rr_head", w[0][1], 1, 1, rng, self.dtype)
        if cfg.head_init == "zero":
            self.seg_head.zero()
            self.rr_head.zero()

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for block in self.encoder:
            params += block.parameters()
        params += self.bottleneck.parameters()
        for up, block in zip(self.up, self.decoder):
            params += up.parameters() + block.parameters()
        return params + self.seg_head.parameters() + self.rr_head.parameters()

    def prepare_inputs(self, x_im: np.ndarray, x_sc: np.ndarray) -> tuple[Tensor, Tensor]:
        """Standardize scalars and zero any dropped input channel."""
        x_im = np.array(x_im, dtype=self.dtype, copy=True)
        x_sc = (np.asarray(x_sc, dtype=np.float64) - np.asarray(self.cfg.scalar_offsets)) / np.asarray(
            self.cfg.scalar_scales
        )
        x_sc = x_sc.astype(self.dtype)
        for name in self.drop_input:
            if name in IMAGE_INPUTS:
                x_im[:, IMAGE_INPUTS.index(name)] = 0
            else:
                x_sc[:, SCALAR_INPUTS.index(name)] = 0
        return Tensor(x_im, dtype=self.dtype), Tensor(x_sc, dtype=self.dtype)

    def forward(self, x_im: np.ndarray | Tensor, x_sc: np.ndarray | Tensor) -> ModelOutput:
        """Raw arrays go through ``prepare_inputs``; a pair of Tensors is used as given."""
        if not isinstance(x_im, Tensor) or not isinstance(x_sc, Tensor):
            x_im, x_sc = self.prepare_inputs(np.asarray(getattr(x_im, "data", x_im)), getattr(x_sc, "data", x_sc))
        if x_im.ndim != 4 or x_im.shape[1] != self.cfg.image_channels:
            raise ShapeMismatch(f"image input must be [N, {self.cfg.image_channels}, H, W], got {x_im.shape}")
        if x_sc.shape != (x_im.shape[0], self.cfg.scalar_channels):
            raise ShapeMismatch(f"scalar input must be [N, {self.cfg.scalar_channels}], got {x_sc.shape}")
        h, wd = x_im.shape[2:]
        if h % self.cfg.stride or wd % self.cfg.stride:
            raise ShapeMismatch(f"spatial dims {h}x{wd} not divisible by total stride {self.cfg.stride}")
        if not np.all(np.isfinite(x_sc.data)):
            raise ShapeMismatch("scalar inputs must be finite")

        skips = []
        x = x_im
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = ops.max_pool2d(x)
        maps = ops.broadcast_scalar_to_map(x_sc, x.shape[2], x.shape[3])
        x = self.bottleneck(ops.concat([x, maps], axis=1))
        for up, block, skip in zip(self.up, self.decoder, reversed(skips)):
            x = block(ops.concat([up(x), skip], axis=1))
        logits = self.seg_head(x)
        z = self.rr_head(x)
        y_rr = ops.softplus(z) if self.cfg.rr_activation == "softplus" else ops.relu(z)
        return ModelOutput(seg_logits=logits, y_seg=ops.sigmoid(logits), y_rr=y_rr)

    __call__ = forward

    def to_rate(self, y_rr: np.ndarray) -> np.ndarray:
        """Target-space output back to mm/h."""
        return np.expm1(y_rr) if self.cfg.target_transform == "log1p" else np.asarray(y_rr)

    def to_target(self, rate: np.ndarray) -> np.ndarray:
        return np.log1p(rate) if self.cfg.target_transform == "log1p" else np.asarray(rate)

    def predict(self, x_im: np.ndarray, x_sc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(segmentation probability, rain rate mm/h), both [N, H, W]."""
        out = self.forward(x_im, x_sc)
        return out.y_seg.data[:, 0].astype(np.float64), self.to_rate(out.y_rr.data[:, 0].astype(np.float64))


class Discriminator(Module):
    """Strided conv critic producing a per-pixel 'fakeness' score map on rain maps."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype: str = "float32", zero_init: bool = False):
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed + 7919)
        self.layers: list[Conv] = []
        cin = 1
        for i, width in enumerate(cfg.discriminator_widths):
            self.layers.append(Conv(f"disc{i}", cin, width, 3, rng, self.dtype))
            cin = width
        self.score = Conv("disc_score", cin, 1, 1, rng, self.dtype)
        if zero_init:
            for layer in [*self.layers, self.score]:
                layer.zero()

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params += layer.parameters()
        return params + self.score.parameters()

    def score_map(self, rain_map: Tensor) -> Tensor:
        if rain_map.ndim != 4 or rain_map.shape[1] != 1:
            raise ShapeMismatch(f"rain map must be [N, 1, H, W], got {rain_map.shape}")
        x = rain_map
        for layer in self.layers:
            x = ops.relu(layer(x, stride=2))
        return self.score(x)

    def __call__(self, rain_map: Tensor) -> Tensor:
        """Per-sample mean score [N]."""
        s = self.score_map(rain_map)
        return s.mean(axis=(1, 2, 3))


def discriminate(critic: Discriminator, rain_map: Tensor | np.ndarray, expected_shape: Sequence[int] | None = None) -> float:
    """Batch expectation of the critic score."""
    if not isinstance(rain_map, Tensor):
        rain_map = Tensor(np.asarray(rain_map), dtype=critic.dtype)
    if rain_map.ndim == 2:
        rain_map = rain_map.reshape(1, 1, *rain_map.shape)
    if expected_shape is not None and tuple(rain_map.shape[-2:]) != tuple(expected_shape):
        raise ShapeMismatch(f"rain map {rain_map.shape[-2:]} != training patch {tuple(expected_shape)}")
    return float(critic(rain_map).data.mean())
