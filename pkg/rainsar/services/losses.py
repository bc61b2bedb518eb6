"""Multi-objective training loss and the critic's hinge loss.

Per patch, over ocean pixels I (mask = 1):
  L_seg  = mean_I BCE(y_seg, y > threshold)
  L_rr   = sqrt(mean_I (y_rr - y)^2)
  L_max  = (max_I y - max_I y_rr)^2
  L_mean = |mean_I (y - y_rr)|           (signed when requested)
  L_D    = mean critic score of y_rr     (patches near a station only)
Patch values are averaged over the batch; all-land patches are skipped.
Regression terms compare in target space (log1p by default).
"""

from collections.abc import Callable

import numpy as np

from rainsar.errors import NonFiniteLoss, ShapeMismatch
from rainsar.models import LossWeights
from rainsar.nn import ops
from rainsar.nn.network import Discriminator, ModelOutput
from rainsar.nn.tensor import Tensor

LOSS_NAMES = ("rr", "seg", "max", "mean", "D")


def _batch_mean(per_sample: Tensor, keep: np.ndarray) -> Tensor:
    n = int(keep.sum())
    if n == 0:
        return per_sample.sum() * 0.0
    weights = keep.astype(per_sample.dtype) / n
    return (per_sample * weights).sum()


def loss_components(
    rain: np.ndarray,
    out: ModelOutput,
    mask: np.ndarray,
    critic: Discriminator | None = None,
    critic_keep: np.ndarray | None = None,
    threshold_mmh: float = 3.0,
    signed_mean: bool = False,
    target: Callable[[np.ndarray], np.ndarray] = np.log1p,
    provenance: str | None = None,
) -> dict[str, Tensor]:
    """``rain`` and ``mask`` are [N, H, W]; the model output maps are [N, 1, H, W]."""
    rain = np.asarray(rain, dtype=np.float64)
    if rain.ndim == 2:
        rain = rain[None]
    mask = np.broadcast_to(np.asarray(mask), rain.shape)
    if out.y_rr.shape != (rain.shape[0], 1, *rain.shape[1:]):
        raise ShapeMismatch(f"prediction {out.y_rr.shape} does not match truth {rain.shape}")
    dtype = out.y_rr.dtype
    m = (mask > 0)[:, None]
    ocean = m.reshape(m.shape[0], -1).any(axis=1)

    y_t = Tensor(target(rain)[:, None].astype(dtype))
    labels = Tensor((rain > threshold_mmh)[:, None].astype(dtype))
    z = out.seg_logits
    bce = ops.softplus(z) - labels * z
    y_rr = out.y_rr

    seg = ops.masked_mean(bce, m)
    rr = ops.sqrt(ops.masked_mean(ops.square(y_rr - y_t), m))
    mx = ops.square(ops.masked_max(y_t, m) - ops.masked_max(y_rr, m))
    diff = ops.masked_mean(y_t - y_rr, m)
    mean = diff if signed_mean else ops.abs(diff)

    components = {
        "rr": _batch_mean(rr, ocean),
        "seg": _batch_mean(seg, ocean),
        "max": _batch_mean(mx, ocean),
        "mean": _batch_mean(mean, ocean),
    }
    if critic is not None:
        keep = ocean if critic_keep is None else (np.asarray(critic_keep, dtype=bool) & ocean)
        components["D"] = _batch_mean(critic(y_rr), keep)
    else:
        components["D"] = Tensor(np.zeros((), dtype=dtype))

    for name, value in components.items():
        if not np.all(np.isfinite(value.data)):
            raise NonFiniteLoss(name, provenance)
    return components


def loss_total(components: dict, weights: LossWeights):
    """a*L_rr + b*L_seg + c*L_max + d*L_mean + e*L_D (Tensors or floats)."""
    return (
        components["rr"] * weights.a
        + components["seg"] * weights.b
        + components["max"] * weights.c
        + components["mean"] * weights.d
        + components["D"] * weights.e
    )


def critic_loss(critic: Discriminator, real: Tensor, fake: Tensor) -> Tensor:
    """Hinge loss on a fakeness score: relu(1 + D(real)) + relu(1 - D(fake))."""
    real_term = ops.relu(critic(real) * 1.0 + 1.0).mean()
    fake_term = ops.relu(1.0 - critic(fake)).mean()
    return real_term + fake_term


def as_floats(components: dict) -> dict[str, float]:
    return {k: float(v.data) if isinstance(v, Tensor) else float(v) for k, v in components.items()}
