"""Layer-fusion strategies and the trainable projection head.

A fusion strategy combines intermediate-layer feature maps with the
final trunk output before projection:

* ``last`` - final map only (the baseline);
* ``layer:<k>`` - combine tap k with the final map;
* ``mean:<k1,k2,...>`` - combine the elementwise mean of several taps
  with the final map.

Two combine modes exist.  ``add`` sums the tap part into the final map;
``concat`` channel-concatenates (N x 2d) and projects back to N x d with
a combine weight, which is lossless before projection and therefore the
default.  The trunk is frozen, so the trainable surface is exactly the
combine weight plus the 2-layer projector, and analytic gradients for it
are verified against central finite differences in :func:`grad_check`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterator

import numpy as np
from scipy.special import erf

from .vit import TapFeatures, TrunkConfig

COMBINE_MODES = ("add", "concat")
ACTIVATIONS = ("gelu", "identity")


@dataclass(frozen=True)
class FusionStrategy:
    variant: str  # "last" | "single" | "mean"
    layers: tuple[int, ...] = ()
    combine: str = "concat"

    def __post_init__(self) -> None:
        if self.variant not in ("last", "single", "mean"):
            raise ValueError(f"unknown fusion variant {self.variant!r}")
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"combine mode must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.variant == "last" and self.layers:
            raise ValueError("variant 'last' takes no layers")
        if self.variant == "single" and len(self.layers) != 1:
            raise ValueError("variant 'single' takes exactly one layer")
        if self.variant == "mean":
            if not self.layers:
                raise ValueError("variant 'mean' needs at least one layer")
            if len(set(self.layers)) != len(self.layers):
                raise ValueError(f"duplicate layers in {self.layers}")

    def tap_set(self) -> set[int]:
        return set(self.layers)

    def label(self) -> str:
        if self.variant == "last":
            return "last"
        if self.variant == "single":
            return f"layer:{self.layers[0]}"
        return "mean:" + ",".join(str(k) for k in self.layers)


def parse_strategy(text: str, config: TrunkConfig) -> FusionStrategy:
    """Parse a strategy string like ``mean:middle,deep combine=add``.

    Layer references are 1-based block indices or the aliases shallow,
    middle, deep (depth/4, depth/2, 3*depth/4).
    """
    combine = "concat"
    parts = text.split()
    if not parts:
        raise ValueError("empty fusion strategy")
    for part in parts[1:]:
        if part.startswith("combine="):
            combine = part.removeprefix("combine=")
        else:
            raise ValueError(f"unexpected token {part!r} in fusion strategy {text!r}")
    head = parts[0]

    def resolve(token: str) -> int:
        token = token.strip()
        if token.isdigit():
            layer = int(token)
        else:
            layer = config.resolve_alias(token)
        if not 1 <= layer <= config.depth:
            raise ValueError(f"layer {layer} out of range [1, {config.depth}]")
        return layer

    if head == "last":
        return FusionStrategy(variant="last", combine=combine)
    if head.startswith("layer:"):
        return FusionStrategy(
            variant="single", layers=(resolve(head.removeprefix("layer:")),), combine=combine
        )
    if head.startswith("mean:"):
        layers = tuple(resolve(t) for t in head.removeprefix("mean:").split(","))
        return FusionStrategy(variant="mean", layers=layers, combine=combine)
    raise ValueError(f"unknown fusion strategy {head!r}; use last, layer:<k> or mean:<k1,...>")


@dataclass(frozen=True)
class ProjectorParams:
    """Trainable head: optional combine weight plus a 2-layer perceptron.

    ``combine_w`` (2d x d) is present only in concat mode.  ``activation``
    is GELU by default; "identity" exists so gradient checks have an
    exactly-linear control configuration.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    combine_w: np.ndarray | None = None
    activation: str = "gelu"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[1] != self.b2.shape[0]:
            raise ValueError("bias shapes do not match weight shapes")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("projector layer widths do not chain")
        if self.combine_w is not None and self.combine_w.shape[0] != 2 * self.combine_w.shape[1]:
            raise ValueError("combine weight must map 2d -> d")

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                yield f.name, value


def init_projector(
    d: int, seed: int, d_mid: int | None = None, d_out: int | None = None, combine: str = "concat"
) -> ProjectorParams:
    """Seeded uniform init scaled by 1/sqrt(fan_in); biases start at zero."""
    d_mid = d if d_mid is None else d_mid
    d_out = d if d_out is None else d_out
    rng = np.random.default_rng(seed)

    def weight(rows: int, cols: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(rows, cols)) / math.sqrt(rows)

    combine_w = weight(2 * d, d) if combine == "concat" else None
    return ProjectorParams(
        w1=weight(d, d_mid),
        b1=np.zeros(d_mid),
        w2=weight(d_mid, d_out),
        b2=np.zeros(d_out),
        combine_w=combine_w,
    )


def _tap_part(features: TapFeatures, strategy: FusionStrategy) -> np.ndarray:
    maps = []
    for k in strategy.layers:
        if k not in features.taps:
            raise ValueError(f"strategy {strategy.label()!r} needs tap {k}, which was not recorded")
        maps.append(features.taps[k])
    if strategy.variant == "single":
        return maps[0]
    return np.mean(maps, axis=0)


def fuse(
    features: TapFeatures, strategy: FusionStrategy, params: ProjectorParams
) -> np.ndarray:
    """Combine the tap part with the final feature map; output is N x d."""
    final = features.final
    if strategy.variant == "last":
        return final
    tap = _tap_part(features, strategy)
    if tap.shape != final.shape:
        raise ValueError(f"tap shape {tap.shape} does not match final shape {final.shape}")
    if strategy.combine == "add":
        return tap + final
    if params.combine_w is None:
        raise ValueError("concat combine requires params.combine_w")
    return np.concatenate([tap, final], axis=1) @ params.combine_w


def _activation(params: ProjectorParams, z: np.ndarray) -> np.ndarray:
    if params.activation == "identity":
        return z
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


def _activation_grad(params: ProjectorParams, z: np.ndarray) -> np.ndarray:
    if params.activation == "identity":
        return np.ones_like(z)
    # d/dz [z * Phi(z)] = Phi(z) + z * phi(z)
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return cdf + z * pdf


def project(fused: np.ndarray, params: ProjectorParams) -> np.ndarray:
    """Row-wise 2-layer perceptron."""
    if fused.shape[1] != params.w1.shape[0]:
        raise ValueError(
            f"fused width {fused.shape[1]} does not match projector input {params.w1.shape[0]}"
        )
    return _activation(params, fused @ params.w1 + params.b1) @ params.w2 + params.b2


def fusion_forward(
    features: TapFeatures, strategy: FusionStrategy, params: ProjectorParams
) -> np.ndarray:
    return project(fuse(features, strategy, params), params)


def _quadratic_loss_and_grads(
    features: TapFeatures, strategy: FusionStrategy, params: ProjectorParams
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss = sum of squares of the projector output, with analytic grads
    for every trainable array (combine weight and projector weights).
    """
    final = features.final
    if strategy.variant == "last":
        tap = None
        concat_in = None
        fused = final
    else:
        tap = _tap_part(features, strategy)
        if strategy.combine == "add":
            concat_in = None
            fused = tap + final
        else:
            if params.combine_w is None:
                raise ValueError("concat combine requires params.combine_w")
            concat_in = np.concatenate([tap, final], axis=1)
            fused = concat_in @ params.combine_w

    z = fused @ params.w1 + params.b1
    h = _activation(params, z)
    y = h @ params.w2 + params.b2
    loss = float(np.sum(y * y))

    d_y = 2.0 * y
    grads: dict[str, np.ndarray] = {
        "w2": h.T @ d_y,
        "b2": d_y.sum(axis=0),
    }
    d_z = (d_y @ params.w2.T) * _activation_grad(params, z)
    grads["w1"] = fused.T @ d_z
    grads["b1"] = d_z.sum(axis=0)
    if concat_in is not None:
        d_fused = d_z @ params.w1.T
        grads["combine_w"] = concat_in.T @ d_fused
    elif params.combine_w is not None:
        # Present but unused by this strategy; the loss is flat in it.
        grads["combine_w"] = np.zeros_like(params.combine_w)
    return loss, grads


def grad_check(
    strategy: FusionStrategy, params: ProjectorParams, probe_input: TapFeatures
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Per parameter theta the step is ``1e-4 * max(1, |theta|)`` and the
    error metric is ``|a - n| / max(1, |a|, |n|)``.  The loss is the
    squared norm of the projector output.
    """
    _, analytic = _quadratic_loss_and_grads(probe_input, strategy, params)
    for name, grad in analytic.items():
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"analytic gradient for {name!r} is not finite")

    worst = 0.0
    for name, grad in analytic.items():
        grad_flat = grad.reshape(-1)
        work = getattr(params, name).copy()
        flat = work.reshape(-1)
        bumped = replace(params, **{name: work})
        for i in range(flat.size):
            theta = float(flat[i])
            h = 1e-4 * max(1.0, abs(theta))
            flat[i] = theta + h
            theta_plus = float(flat[i])
            loss_plus = _quadratic_loss_and_grads(probe_input, strategy, bumped)[0]
            flat[i] = theta - h
            theta_minus = float(flat[i])
            loss_minus = _quadratic_loss_and_grads(probe_input, strategy, bumped)[0]
            flat[i] = theta
            numeric = (loss_plus - loss_minus) / (theta_plus - theta_minus)
            err = abs(grad_flat[i] - numeric) / max(1.0, abs(grad_flat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
