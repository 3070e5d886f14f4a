import logging
import math
from pathlib import Path
from typing import Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fwigan import nn
from fwigan.nn import ParamStore, Tensor

logger = logging.getLogger(__name__)


class Scorer(Protocol):
    """Anything that maps a [B, H, W] tensor to a scalar tensor."""

    def score_tensor(self, x: Tensor) -> Tensor: ...


class CriticConfig(BaseModel):
    """A class to hold the critic architecture.

    in_channels is the mini-batch shot count; input_h and input_w are the time samples and
    receivers of one gather before padding."""

    in_channels: int = Field(..., ge=1)
    input_h: int = Field(..., ge=1)
    input_w: int = Field(..., ge=1)
    base_channels: int = Field(default=32, ge=1)
    n_blocks: int = Field(default=6, ge=1)
    fc_width: int = Field(default=2000, ge=1)
    negative_slope: float = Field(default=0.1, ge=0)

    model_config = ConfigDict(frozen=True)

    @property
    def reduction(self) -> int:
        return 2**self.n_blocks

    @property
    def padded_h(self) -> int:
        return math.ceil(self.input_h / self.reduction) * self.reduction

    @property
    def padded_w(self) -> int:
        return math.ceil(self.input_w / self.reduction) * self.reduction

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.n_blocks)]

    @property
    def final_shape(self) -> tuple[int, int, int]:
        return (
            self.channels[-1],
            self.padded_h // self.reduction,
            self.padded_w // self.reduction,
        )

    @property
    def flatten_size(self) -> int:
        return math.prod(self.final_shape)

    @property
    def parameter_count(self) -> int:
        count = 0
        c_prev = self.in_channels
        for c in self.channels:
            count += c * c_prev * 9 + c
            c_prev = c

        count += self.flatten_size * self.fc_width + self.fc_width
        count += self.fc_width + 1

        return count


class Critic:
    """Convolutional scoring network; outputs an unbounded scalar."""

    def __init__(self, cfg: CriticConfig, params: ParamStore):
        self.cfg = cfg
        self.params = params
        self._check_params()

    @classmethod
    def build(cls, cfg: CriticConfig, seed: int) -> "Critic":
        rng = np.random.default_rng(seed)
        params = ParamStore()

        c_prev = cfg.in_channels
        for i, c in enumerate(cfg.channels):
            fan_in = c_prev * 9
            params.add(
                f"block{i}.conv.weight", nn.uniform_init(rng, (c, c_prev, 3, 3), fan_in)
            )
            params.add(f"block{i}.conv.bias", np.zeros(c))
            c_prev = c

        params.add(
            "fc1.weight",
            nn.uniform_init(rng, (cfg.fc_width, cfg.flatten_size), cfg.flatten_size),
        )
        params.add("fc1.bias", np.zeros(cfg.fc_width))
        params.add("fc2.weight", nn.uniform_init(rng, (1, cfg.fc_width), cfg.fc_width))
        params.add("fc2.bias", np.zeros(1))

        logger.info(
            "Built critic with %d parameters for input %dx%dx%d (padded %dx%d)",
            params.count,
            cfg.in_channels,
            cfg.input_h,
            cfg.input_w,
            cfg.padded_h,
            cfg.padded_w,
        )

        return cls(cfg, params)

    def _check_params(self) -> None:
        if self.params.count != self.cfg.parameter_count:
            raise ValueError(
                f"Critic holds {self.params.count} parameters, "
                f"configuration implies {self.cfg.parameter_count}"
            )

    def score_tensor(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        expected = (cfg.in_channels, cfg.input_h, cfg.input_w)
        if x.shape != expected and x.shape != (
            cfg.in_channels,
            cfg.padded_h,
            cfg.padded_w,
        ):
            raise ValueError(f"Critic input has shape {x.shape}, expected {expected}")

        h = nn.pad_trailing(x, cfg.padded_h, cfg.padded_w)
        for i in range(cfg.n_blocks):
            h = nn.conv2d(
                h,
                self.params[f"block{i}.conv.weight"],
                self.params[f"block{i}.conv.bias"],
            )
            h = nn.maxpool2d(h)
            h = nn.leaky_relu(h, cfg.negative_slope)

        h = nn.reshape(h, (cfg.flatten_size,))
        h = nn.leaky_relu(
            nn.dense(h, self.params["fc1.weight"], self.params["fc1.bias"]),
            cfg.negative_slope,
        )
        out = nn.dense(h, self.params["fc2.weight"], self.params["fc2.bias"])

        return nn.reshape(out, ())

    def score(self, x: np.ndarray) -> float:
        with nn.no_grad():
            return self.score_tensor(Tensor(x)).item()

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """d score / d x, same shape as x."""
        x = Tensor(x, requires_grad=True)
        (g,) = nn.grad(self.score_tensor(x), [x])
        return g.data

    def frozen_copy(self) -> "Critic":
        """Independent copy for read-only scoring."""
        return Critic(self.cfg, self.params.copy())

    def save(self, path: Path) -> Path:
        path = Path(path)
        self.params.save(path)
        path.with_suffix(".config.json").write_text(self.cfg.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: Path) -> "Critic":
        path = Path(path)
        cfg = CriticConfig.model_validate_json(
            path.with_suffix(".config.json").read_text()
        )
        return cls(cfg, ParamStore.load(path))
