"""Hyper-parameters of one inversion run."""

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

from pydantic import BaseModel, ConfigDict, Field, model_validator


class InversionMode(StrEnum):
    """The objective driving the velocity update."""

    FWI = "fwi"
    FWIGAN = "fwigan"


class ClipKind(StrEnum):
    VALUE = "value"
    NORM = "norm"


class ClipRule(BaseModel):
    kind: ClipKind
    limit: float = Field(..., gt=0)

    model_config = ConfigDict(frozen=True)


class TrainConfig(BaseModel):
    """A class to hold every hyper-parameter of one inversion."""

    mode: InversionMode = InversionMode.FWIGAN
    epochs: int = Field(default=300, ge=0)
    batch_size: int = Field(default=5, ge=1)
    n_critic: int = Field(default=6, ge=1)
    lam: float = Field(default=10.0, ge=0, description="Gradient penalty weight")
    lr_v: float = Field(default=5.0, ge=0)
    lr_c: float = Field(default=1e-3, ge=0)
    lr_f: float = Field(default=1e-3, ge=0)
    lr_snr: float = Field(default=1.0, ge=0)
    milestones: list[int] = Field(default_factory=lambda: [100, 200])
    gamma: float = Field(default=0.5, gt=0, le=1)
    clip_v: ClipRule = ClipRule(kind=ClipKind.VALUE, limit=10.0)
    clip_c: ClipRule = ClipRule(kind=ClipKind.NORM, limit=1e3)
    seed: int = 0
    learn_f: bool = True
    learn_noise: bool = False
    init_snr_db: float = 20.0
    f_min: float = Field(default=0.5, gt=0, description="Lower guard on the peak frequency in Hz")
    frozen_top_rows: int = Field(default=0, ge=0)
    positivity_floor: float = Field(
        default=1e-3, gt=0, lt=1, description="Floor on shifted simulated data, as a fraction of c"
    )
    sponge_width: int = Field(default=20, ge=0)
    base_channels: int = Field(default=32, ge=1)
    n_blocks: int = Field(default=6, ge=1)
    fc_width: int = Field(default=2000, ge=1)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_milestones(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("Learning-rate milestones must be strictly increasing")
        return self

    def check_shots(self, n_s: int) -> None:
        if n_s % self.batch_size:
            raise ValueError(
                f"Batch size {self.batch_size} does not divide the shot count {n_s}"
            )
