"""Persistence for gathers, models, run manifests, figures and curve tables.

Binary payloads are pinned to little-endian; every JSON header carries format_version 1.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from fwigan.geometry import AcquisitionGeometry, Grid2D, VelocityModel
from fwigan.modelzoo import load_raw_grid, save_raw_grid
from fwigan.config import TrainConfig
from fwigan.optimize import EpochRecord, InversionRun, MetricRecord
from fwigan.propagator import ShotGathers
from fwigan.source import Wavelet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def header_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def sha256_file(path: Path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def _check_version(version: int, path: Path) -> None:
    if version != FORMAT_VERSION:
        raise ValueError(f"{path} has unsupported format_version {version}")


class GathersHeader(BaseModel):
    format_version: int = FORMAT_VERSION
    n_s: int = Field(..., ge=1)
    nt: int = Field(..., ge=1)
    n_g: int = Field(..., ge=1)
    dt_s: float = Field(..., gt=0)
    f_peak_hz: float | None = None
    t0_s: float | None = None
    geometry: AcquisitionGeometry

    @model_validator(mode="after")
    def check_counts(self):
        if (self.n_s, self.n_g) != (self.geometry.n_s, self.geometry.n_g):
            raise ValueError("Header shot/receiver counts disagree with its geometry")
        return self


def save_gathers(
    gathers: ShotGathers,
    path: Path,
    f_peak: float | None = None,
    t0: float | None = None,
) -> Path:
    """Write [shot][time][receiver] float32 samples plus a JSON header next to them."""
    path = Path(path)
    n_s, nt, n_g = gathers.data.shape
    header = GathersHeader(
        n_s=n_s,
        nt=nt,
        n_g=n_g,
        dt_s=gathers.dt,
        f_peak_hz=f_peak,
        t0_s=t0,
        geometry=gathers.geometry,
    )

    path.write_bytes(gathers.data.astype("<f4").tobytes())
    header_path(path).write_text(header.model_dump_json(indent=2))
    logger.info("Saved %dx%dx%d gathers to %s", n_s, nt, n_g, path)

    return path


def read_gathers_header(path: Path) -> GathersHeader:
    header = GathersHeader.model_validate_json(header_path(path).read_text())
    _check_version(header.format_version, path)
    return header


def load_gathers(path: Path) -> ShotGathers:
    path = Path(path)
    header = read_gathers_header(path)

    payload = path.read_bytes()
    expected = header.n_s * header.nt * header.n_g * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path} holds {len(payload)} bytes, header implies {expected}"
        )

    data = np.frombuffer(payload, dtype="<f4").reshape(header.n_s, header.nt, header.n_g)
    return ShotGathers(data=data, dt=header.dt_s, geometry=header.geometry)


class ModelHeader(BaseModel):
    format_version: int = FORMAT_VERSION
    nz: int
    nx: int
    dx_km: float
    v_min: float
    v_max: float


def save_model(m: VelocityModel, path: Path) -> Path:
    """Raw float32 grid plus a {nz, nx, dx_km, v_min, v_max} sidecar."""
    path = Path(path)
    save_raw_grid(m, path)
    header = ModelHeader(
        nz=m.grid.nz, nx=m.grid.nx, dx_km=m.grid.dx, v_min=m.v_min, v_max=m.v_max
    )
    header_path(path).write_text(header.model_dump_json(indent=2))
    return path


def load_model(path: Path) -> VelocityModel:
    path = Path(path)
    header = ModelHeader.model_validate_json(header_path(path).read_text())
    _check_version(header.format_version, path)

    return load_raw_grid(
        path, header.nz, header.nx, header.dx_km, v_min=header.v_min, v_max=header.v_max
    )


class RunManifest(BaseModel):
    """Everything needed to reproduce one inversion and check that it did."""

    format_version: int = FORMAT_VERSION
    seed: int
    config: TrainConfig
    inputs: dict[str, str] = Field(default_factory=dict, description="Role -> path")
    input_hashes: dict[str, str] = Field(default_factory=dict, description="Role -> sha256")
    init_f: float
    t0: float
    init_snr_db: float | None = None
    final_f: float
    final_snr_db: float | None = None
    history: list[EpochRecord]
    metrics: list[MetricRecord] = Field(default_factory=list)
    history_hash: str

    @model_validator(mode="after")
    def check_seed(self):
        if self.config.seed != self.seed:
            raise ValueError(
                f"Manifest seed {self.seed} disagrees with its configuration seed {self.config.seed}"
            )
        return self


def build_run_manifest(
    run: InversionRun,
    init_f: float,
    inputs: Mapping[str, Path] | None = None,
    init_snr_db: float | None = None,
) -> RunManifest:
    inputs = {role: Path(p) for role, p in (inputs or {}).items()}

    return RunManifest(
        seed=run.config.seed,
        config=run.config,
        inputs={role: str(p) for role, p in inputs.items()},
        input_hashes={role: sha256_file(p) for role, p in inputs.items()},
        init_f=init_f,
        t0=run.t0,
        init_snr_db=init_snr_db,
        final_f=run.f_peak,
        final_snr_db=run.snr_db,
        history=run.history,
        metrics=run.metric_history,
        history_hash=run.history_hash(),
    )


def save_run_manifest(
    run: InversionRun,
    path: Path,
    init_f: float,
    inputs: Mapping[str, Path] | None = None,
    init_snr_db: float | None = None,
) -> RunManifest:
    manifest = build_run_manifest(run, init_f, inputs, init_snr_db)
    Path(path).write_text(manifest.model_dump_json(indent=2))
    return manifest


def load_run_manifest(path: Path) -> RunManifest:
    path = Path(path)
    manifest = RunManifest.model_validate_json(path.read_text())
    _check_version(manifest.format_version, path)
    return manifest


class CommandManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    command: str
    seed: int | None = None
    args: dict[str, Any]
    outputs: dict[str, str] = Field(default_factory=dict, description="Path -> sha256")


def save_command_manifest(
    path: Path,
    command: str,
    args: Mapping[str, Any],
    outputs: Sequence[Path],
    seed: int | None = None,
) -> CommandManifest:
    manifest = CommandManifest(
        command=command,
        seed=seed,
        args={k: str(v) if isinstance(v, Path) else v for k, v in args.items()},
        outputs={str(p): sha256_file(p) for p in outputs},
    )
    Path(path).write_text(manifest.model_dump_json(indent=2))
    return manifest


def render_heatmap(values: np.ndarray | VelocityModel, path: Path) -> Path:
    """Write a binary P5 PGM with a linear min-max map to 0..255, rounding half up.

    A constant field maps to 0.
    """
    field = np.asarray(
        values.values if isinstance(values, VelocityModel) else values, dtype=np.float64
    )
    if field.ndim != 2:
        raise ValueError(f"Heatmaps need a 2D field, got shape {field.shape}")

    lo, hi = float(field.min()), float(field.max())
    if hi > lo:
        pixels = np.floor((field - lo) / (hi - lo) * 255.0 + 0.5)
    else:
        pixels = np.zeros_like(field)

    height, width = field.shape
    path = Path(path)
    path.write_bytes(
        f"P5\n{width} {height}\n255\n".encode("ascii")
        + np.clip(pixels, 0, 255).astype(np.uint8).tobytes()
    )
    return path


def _lateral_index(grid: Grid2D, x_km: float) -> int:
    ix = int(np.floor(x_km / grid.dx + 0.5))
    if x_km < 0 or ix > grid.nx - 1:
        raise ValueError(
            f"Lateral position {x_km} km is outside [0, {(grid.nx - 1) * grid.dx}] km"
        )
    return ix


def export_profiles(
    models: Sequence[VelocityModel],
    lateral_positions: Sequence[float],
    path: Path,
    labels: Sequence[str] | None = None,
) -> pd.DataFrame:
    """Depth profiles at the nearest column to each lateral position (km)."""
    if not models:
        raise ValueError("At least one model is required")
    grid = models[0].grid
    if any(m.grid != grid for m in models):
        raise ValueError("All profiled models must share one grid")

    labels = list(labels) if labels is not None else [f"model{i}" for i in range(len(models))]
    if len(labels) != len(models):
        raise ValueError("One label per model is required")

    columns: dict[str, np.ndarray] = {"depth_km": grid.depths_km()}
    for label, m in zip(labels, models):
        for x_km in lateral_positions:
            ix = _lateral_index(grid, x_km)
            columns[f"{label}@{ix * grid.dx:.3f}km"] = np.asarray(m.values)[:, ix]

    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False)
    return frame


def export_wavelets(wavelets: Mapping[str, Wavelet], path: Path) -> pd.DataFrame:
    """One time column and one amplitude column per named wavelet."""
    first = next(iter(wavelets.values()))
    if any(w.nt != first.nt or w.dt != first.dt for w in wavelets.values()):
        raise ValueError("Wavelets must share one time axis")

    frame = pd.DataFrame(
        {"time_s": first.times, **{name: w.samples for name, w in wavelets.items()}}
    )
    frame.to_csv(path, index=False)
    return frame


def export_history(run: InversionRun, path: Path) -> pd.DataFrame:
    frame = pd.DataFrame(
        [r.model_dump() for r in run.history], columns=list(EpochRecord.model_fields)
    )
    frame.to_csv(path, index=False)
    return frame


def export_metrics(records: Sequence[MetricRecord], path: Path) -> pd.DataFrame:
    frame = pd.DataFrame(
        [r.model_dump() for r in records], columns=["epoch", "ssim", "error", "snr_db"]
    )
    frame.to_csv(path, index=False)
    return frame


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    Path(path).write_text(json.dumps(payload, indent=2))
    return Path(path)
