import json
import logging
import os
from contextlib import contextmanager
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from pathlib import Path
from typing import Annotated, Iterator

import typer
from rich import print as rich_print

from fwigan import io, losses, metrics, modelzoo, presets
from fwigan.config import InversionMode
from fwigan.environment import FwiGanEnvironment
from fwigan.geometry import DEFAULT_V_MAX, DEFAULT_V_MIN, Grid2D, surface_layout
from fwigan.optimize import run_fwi, run_fwigan
from fwigan.propagator import forward, sponge_profile
from fwigan.source import ricker

cli = typer.Typer(pretty_exceptions_show_locals=False, no_args_is_help=True)

DEFAULT_F_PEAK = 7.0


class ModelKind(StrEnum):
    DESK = "desk"
    LAYERED = "layered"
    LINEAR = "linear"
    SMOOTHED = "smoothed"


class InitKind(StrEnum):
    SMOOTHED = "smoothed"
    LINEAR = "linear"
    FILE = "file"


class RenderKind(StrEnum):
    MODEL = "model"
    GATHERS = "gathers"


@cli.callback()
def main() -> None:
    """Adversarial and least-squares full waveform inversion."""
    logging.basicConfig(level=FwiGanEnvironment().log_level)


@contextmanager
def _reporting(title: str) -> Iterator[None]:
    """Map invalid input to exit code 2 and numerical failure to exit code 1."""
    try:
        yield
    except (ValueError, OSError) as e:
        logging.error(e)
        rich_print(f"{title} Failed ❌")
        rich_print(f"Error Messages: {e}")

        raise typer.Exit(code=2)
    except ArithmeticError as e:
        logging.error(e)
        rich_print(f"{title} Failed ❌")
        rich_print(f"Error Messages: {e}")

        raise typer.Exit(code=1)
    else:
        rich_print(f"{title} Completed Successfully ✅")


def _floats(text: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ValueError(f"Expected comma-separated numbers, got {text!r}")


def _threads(option: int | None) -> int:
    env_threads = FwiGanEnvironment().threads
    if env_threads is not None:
        return env_threads
    if option is not None:
        return option
    return os.cpu_count() or 1


def _manifest_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.manifest.json")


@cli.command("make-model")
def make_model(
    out: Annotated[Path, typer.Option("--out", "-o", help="Output grid file (float32).")],
    kind: Annotated[ModelKind, typer.Option("--kind", help="Model family.")] = ModelKind.DESK,
    nz: Annotated[int, typer.Option("--nz")] = 40,
    nx: Annotated[int, typer.Option("--nx")] = 80,
    dx: Annotated[float, typer.Option("--dx", help="Cell size in km.")] = 0.03,
    interfaces: Annotated[
        str, typer.Option("--interfaces", help="Depth fractions of layer tops.")
    ] = "0.35,0.7",
    velocities: Annotated[
        str, typer.Option("--velocities", help="Layer velocities in m/s.")
    ] = "1500,2500,3500",
    v0: Annotated[float, typer.Option("--v0", help="Surface velocity in m/s.")] = 1500.0,
    beta: Annotated[float, typer.Option("--beta", help="Gradient in m/s per km.")] = 500.0,
    source: Annotated[
        Path | None,
        typer.Option("--source", help="Model to smooth.", exists=True, dir_okay=False),
    ] = None,
    sigma: Annotated[float, typer.Option("--sigma", help="Smoothing in cells.")] = 8.0,
    v_min: Annotated[float, typer.Option("--v-min")] = DEFAULT_V_MIN,
    v_max: Annotated[float, typer.Option("--v-max")] = DEFAULT_V_MAX,
) -> None:
    """Write a synthetic velocity model."""
    with _reporting("FWIGAN Make Model"):
        grid = Grid2D(nz=nz, nx=nx, dx=dx)
        if kind == ModelKind.DESK:
            model = modelzoo.desk_model(v_min=v_min, v_max=v_max)
        elif kind == ModelKind.LAYERED:
            model = modelzoo.layered(
                grid, _floats(interfaces), _floats(velocities), v_min=v_min, v_max=v_max
            )
        elif kind == ModelKind.LINEAR:
            model = modelzoo.linear_model(grid, v0, beta, v_min=v_min, v_max=v_max)
        else:
            if source is None:
                raise ValueError("--source is required for smoothed models")
            model = modelzoo.gaussian_smooth(io.load_model(source), sigma)

        io.save_model(model, out)
        io.save_command_manifest(
            _manifest_path(out),
            "make-model",
            {
                "kind": kind.value,
                "nz": nz,
                "nx": nx,
                "dx": dx,
                "interfaces": interfaces,
                "velocities": velocities,
                "v0": v0,
                "beta": beta,
                "source": source,
                "sigma": sigma,
                "v_min": v_min,
                "v_max": v_max,
            },
            [out],
        )


@cli.command()
def simulate(
    model: Annotated[
        Path, typer.Option("--model", help="Velocity model file.", exists=True, dir_okay=False)
    ],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output gathers file.")],
    wavelet_f: Annotated[float, typer.Option("--wavelet-f", help="Ricker peak frequency in Hz.")] = DEFAULT_F_PEAK,
    shots: Annotated[int, typer.Option("--shots")] = 8,
    nt: Annotated[int, typer.Option("--nt")] = 1000,
    dt: Annotated[float, typer.Option("--dt", help="Time step in s.")] = 0.003,
    t0: Annotated[float | None, typer.Option("--t0", help="Wavelet delay in s; 1/f rounded to a sample by default.")] = None,
    shot_depth: Annotated[int, typer.Option("--shot-depth")] = 0,
    sponge_width: Annotated[int, typer.Option("--sponge-width")] = 20,
    threads: Annotated[int | None, typer.Option("--threads")] = None,
) -> None:
    """Simulate observed shot gathers on a surface acquisition."""
    with _reporting("FWIGAN Simulate"):
        m = io.load_model(model)
        wavelet = ricker(wavelet_f, nt, dt, t0)
        geometry = surface_layout(m.grid, shots, shot_depth)
        gathers, _ = forward(
            m,
            wavelet,
            geometry,
            sponge_profile(m.grid, m.v_max, sponge_width),
            threads=_threads(threads),
        )

        io.save_gathers(gathers, out, wavelet.f_peak, wavelet.t0)
        io.save_command_manifest(
            _manifest_path(out),
            "simulate",
            {
                "model": model,
                "wavelet_f": wavelet_f,
                "shots": shots,
                "nt": nt,
                "dt": dt,
                "t0": wavelet.t0,
                "shot_depth": shot_depth,
                "sponge_width": sponge_width,
            },
            [out],
        )


@cli.command("add-noise")
def add_noise(
    input_path: Annotated[
        Path, typer.Option("--in", help="Clean gathers file.", exists=True, dir_okay=False)
    ],
    snr_db: Annotated[float, typer.Option("--snr-db", help="Target SNR in dB.")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output gathers file.")],
    seed: Annotated[int, typer.Option("--seed")] = 0,
) -> None:
    """Add white Gaussian noise at an exact SNR."""
    with _reporting("FWIGAN Add Noise"):
        clean = io.load_gathers(input_path)
        header = io.read_gathers_header(input_path)
        noisy = losses.add_awgn(clean, snr_db, seed)

        io.save_gathers(noisy, out, header.f_peak_hz, header.t0_s)

        io.save_command_manifest(
            _manifest_path(out),
            "add-noise",
            {"in": input_path, "snr_db": snr_db},
            [out],
            seed=seed,
        )


def _initial_model(
    init_model: InitKind,
    init_path: Path | None,
    truth,
    grid: Grid2D,
    smooth_sigma: float,
    v0: float,
    beta: float,
):
    if init_model == InitKind.FILE:
        if init_path is None:
            raise ValueError("--init-path is required with --init-model file")
        return io.load_model(init_path)

    if init_model == InitKind.LINEAR:
        bounds = {} if truth is None else {"v_min": truth.v_min, "v_max": truth.v_max}
        return modelzoo.linear_model(grid, v0, beta, **bounds)

    reference = truth if init_path is None else io.load_model(init_path)
    if reference is None:
        raise ValueError("--init-model smoothed needs --truth or --init-path to smooth")
    return modelzoo.gaussian_smooth(reference, smooth_sigma)


def _tracker(track: bool):
    environment = FwiGanEnvironment()
    if not track and environment.mlflow_tracking_uri is None:
        return None

    from fwigan.tracking import InversionTracker

    return InversionTracker(environment.mlflow_tracking_uri, environment.experiment_name)


@cli.command()
def invert(
    out_dir: Annotated[Path, typer.Option("--out-dir", help="Directory for all outputs.")],
    obs: Annotated[
        Path | None,
        typer.Option("--obs", help="Observed gathers file.", exists=True, dir_okay=False),
    ] = None,
    mode: Annotated[InversionMode, typer.Option("--mode")] = InversionMode.FWIGAN,
    init_model: Annotated[InitKind, typer.Option("--init-model")] = InitKind.SMOOTHED,
    init_path: Annotated[
        Path | None, typer.Option("--init-path", exists=True, dir_okay=False)
    ] = None,
    truth: Annotated[
        Path | None,
        typer.Option("--truth", help="True model for metrics.", exists=True, dir_okay=False),
    ] = None,
    smooth_sigma: Annotated[float, typer.Option("--smooth-sigma")] = 8.0,
    v0: Annotated[float, typer.Option("--v0")] = 1500.0,
    beta: Annotated[float, typer.Option("--beta")] = 500.0,
    init_f: Annotated[
        float | None, typer.Option("--init-f", help="Initial peak frequency in Hz.")
    ] = None,
    epochs: Annotated[int | None, typer.Option("--epochs")] = None,
    batch: Annotated[int | None, typer.Option("--batch")] = None,
    n_critic: Annotated[int | None, typer.Option("--n-critic")] = None,
    lam: Annotated[float | None, typer.Option("--lambda")] = None,
    lr_v: Annotated[float | None, typer.Option("--lr-v")] = None,
    lr_c: Annotated[float | None, typer.Option("--lr-c")] = None,
    lr_f: Annotated[float | None, typer.Option("--lr-f")] = None,
    lr_snr: Annotated[float | None, typer.Option("--lr-snr")] = None,
    learn_noise: Annotated[
        bool, typer.Option("--learn-noise", help="Use the noisy-data settings and learn the SNR.")
    ] = False,
    init_snr: Annotated[float | None, typer.Option("--init-snr")] = None,
    fc_width: Annotated[int | None, typer.Option("--fc-width")] = None,
    frozen_top_rows: Annotated[int | None, typer.Option("--frozen-top-rows")] = None,
    seed: Annotated[int, typer.Option("--seed")] = 0,
    threads: Annotated[int | None, typer.Option("--threads")] = None,
    track: Annotated[bool, typer.Option("--track", help="Log epochs to mlflow.")] = False,
    from_manifest: Annotated[
        Path | None,
        typer.Option("--from-manifest", help="Re-run a stored inversion.", exists=True, dir_okay=False),
    ] = None,
) -> None:
    """Invert observed gathers for velocity, peak frequency and optionally noise level."""
    with _reporting("FWIGAN Invert"):
        if from_manifest is not None:
            manifest = io.load_run_manifest(from_manifest)
            for role, path in manifest.inputs.items():
                if io.sha256_file(Path(path)) != manifest.input_hashes[role]:
                    raise ValueError(f"Input {role} at {path} changed since the manifest")

            cfg = manifest.config
            obs = Path(manifest.inputs["obs"])
            start = io.load_model(Path(manifest.inputs["init"]))
            truth = Path(manifest.inputs["truth"]) if "truth" in manifest.inputs else None
            first_f, first_snr = manifest.init_f, manifest.init_snr_db
            t0 = manifest.t0
        else:
            if obs is None:
                raise ValueError("--obs is required unless --from-manifest is given")
            cfg = presets.load(
                mode,
                noisy=learn_noise,
                epochs=epochs,
                batch_size=batch,
                n_critic=n_critic,
                lam=lam,
                lr_v=lr_v,
                lr_c=lr_c,
                lr_f=lr_f,
                lr_snr=lr_snr,
                fc_width=fc_width,
                frozen_top_rows=frozen_top_rows,
                seed=seed,
            )
            start = None
            first_snr = init_snr
            first_f = t0 = None

        cfg = cfg.model_copy(update={"threads": _threads(threads)})
        observed = io.load_gathers(obs)
        header = io.read_gathers_header(obs)
        true_model = io.load_model(truth) if truth is not None else None

        if start is None:
            start = _initial_model(
                init_model, init_path, true_model, observed.geometry.grid, smooth_sigma, v0, beta
            )
            first_f = init_f or header.f_peak_hz or DEFAULT_F_PEAK
            t0 = header.t0_s

        out_dir.mkdir(parents=True, exist_ok=True)
        init_file = io.save_model(start, out_dir / "init.f32")
        # Start from the stored float32 grid so that a manifest re-run sees the same values.
        start = io.load_model(init_file)
        inputs = {"obs": obs, "init": init_file}
        if truth is not None:
            inputs["truth"] = truth

        tracker = _tracker(track)
        if tracker is not None:
            tracker.start(f"{cfg.mode.value}-seed{cfg.seed}", cfg.model_dump())

        try:
            if cfg.mode == InversionMode.FWI:
                run = run_fwi(
                    cfg, observed, start, first_f, t0=t0, truth=true_model, tracker=tracker
                )
            else:
                run = run_fwigan(
                    cfg,
                    observed,
                    start,
                    first_f,
                    first_snr,
                    t0=t0,
                    truth=true_model,
                    tracker=tracker,
                )
        finally:
            if tracker is not None:
                tracker.finish()

        _write_outputs(run, out_dir, observed, first_f, inputs, first_snr)

        if from_manifest is not None:
            if run.history_hash() == manifest.history_hash:
                rich_print("History hash matches the manifest.")
            else:
                raise ArithmeticError("Re-run history differs from the manifest")


def _write_outputs(run, out_dir: Path, observed, init_f: float, inputs, init_snr) -> None:
    io.save_model(run.model, out_dir / "model.f32")
    io.render_heatmap(run.model, out_dir / "model.pgm")
    io.render_heatmap(io.load_model(inputs["init"]), out_dir / "init.pgm")
    io.export_history(run, out_dir / "losses.csv")
    if run.metric_history:
        io.export_metrics(run.metric_history, out_dir / "metrics.csv")

    io.write_json(
        out_dir / "source.json",
        {
            "f_init_hz": init_f,
            "f_final_hz": run.f_peak,
            "t0_s": run.t0,
            "snr_init_db": init_snr if run.snr_db is not None else None,
            "snr_final_db": run.snr_db,
        },
    )
    io.export_wavelets(
        {
            "initial": ricker(init_f, observed.nt, observed.dt, run.t0),
            "estimated": run.wavelet(observed.nt, observed.dt),
        },
        out_dir / "wavelets.csv",
    )
    if run.critic is not None:
        run.critic.save(out_dir / "critic.f64")

    io.save_run_manifest(
        run,
        out_dir / "manifest.json",
        init_f,
        inputs,
        run.config.init_snr_db if init_snr is None and run.snr_db is not None else init_snr,
    )


@cli.command("metrics")
def metrics_command(
    truth: Annotated[Path, typer.Option("--truth", exists=True, dir_okay=False)],
    candidate: Annotated[Path, typer.Option("--candidate", exists=True, dir_okay=False)],
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Optional JSON file.")] = None,
) -> None:
    """Compare a candidate model against the true model."""
    with _reporting("FWIGAN Metrics"):
        true_model = io.load_model(truth)
        estimate = io.load_model(candidate)
        result = {
            "ssim": metrics.ssim(estimate, true_model),
            "error": metrics.rel_error(estimate, true_model),
        }

        rich_print(json.dumps(result))
        if out is not None:
            io.write_json(out, result)


@cli.command()
def profiles(
    models: Annotated[
        list[Path], typer.Option("--model", exists=True, dir_okay=False, help="Repeat per model.")
    ],
    at: Annotated[str, typer.Option("--at", help="Comma-separated lateral positions in km.")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output CSV file.")],
    labels: Annotated[
        list[str] | None, typer.Option("--label", help="One per model; file stems by default.")
    ] = None,
) -> None:
    """Write velocity-depth profiles of one or more models to CSV."""
    with _reporting("FWIGAN Profiles"):
        positions = _floats(at)
        if not positions:
            raise ValueError("--at needs at least one lateral position")

        frame = io.export_profiles(
            [io.load_model(path) for path in models],
            positions,
            out,
            labels or [path.stem for path in models],
        )
        rich_print(f"Wrote {frame.shape[1] - 1} profile columns to {out}")


@cli.command()
def render(
    input_path: Annotated[Path, typer.Option("--in", exists=True, dir_okay=False)],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output PGM file.")],
    kind: Annotated[RenderKind, typer.Option("--kind")] = RenderKind.MODEL,
    shot: Annotated[int, typer.Option("--shot", help="Shot index for gathers.")] = 0,
) -> None:
    """Render a model or one shot gather as a grayscale PGM."""
    with _reporting("FWIGAN Render"):
        if kind == RenderKind.MODEL:
            io.render_heatmap(io.load_model(input_path), out)
        else:
            gathers = io.load_gathers(input_path)
            if not 0 <= shot < gathers.geometry.n_s:
                raise ValueError(f"Shot {shot} is outside [0, {gathers.geometry.n_s})")
            io.render_heatmap(gathers.data[shot], out)


if __name__ == "__main__":
    cli()
