import hashlib
import json
import logging
import math
import time
from typing import Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fwigan.config import ClipKind, ClipRule, InversionMode, TrainConfig
from fwigan.critic import Critic, CriticConfig
from fwigan.geometry import VelocityModel, clamp_values
from fwigan.losses import (
    choose_c,
    generator_upstream,
    l2_misfit,
    maxabs_normalize,
    maxabs_normalize_vjp,
    normalize,
    normalize_vjp,
    sample_learned_noise,
    wgan_losses,
)
from fwigan.metrics import MetricReport, evaluate
from fwigan.propagator import (
    InstabilityError,
    ShotGathers,
    ensure_cfl,
    forward,
    sponge_profile,
    vjp,
)
from fwigan.source import Wavelet, ricker

logger = logging.getLogger(__name__)

# Largest peak frequency the estimate may reach, as a fraction of Nyquist.
F_NYQUIST_FRACTION = 0.9


def clip(grad: np.ndarray, rule: ClipRule) -> np.ndarray:
    """Clamp elementwise into [-limit, limit] or rescale so that ||grad|| <= limit."""
    grad = np.asarray(grad, dtype=np.float64)
    if rule.kind == ClipKind.VALUE:
        return np.clip(grad, -rule.limit, rule.limit)

    norm = float(np.linalg.norm(grad))
    if norm > rule.limit:
        return grad * (rule.limit / norm)
    return grad


def clip_global(grads: dict[str, np.ndarray], rule: ClipRule) -> dict[str, np.ndarray]:
    """Clip a group of gradients; a norm rule applies to their joint norm."""
    if rule.kind == ClipKind.VALUE:
        return {name: clip(g, rule) for name, g in grads.items()}

    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= rule.limit:
        return grads

    scale = rule.limit / norm
    return {name: g * scale for name, g in grads.items()}


class AdamState(BaseModel):
    """First and second moments of one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = Field(default=0, ge=0)
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @classmethod
    def zeros(cls, shape: tuple[int, ...], **kwargs) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), **kwargs)


def adam_step(
    state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float
) -> np.ndarray:
    """Bias-corrected Adam update; the moments in state are advanced in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError(
            f"Gradient shape {grad.shape} does not match optimizer state {state.m.shape}"
        )

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)

    return np.asarray(param, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at(
    epoch: int, base: float, milestones: Sequence[int], gamma: float = 0.5
) -> float:
    """base * gamma^k where k counts the milestones already reached."""
    return base * gamma ** sum(1 for milestone in milestones if epoch >= milestone)


class EpochRecord(BaseModel):
    epoch: int
    misfit: float | None = None
    critic_loss: float | None = None
    wasserstein: float | None = None
    gen_loss: float | None = None
    lr_v: float
    f_peak: float
    snr_db: float | None = None
    wall_ms: float


class MetricRecord(MetricReport):
    epoch: int


class EpochSink(Protocol):
    def log_epoch(self, record: EpochRecord, metrics: MetricRecord | None) -> None: ...


class InversionRun(BaseModel):
    """Configuration and evolving state of one inversion."""

    config: TrainConfig
    model: VelocityModel
    f_peak: float
    t0: float
    snr_db: float | None = None
    c: float | None = None
    history: list[EpochRecord] = Field(default_factory=list)
    metric_history: list[MetricRecord] = Field(default_factory=list)
    adam: dict[str, AdamState] = Field(default_factory=dict, exclude=True)
    critic: Critic | None = Field(default=None, exclude=True)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def wavelet(self, nt: int, dt: float) -> Wavelet:
        return ricker(self.f_peak, nt, dt, self.t0)

    def history_hash(self) -> str:
        """Digest of the loss history, wall-clock times excluded."""
        records = [r.model_dump(exclude={"wall_ms"}) for r in self.history]
        return hashlib.sha256(json.dumps(records, sort_keys=True).encode()).hexdigest()


class _InversionLoop:
    """Epoch and mini-batch bookkeeping shared by both objectives."""

    mode: InversionMode

    def __init__(
        self,
        cfg: TrainConfig,
        observed: ShotGathers,
        init_model: VelocityModel,
        init_f: float,
        t0: float | None,
        truth: VelocityModel | None,
        tracker: EpochSink | None,
    ):
        if cfg.mode != self.mode:
            raise ValueError(f"Configuration is for {cfg.mode}, not {self.mode}")

        self.cfg = cfg
        self.observed = observed
        self.geometry = observed.geometry
        if self.geometry.grid != init_model.grid:
            raise ValueError("Observed data and initial model use different grids")

        cfg.check_shots(self.geometry.n_s)
        self.nt, self.dt = observed.nt, observed.dt
        self.f_max = F_NYQUIST_FRACTION * 0.5 / self.dt
        if cfg.f_min >= self.f_max:
            raise ValueError(
                f"Frequency guard [{cfg.f_min}, {self.f_max}] Hz is empty for dt={self.dt}"
            )

        t0 = ricker(init_f, self.nt, self.dt, t0).t0
        ensure_cfl(init_model.v_max, init_model.grid.dx_m, self.dt)

        self.sponge = sponge_profile(init_model.grid, init_model.v_max, cfg.sponge_width)
        self.rng = np.random.default_rng(cfg.seed)
        self.truth = truth
        self.tracker = tracker
        self.run = InversionRun(
            config=cfg,
            model=init_model,
            f_peak=init_f,
            t0=t0,
            adam={
                "v": AdamState.zeros(init_model.grid.shape),
                "f": AdamState.zeros(()),
            },
        )

    def _lrs(self, epoch: int) -> dict[str, float]:
        cfg = self.cfg
        return {
            name: lr_at(epoch, base, cfg.milestones, cfg.gamma)
            for name, base in (
                ("v", cfg.lr_v),
                ("c", cfg.lr_c),
                ("f", cfg.lr_f),
                ("snr", cfg.lr_snr),
            )
        }

    def _forward(self, shots: np.ndarray):
        g = self.geometry.subset(shots)
        w = self.run.wavelet(self.nt, self.dt)
        sim, fields = forward(
            self.run.model, w, g, self.sponge, keep_wavefields=True, threads=self.cfg.threads
        )
        return g, w, sim, fields

    def _update_unknowns(
        self,
        grad_v: np.ndarray,
        grad_f: float,
        grad_snr: float | None,
        lrs: dict[str, float],
    ) -> None:
        run, cfg = self.run, self.cfg

        grad_v = np.array(grad_v)
        grad_v[: cfg.frozen_top_rows] = 0.0
        logger.debug(
            "Gradient norms: v=%.3e f=%.3e snr=%s",
            np.linalg.norm(grad_v),
            abs(grad_f),
            "-" if grad_snr is None else f"{abs(grad_snr):.3e}",
        )
        grad_v = clip(grad_v, cfg.clip_v)
        values = adam_step(run.adam["v"], run.model.values, grad_v, lrs["v"])
        run.model = run.model.with_values(
            clamp_values(values, run.model.v_min, run.model.v_max)
        )

        if cfg.learn_f:
            f = adam_step(run.adam["f"], np.array(run.f_peak), np.array(grad_f), lrs["f"])
            run.f_peak = float(np.clip(f, cfg.f_min, self.f_max))

        if grad_snr is not None:
            snr = adam_step(
                run.adam["snr"], np.array(run.snr_db), np.array(grad_snr), lrs["snr"]
            )
            run.snr_db = float(snr)

    def _batch_step(self, shots: np.ndarray, lrs: dict[str, float]) -> dict[str, float]:
        raise NotImplementedError

    def _record_metrics(self, epoch: int) -> MetricRecord | None:
        if self.truth is None:
            return None

        report = evaluate(self.run.model, self.truth)
        record = MetricRecord(epoch=epoch, **report.model_dump())
        self.run.metric_history.append(record)
        return record

    def fit(self) -> InversionRun:
        cfg, run = self.cfg, self.run
        batch_count = self.geometry.n_s // cfg.batch_size
        logger.info(
            "Starting %s inversion: %d epochs, %d batches of %d shots",
            self.mode.value,
            cfg.epochs,
            batch_count,
            cfg.batch_size,
        )
        self._record_metrics(0)

        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            lrs = self._lrs(epoch)
            batches = self.rng.permutation(self.geometry.n_s).reshape(
                batch_count, cfg.batch_size
            )

            losses: list[dict[str, float]] = []
            for b, shots in enumerate(batches):
                try:
                    losses.append(self._batch_step(shots, lrs))
                except InstabilityError as e:
                    raise InstabilityError(f"Epoch {epoch}, batch {b}: {e}") from e
                logger.debug("Epoch %d batch %d shots %s: %s", epoch, b, shots, losses[-1])

            record = EpochRecord(
                epoch=epoch,
                **self._summarize(losses),
                lr_v=lrs["v"],
                f_peak=run.f_peak,
                snr_db=run.snr_db,
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
            run.history.append(record)
            logger.info(json.dumps(record.model_dump(exclude_none=True)))

            metrics = self._record_metrics(epoch + 1)
            if self.tracker is not None:
                self.tracker.log_epoch(record, metrics)

        return run

    def _summarize(self, losses: list[dict[str, float]]) -> dict[str, float]:
        raise NotImplementedError


class _FwiLoop(_InversionLoop):
    """Least-squares misfit on max-abs normalized mini-batches."""

    mode = InversionMode.FWI

    def _batch_step(self, shots: np.ndarray, lrs: dict[str, float]) -> dict[str, float]:
        g, w, sim, fields = self._forward(shots)
        obs = sim.with_data(self.observed.data[shots])

        misfit, residual = l2_misfit(
            sim.with_data(maxabs_normalize(sim.data)),
            obs.with_data(maxabs_normalize(obs.data)),
        )
        adjoint = sim.with_data(maxabs_normalize_vjp(sim.data, residual.data))
        grad_v, grad_f = vjp(
            self.run.model, w, g, self.sponge, adjoint, fields, threads=self.cfg.threads
        )
        self._update_unknowns(grad_v, grad_f, None, lrs)

        return {"misfit": misfit}

    def _summarize(self, losses: list[dict[str, float]]) -> dict[str, float]:
        return {"misfit": float(sum(item["misfit"] for item in losses))}


class _FwiGanLoop(_InversionLoop):
    """Physics generator trained against a Wasserstein critic with gradient penalty."""

    mode = InversionMode.FWIGAN

    def __init__(
        self,
        cfg: TrainConfig,
        observed: ShotGathers,
        init_model: VelocityModel,
        init_f: float,
        t0: float | None,
        truth: VelocityModel | None,
        tracker: EpochSink | None,
        init_snr: float | None,
        critic: Critic | None,
    ):
        super().__init__(cfg, observed, init_model, init_f, t0, truth, tracker)

        run = self.run
        run.c = choose_c(observed).c
        self.floor = cfg.positivity_floor * run.c

        if cfg.learn_noise:
            run.snr_db = cfg.init_snr_db if init_snr is None else init_snr
            if not math.isfinite(run.snr_db):
                raise ValueError("The initial SNR of a learned noise level must be finite")
            run.adam["snr"] = AdamState.zeros(())

        critic_cfg = CriticConfig(
            in_channels=cfg.batch_size,
            input_h=self.nt,
            input_w=self.geometry.n_g,
            base_channels=cfg.base_channels,
            n_blocks=cfg.n_blocks,
            fc_width=cfg.fc_width,
        )
        if critic is None:
            critic = Critic.build(critic_cfg, seed=cfg.seed)
        elif critic.cfg.in_channels != cfg.batch_size or (
            critic.cfg.input_h,
            critic.cfg.input_w,
        ) != (self.nt, self.geometry.n_g):
            raise ValueError(
                f"Critic expects {critic.cfg.in_channels}x{critic.cfg.input_h}x"
                f"{critic.cfg.input_w} gathers, batches are "
                f"{cfg.batch_size}x{self.nt}x{self.geometry.n_g}"
            )
        run.critic = critic
        for name, p in critic.params.items():
            run.adam[f"critic.{name}"] = AdamState.zeros(p.shape)

    def _fake(self, sim: np.ndarray, ref_norm: float):
        if self.run.snr_db is None:
            return sim, None

        noise, dnoise = sample_learned_noise(
            sim.shape, self.run.snr_db, ref_norm, self.rng
        )
        return sim + noise, dnoise

    def _critic_step(self, real_norm: np.ndarray, fake_norm: np.ndarray, lr: float):
        critic, run = self.run.critic, self.run
        mu = self.rng.uniform(size=real_norm.shape[0])

        critic.params.zero_grad()
        losses = wgan_losses(critic, real_norm, fake_norm, mu, self.cfg.lam)
        if not math.isfinite(losses.critic_loss):
            raise InstabilityError(f"Critic loss became {losses.critic_loss}")

        grads = clip_global(critic.params.gradients(), self.cfg.clip_c)
        for name, p in critic.params.items():
            p.data = adam_step(run.adam[f"critic.{name}"], p.data, grads[name], lr)

        return losses

    def _batch_step(self, shots: np.ndarray, lrs: dict[str, float]) -> dict[str, float]:
        run = self.run
        g, w, sim, fields = self._forward(shots)
        real_norm = normalize(self.observed.data[shots], run.c)
        ref_norm = float(np.linalg.norm(sim.data))

        # The model is fixed during the critic iterations, so one simulation serves them all.
        for _ in range(self.cfg.n_critic):
            fake, _ = self._fake(sim.data, ref_norm)
            losses = self._critic_step(
                real_norm, normalize(fake, run.c, self.floor), lrs["c"]
            )

        fake, dnoise = self._fake(sim.data, ref_norm)
        gen_loss, upstream = generator_upstream(
            run.critic, normalize(fake, run.c, self.floor)
        )
        g_raw = normalize_vjp(fake, run.c, upstream, self.floor)

        grad_v, grad_f = vjp(
            run.model, w, g, self.sponge, sim.with_data(g_raw), fields, threads=self.cfg.threads
        )
        grad_snr = None if dnoise is None else float(np.sum(g_raw * dnoise))
        self._update_unknowns(grad_v, grad_f, grad_snr, lrs)

        return {
            "critic_loss": losses.critic_loss,
            "wasserstein": losses.wasserstein,
            "gen_loss": gen_loss,
        }

    def _summarize(self, losses: list[dict[str, float]]) -> dict[str, float]:
        return {
            key: float(np.mean([item[key] for item in losses]))
            for key in ("critic_loss", "wasserstein", "gen_loss")
        }


def run_fwi(
    cfg: TrainConfig,
    observed: ShotGathers,
    init_model: VelocityModel,
    init_f: float,
    *,
    t0: float | None = None,
    truth: VelocityModel | None = None,
    tracker: EpochSink | None = None,
) -> InversionRun:
    """Least-squares FWI with Adam on max-abs normalized mini-batches.

    Args:
    ----
        cfg (TrainConfig): Hyper-parameters; cfg.mode must be fwi.
        observed (ShotGathers): Observed data; its geometry and time axis drive simulation.
        init_model (VelocityModel): Starting model, also providing the clamp bounds.
        init_f (float): Starting Ricker peak frequency in Hz.
        t0 (float | None): Wavelet delay held fixed during the run; defaults to 1/init_f.
        truth (VelocityModel | None): When given, SSIM and relative error are tracked.
        tracker (EpochSink | None): Receives every epoch record.

    Returns:
    -------
        InversionRun: Final state and histories.
    """
    return _FwiLoop(cfg, observed, init_model, init_f, t0, truth, tracker).fit()


def run_fwigan(
    cfg: TrainConfig,
    observed: ShotGathers,
    init_model: VelocityModel,
    init_f: float,
    init_snr: float | None = None,
    *,
    t0: float | None = None,
    truth: VelocityModel | None = None,
    tracker: EpochSink | None = None,
    critic: Critic | None = None,
) -> InversionRun:
    """Adversarial inversion: n_critic critic updates, then one update of v, f and snr per batch."""
    return _FwiGanLoop(
        cfg, observed, init_model, init_f, t0, truth, tracker, init_snr, critic
    ).fit()
