"""
Entrenamiento primal-dual de la red de ruido.

Ciclo externo h = 1..H sobre el dual; en cada iteración:
  1. N pasos del optimizador sobre el Lagrangiano (lotes frescos en cada paso)
  2. estimados frescos de la pérdida objetivo y de cada restricción
  3. ĝ(λ(h)) = objetivo + Σ λ_i (estimado_i - b̃_i); el mejor se busca después
     de las primeras ``best_warmup·H`` iteraciones
  4. paso dual (o resiliente si γ > 0)

El modo exacto (``train_exact``) reemplaza el paso primal por la mezcla cerrada
del oráculo tabular y comparte con él la actualización dual.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from config import settings
from src.diffusion.distributions import MixtureSpec, TabularDist, sample
from src.diffusion.schedule import (
    TIME_MODES,
    NoiseSchedule,
    build_schedule,
    forward_marginal_sample,
    time_sampler,
)
from src.diffusion.score_net import (
    AdamState,
    NoiseBatch,
    ScoreNet,
    optimizer_step,
    predict_noise,
    weighted_loss_and_grad,
)
from src.errors import ConfigError, NumericalDivergence
from src.oracle.tabular import DualProblem, dual_function_exact, exact_iteration, primal_value_exact
from src.training.dual import dual_step, resilient_dual_step

logger = logging.getLogger(__name__)


class TrainingDiverged(NumericalDivergence):
    """Pérdida, gradiente o λ no finitos durante el entrenamiento."""

    def __init__(self, iteration: int, detalle: str):
        self.iteration = iteration
        super().__init__(f"Entrenamiento divergente en la iteración h={iteration}: {detalle}")


# ── Tipos ─────────────────────────────────────────────────────────────────────

@dataclass
class ConstraintSpec:
    """Una restricción: fuente de datos (distribución o red preentrenada) y umbral b̃."""
    source: object
    threshold_b_tilde: float = 0.0
    batch_size_dual: int = 256
    label: str = ""

    def __post_init__(self):
        errores = []
        if not np.isfinite(self.threshold_b_tilde):
            errores.append(f"Umbral no finito en la restricción {self.label!r}")
        if self.batch_size_dual < 1:
            errores.append(f"batch_size_dual debe ser >= 1 en la restricción {self.label!r}")
        if isinstance(self.source, TabularDist):
            errores.append(f"La restricción {self.label!r} es tabular; usar train_exact")
        if errores:
            raise ConfigError(errores)

    @property
    def is_finetune(self) -> bool:
        return isinstance(self.source, ScoreNet)

    @property
    def dim(self) -> int:
        return source_dim(self.source)


@dataclass
class TrainConfig:
    H: int = 100
    N: int = 10
    eta_p: float = 1e-3
    eta_p_min: float | None = None      # None: paso primal constante
    eta_d: float = 0.1
    gamma: float = 0.0
    batch_primal: int = 256
    T: int = settings.DEFAULT_T
    seed: int = 0
    time_mode: str = "uniform"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    hidden_dims: tuple = (64, 64)
    activation: str = "tanh"
    time_embed_dim: int = 16
    c0: float | None = None
    c1: float | None = None
    schedule_kind: str = "convergent"
    # fracción inicial de H que no compite por el mejor iterado
    best_warmup: float = 0.5

    def __post_init__(self):
        errores = []
        if not 0.0 <= self.best_warmup < 1.0:
            errores.append(f"best_warmup debe estar en [0, 1), se recibió: {self.best_warmup}")
        if self.H < 1 or self.N < 1:
            errores.append(f"H y N deben ser >= 1 (H={self.H}, N={self.N})")
        if self.eta_p <= 0 or self.eta_d <= 0:
            errores.append(f"Los pasos deben ser positivos (eta_p={self.eta_p}, eta_d={self.eta_d})")
        if self.eta_p_min is not None and not 0 < self.eta_p_min <= self.eta_p:
            errores.append(f"eta_p_min debe estar en (0, eta_p], se recibió: {self.eta_p_min}")
        if self.gamma < 0:
            errores.append(f"gamma debe ser >= 0, se recibió: {self.gamma}")
        if self.batch_primal < 1:
            errores.append(f"batch_primal debe ser >= 1, se recibió: {self.batch_primal}")
        if self.time_mode not in TIME_MODES:
            errores.append(f"time_mode desconocido: {self.time_mode!r}")
        if errores:
            raise ConfigError(errores)
        self.hidden_dims = tuple(self.hidden_dims)

    @property
    def resilient(self) -> bool:
        return self.gamma > 0

    def primal_step_size(self, step: int) -> float:
        """Paso primal del paso de optimizador ``step`` (0..H·N-1).

        Con ``eta_p_min`` decae por coseno de ``eta_p`` a ``eta_p_min`` en H·N pasos.
        """
        if self.eta_p_min is None:
            return self.eta_p
        total = self.H * self.N
        avance = step / max(total - 1, 1)
        coseno = 0.5 * (1.0 + math.cos(math.pi * avance))
        return self.eta_p_min + (self.eta_p - self.eta_p_min) * coseno

    @property
    def warmup_iterations(self) -> int:
        """Iteraciones h = 1..k excluidas de la selección del mejor iterado."""
        return int(self.best_warmup * self.H)


@dataclass
class DualState:
    """λ actual, historial por iteración y mejor iterado (h, λ, ĝ)."""
    lam: np.ndarray
    history: list = field(default_factory=list)
    best: tuple | None = None

    @property
    def m(self) -> int:
        return len(self.lam)

    def record(self, h: int, lam, estimates, objective: float, lagrangian: float,
               slack_sq_norm: float, inner_loss: float = float("nan"),
               candidate: bool = True) -> None:
        """Agrega una fila al historial. Solo los iterados ``candidate`` compiten por ``best``."""
        self.history.append({
            "h": h,
            "lam": np.array(lam, dtype=float),
            "estimates": np.array(estimates, dtype=float),
            "objective_est": float(objective),
            "lagrangian": float(lagrangian),
            "slack_sq_norm": float(slack_sq_norm),
            "inner_loss": float(inner_loss),
        })
        if candidate and (self.best is None or lagrangian > self.best[2]):
            self.best = (h, np.array(lam, dtype=float), float(lagrangian))

    def to_frame(self) -> pd.DataFrame:
        """Historial con columnas h, lambda_i, constraint_est_i, objective_est,
        lagrangian, is_best, slack_sq_norm, inner_loss."""
        filas = []
        h_best = self.best[0] if self.best else None
        for fila in self.history:
            registro = {"h": fila["h"]}
            for i, valor in enumerate(fila["lam"], start=1):
                registro[f"lambda_{i}"] = valor
            for i, valor in enumerate(fila["estimates"], start=1):
                registro[f"constraint_est_{i}"] = valor
            registro["objective_est"] = fila["objective_est"]
            registro["lagrangian"] = fila["lagrangian"]
            registro["is_best"] = fila["h"] == h_best
            registro["slack_sq_norm"] = fila["slack_sq_norm"]
            registro["inner_loss"] = fila["inner_loss"]
            filas.append(registro)
        return pd.DataFrame(filas)


def source_dim(source) -> int:
    if isinstance(source, ScoreNet):
        return source.input_dim
    if isinstance(source, MixtureSpec):
        return source.base.dim
    return source.dim


# ── Lotes ─────────────────────────────────────────────────────────────────────

def data_batch(dist, n: int, sched: NoiseSchedule, rng: np.random.Generator,
               time_mode: str = "uniform") -> NoiseBatch:
    """x_0 ~ dist, t según ``time_mode``, ε ~ N(0, I), x_t por el forward."""
    x0 = np.asarray(sample(dist, n, rng), dtype=float)
    t = time_sampler(sched, time_mode, rng, size=n)
    ruido = rng.standard_normal(x0.shape)
    return NoiseBatch(x_t=forward_marginal_sample(sched, x0, t, ruido), t=t, target=ruido, x0=x0)


def finetune_batch(pretrained: ScoreNet, n: int, sched: NoiseSchedule,
                   rng: np.random.Generator) -> NoiseBatch:
    """x_t ~ N(0, I), t uniforme en {2..T}, objetivo ε̂_pre(x_t, t)."""
    x_t = rng.standard_normal((n, pretrained.input_dim))
    t = time_sampler(sched, "uniform", rng, size=n)
    return NoiseBatch(x_t=x_t, t=t, target=predict_noise(pretrained, x_t, t, sched))


def constraint_batch(spec: ConstraintSpec, n: int, sched: NoiseSchedule,
                     rng: np.random.Generator, time_mode: str = "uniform") -> NoiseBatch:
    if spec.is_finetune:
        return finetune_batch(spec.source, n, sched, rng)
    return data_batch(spec.source, n, sched, rng, time_mode)


def batch_mse(net: ScoreNet, batch: NoiseBatch, sched: NoiseSchedule) -> float:
    """media_j ‖ε̂_θ(x_t, t) - objetivo‖²."""
    residuo = predict_noise(net, batch.x_t, batch.t, sched) - batch.target
    return float(np.mean(np.sum(residuo ** 2, axis=1)))


# ── Operaciones ───────────────────────────────────────────────────────────────

def lagrangian_loss(net: ScoreNet, q_batch: NoiseBatch, constraint_batches, lam,
                    sched: NoiseSchedule) -> float:
    """MSE objetivo + Σ λ_i · MSE de la restricción i (sin los términos de umbral)."""
    loss, _ = lagrangian_loss_and_grad(net, q_batch, constraint_batches, lam, sched)
    return loss


def lagrangian_loss_and_grad(net: ScoreNet, q_batch: NoiseBatch, constraint_batches, lam,
                             sched: NoiseSchedule) -> tuple[float, np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError(f"λ debe ser no negativo: {lam}")
    lotes = [q_batch] + list(constraint_batches)
    pesos = [1.0] + list(lam)
    return weighted_loss_and_grad(net, lotes, pesos, sched)


def finetune_constraint_estimate(net: ScoreNet, pretrained: ScoreNet, sched: NoiseSchedule,
                                 n: int, rng: np.random.Generator) -> float:
    """Media Monte Carlo de ‖ε̂_pre(x_t, t) - ε̂_θ(x_t, t)‖² con x_t ~ N(0, I)."""
    if net.input_dim != pretrained.input_dim:
        raise ValueError(
            f"Dimensiones incompatibles: red {net.input_dim}, preentrenada {pretrained.input_dim}"
        )
    return batch_mse(net, finetune_batch(pretrained, n, sched, rng), sched)


def _check_dimensions(q, constraints) -> int:
    d = source_dim(q)
    errores = [
        f"La restricción {c.label or i + 1!r} tiene dimensión {c.dim}, q tiene {d}"
        for i, c in enumerate(constraints) if c.dim != d
    ]
    if errores:
        raise ConfigError(errores)
    return d


def train(config: TrainConfig, q, constraints=(), rng: np.random.Generator = None,
          sched: NoiseSchedule = None, net: ScoreNet = None) -> tuple[ScoreNet, DualState]:
    """Entrenamiento primal-dual (o resiliente si γ > 0).

    Parameters
    ----------
    config : TrainConfig
    q : GaussianMixture o MixtureSpec
        Distribución de datos del objetivo.
    constraints : list[ConstraintSpec]
    rng : np.random.Generator, opcional
        Por defecto ``default_rng(config.seed)``.
    sched : NoiseSchedule, opcional
        Por defecto se construye con ``config.T``, ``c0`` y ``c1``.
    net : ScoreNet, opcional
        Red inicial (se modifica in-place); por defecto una red nueva con ``config.seed``.

    Returns
    -------
    (ScoreNet, DualState)
    """
    constraints = list(constraints)
    d = _check_dimensions(q, constraints)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sched = sched or build_schedule(config.T, config.c0, config.c1, kind=config.schedule_kind)
    if net is None:
        net = ScoreNet(input_dim=d, hidden_dims=config.hidden_dims,
                       time_embed_dim=config.time_embed_dim,
                       activation=config.activation, seed=config.seed)
    elif net.input_dim != d:
        raise ConfigError(f"La red inicial tiene dimensión {net.input_dim}, q tiene {d}")

    m = len(constraints)
    umbrales = np.zeros(m) if config.resilient else np.array(
        [c.threshold_b_tilde for c in constraints], dtype=float)
    estado = DualState(lam=np.zeros(m))
    adam = AdamState.for_net(net)

    logger.info("=" * 60)
    logger.info("Entrenamiento: H=%d, N=%d, m=%d, γ=%.3g, T=%d", config.H, config.N, m,
                config.gamma, sched.T)
    logger.info("=" * 60)

    for h in range(1, config.H + 1):
        lam = estado.lam
        perdida_interna = float("nan")
        for k in range(config.N):
            q_lote = data_batch(q, config.batch_primal, sched, rng, config.time_mode)
            lotes_r = [constraint_batch(c, config.batch_primal, sched, rng, config.time_mode)
                       for c in constraints]
            perdida_interna, grad = lagrangian_loss_and_grad(net, q_lote, lotes_r, lam, sched)
            if not (np.isfinite(perdida_interna) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(h, "pérdida o gradiente no finitos")
            optimizer_step(net, grad, adam, config.primal_step_size((h - 1) * config.N + k),
                           config.beta1, config.beta2, config.weight_decay)

        objetivo = batch_mse(net, data_batch(q, config.batch_primal, sched, rng,
                                             config.time_mode), sched)
        estimados = np.array([
            batch_mse(net, constraint_batch(c, c.batch_size_dual, sched, rng, config.time_mode),
                      sched)
            for c in constraints
        ], dtype=float)
        holgura = estimados - umbrales
        g_hat = objetivo + float(lam @ holgura)
        if not (np.isfinite(g_hat) and np.all(np.isfinite(estimados))):
            raise TrainingDiverged(h, "estimados de pérdida no finitos")

        estado.record(h, lam, estimados, objetivo, g_hat, float(holgura @ holgura),
                      perdida_interna, candidate=h > config.warmup_iterations)
        if config.resilient:
            estado.lam = resilient_dual_step(lam, estimados, config.eta_d, config.gamma)
        else:
            estado.lam = dual_step(lam, estimados, umbrales, config.eta_d)
        if not np.all(np.isfinite(estado.lam)):
            raise TrainingDiverged(h, f"λ no finito: {estado.lam}")

        if h % settings.LOG_EVERY == 0 or h == config.H:
            logger.info("h=%d objetivo=%.5g ĝ=%.5g λ=%s", h, objetivo, g_hat, estado.lam)

    if estado.best is not None:
        h_best, lam_best, g_best = estado.best
        logger.info("Mejor iterado: h=%d, ĝ=%.5g, λ=%s", h_best, g_best, lam_best)
    return net, estado


def train_exact(config: TrainConfig, prob: DualProblem, kl_cap: float = None) -> DualState:
    """Entrenamiento en modo exacto sobre un problema tabular.

    El paso primal es la mezcla cerrada q_mix^{(λ)}; los estimados son los KL
    exactos (acotados en λ_i = 0) y el valor registrado es g(λ) exacto.
    """
    estado = DualState(lam=np.zeros(prob.m))
    logger.info("Entrenamiento en modo exacto: H=%d, m=%d, η_d=%.3g", config.H, prob.m,
                config.eta_d)
    for h in range(1, config.H + 1):
        lam = estado.lam
        valores, siguiente = exact_iteration(prob, lam, config.eta_d, kl_cap)
        if config.resilient:
            siguiente = resilient_dual_step(lam, valores, config.eta_d, config.gamma)
            holgura = valores
        else:
            holgura = valores - prob.b
        estado.record(h, lam, valores, primal_value_exact(prob, lam),
                      dual_function_exact(prob, lam), float(holgura @ holgura))
        estado.lam = siguiente
    return estado


def pretrain(config: TrainConfig, q, rng: np.random.Generator = None,
             sched: NoiseSchedule = None) -> ScoreNet:
    """Entrenamiento de difusión sin restricciones (m = 0)."""
    net, _ = train(replace(config, gamma=0.0), q, [], rng=rng, sched=sched)
    return net
