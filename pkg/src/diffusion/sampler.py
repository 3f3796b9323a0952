"""Muestreo ancestral del proceso backward a partir de un predictor de ruido.

Cada cadena tiene su propio generador derivado de (semilla, índice de cadena),
así que el resultado no depende de cómo se agrupen las cadenas en bloques.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import settings
from src.diffusion.distributions import diffused_score
from src.diffusion.score_net import from_score, predict_noise, to_score
from src.errors import NumericalDivergence

logger = logging.getLogger(__name__)

CAPTURE_MODES = ("final_only", "full")


class SamplingDiverged(NumericalDivergence):
    """Valores no finitos durante el proceso backward."""


class AnalyticNoisePredictor:
    """Predictor de ruido exacto a partir del score difundido de una mezcla.

    Expone la misma interfaz que ``ScoreNet`` para el muestreo, lo que permite
    aislar el sampler de los errores de entrenamiento.
    """

    def __init__(self, dist, sched):
        self.dist = dist
        self.sched = sched
        self.input_dim = dist.dim

    def predict(self, x, t) -> np.ndarray:
        return from_score(diffused_score(self.dist, self.sched, t, x), t, self.sched)


@dataclass
class SampleRun:
    """Resultado de ``generate``. ``latents`` tiene forma (n, T+1, d) si se capturó."""
    n: int
    seed: int
    trajectory_capture: str
    outputs: np.ndarray
    latents: np.ndarray | None = field(default=None, repr=False)


def _predict(net, x, t, sched) -> np.ndarray:
    if isinstance(net, AnalyticNoisePredictor):
        return net.predict(x, t)
    return predict_noise(net, x, t, sched)


def backward_step(net, sched, x_t, t: int, noise) -> np.ndarray:
    """x_{t-1} = x_t/√α_t + ((1-α_t)/√α_t)·ŝ(x_t, t) + σ_p(t)·ruido."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t fuera de [1, {sched.T}]")
    x_t = np.asarray(x_t, dtype=float)
    score = to_score(_predict(net, x_t, t, sched), t, sched)
    return _posterior_step(sched, x_t, t, score, noise)


def _posterior_step(sched, x_t, t: int, score, noise) -> np.ndarray:
    alpha = sched.alpha[t]
    media = x_t / np.sqrt(alpha) + (1.0 - alpha) / np.sqrt(alpha) * score
    return media + np.sqrt(sched.sigma_p2[t]) * np.asarray(noise, dtype=float)


def chain_generator(seed: int, chain: int) -> np.random.Generator:
    """Generador propio de la cadena ``chain``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain)]))


def generate(net, sched, n: int, seed: int, capture: str = "final_only",
             chunk_size: int = None) -> SampleRun:
    """Ejecuta n cadenas: x_T ~ N(0, I), pasos t = T..2 con ruido, t = 1 sin ruido."""
    if capture not in CAPTURE_MODES:
        raise ValueError(f"Modo de captura desconocido: {capture!r}")
    d = net.input_dim
    T = sched.T
    chunk_size = chunk_size or settings.SAMPLER_CHUNK_SIZE

    salidas = np.empty((n, d))
    latentes = np.empty((n, T + 1, d)) if capture == "full" else None

    for inicio in range(0, n, chunk_size):
        fin = min(inicio + chunk_size, n)
        # ruido[:, 0] es x_T; ruido[:, k] con k = T - t + 1 es el ruido del paso t
        ruido = np.stack([
            chain_generator(seed, c).standard_normal((T, d)) for c in range(inicio, fin)
        ])
        x = ruido[:, 0, :]
        if latentes is not None:
            latentes[inicio:fin, T] = x
        for t in range(T, 1, -1):
            x = backward_step(net, sched, x, t, ruido[:, T - t + 1, :])
            if latentes is not None:
                latentes[inicio:fin, t - 1] = x
        x = backward_step(net, sched, x, 1, np.zeros_like(x))
        if latentes is not None:
            latentes[inicio:fin, 0] = x
        if not np.all(np.isfinite(x)):
            raise SamplingDiverged(f"Valores no finitos en las cadenas {inicio}..{fin - 1}")
        salidas[inicio:fin] = x
        logger.debug("Muestreo: cadenas %d..%d listas", inicio, fin - 1)

    logger.info("Muestreo completado: %d muestras (T=%d, semilla=%d)", n, T, seed)
    return SampleRun(n=n, seed=seed, trajectory_capture=capture, outputs=salidas, latents=latentes)
