"""Schedule de varianzas del proceso de difusión y muestreo del proceso forward.

Todos los vectores del ``NoiseSchedule`` se indexan directamente por el paso
``t`` (longitud T+1). La posición 0 guarda la convención t = 0: α_0 = ᾱ_0 = 1 y
varianzas/pesos nulos, de modo que ``sched.alpha_bar[t]`` funciona tanto con
enteros como con arreglos de pasos.

Uso:
    sched = build_schedule(1000)
    x_t = forward_marginal_sample(sched, x0, t, ruido)
    t = time_sampler(sched, "uniform", rng)
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from config import settings
from src.errors import ConfigError

logger = logging.getLogger(__name__)

TIME_MODES = ("uniform", "elbo_weighted")
SCHEDULE_KINDS = ("convergent", "linear")

# Extremos del schedule lineal de depuración (β_t lineal en t)
_LINEAR_BETA_START = 1e-4
_LINEAR_BETA_END = 0.02


class InvalidSchedule(ConfigError):
    """Parámetros del schedule fuera de rango (T < 2, c0/c1 <= 0, α_t ∉ (0,1))."""


class DimensionMismatch(ValueError):
    """Las dimensiones de x0 y del ruido no coinciden."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Constantes por paso de la difusión para un horizonte T.

    ``v`` es la constante de desajuste de varianzas por unidad de dimensión
    (nats); quien la usa la multiplica por d.
    """
    T: int
    c0: float
    c1: float
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_q2: np.ndarray
    sigma_p2: np.ndarray
    omega: np.ndarray
    omega_bar: float
    v: float
    kind: str = "convergent"

    @property
    def steps(self) -> np.ndarray:
        """Pasos 1..T."""
        return np.arange(1, self.T + 1)

    def time_pmf(self, mode: str = "uniform") -> np.ndarray:
        """pmf sobre t = 2..T (longitud T-1, en ese orden)."""
        if mode == "uniform":
            return np.full(self.T - 1, 1.0 / (self.T - 1))
        if mode == "elbo_weighted":
            return self.omega[2:] / self.omega_bar
        raise ValueError(f"Modo de muestreo temporal desconocido: {mode!r}")

    def to_frame(self) -> pd.DataFrame:
        """Tabla por paso para el volcado CSV (``schedule dump``)."""
        t = self.steps
        return pd.DataFrame({
            "t": t,
            "alpha": self.alpha[t],
            "alpha_bar": self.alpha_bar[t],
            "sigma_q2": self.sigma_q2[t],
            "sigma_p2": self.sigma_p2[t],
            "omega": self.omega[t],
        })


def _convergent_alphas(T: int, c0: float, c1: float) -> np.ndarray:
    """α_1 = 1 - 1/T^{c0}; α_t = 1 - c_T·min((1-α_1)(1+c_T)^t, 1), c_T = c1·log(T)/T."""
    alpha_1 = 1.0 - 1.0 / T ** c0
    c_T = c1 * math.log(T) / T
    t = np.arange(2, T + 1, dtype=float)
    # (1+c_T)^t puede desbordar para T grande; el min(·, 1) lo acota igual
    with np.errstate(over="ignore"):
        rampa = (1.0 - alpha_1) * np.power(1.0 + c_T, t)
    resto = 1.0 - c_T * np.minimum(rampa, 1.0)
    return np.concatenate([[alpha_1], resto])


def _linear_alphas(T: int) -> np.ndarray:
    return 1.0 - np.linspace(_LINEAR_BETA_START, _LINEAR_BETA_END, T)


def _default_c1(T: int) -> float:
    """c1 por defecto, acotado para que c_T = c1·log(T)/T quede en 1/2 si T es chico."""
    c1 = settings.DEFAULT_C1
    if c1 * math.log(T) / T >= 1.0:
        acotado = T / (2.0 * math.log(T))
        logger.warning(
            "c1=%.6g da c_T >= 1 con T=%d; se usa c1=%.6g (c_T = 0.5)", c1, T, acotado
        )
        return acotado
    return c1


def build_schedule(T: int = None, c0: float = None, c1: float = None,
                   kind: str = "convergent") -> NoiseSchedule:
    """Construye el schedule y todas sus constantes derivadas.

    Sin ``c1`` explícito se usa ``settings.DEFAULT_C1``, acotado para T chicos
    donde la rampa dejaría α_t <= 0. Un ``c1`` explícito nunca se corrige.

    Raises
    ------
    InvalidSchedule
        Si T < 2, c0/c1 no son positivos o algún α_t cae fuera de (0, 1).
    """
    T = settings.DEFAULT_T if T is None else T
    if isinstance(T, bool) or int(T) != T or T < 2:
        raise InvalidSchedule(f"schedule.T debe ser un entero >= 2, se recibió: {T}")
    T = int(T)
    c0 = settings.DEFAULT_C0 if c0 is None else float(c0)
    c1 = _default_c1(T) if c1 is None else float(c1)
    if not (c0 > 0 and c1 > 0):
        raise InvalidSchedule(f"schedule.c0 y schedule.c1 deben ser positivos (c0={c0}, c1={c1})")
    if kind not in SCHEDULE_KINDS:
        raise InvalidSchedule(f"schedule.kind desconocido: {kind!r}")

    alphas = _convergent_alphas(T, c0, c1) if kind == "convergent" else _linear_alphas(T)
    fuera = np.flatnonzero(~((alphas > 0.0) & (alphas < 1.0)))
    if fuera.size:
        t_malo = int(fuera[0]) + 1
        raise InvalidSchedule(
            f"α_{t_malo} = {alphas[fuera[0]]!r} fuera de (0, 1) "
            f"(T={T}, c0={c0}, c1={c1}); reducir c1 o aumentar T"
        )

    alpha = np.concatenate([[1.0], alphas])
    alpha_bar = np.cumprod(alpha)
    sigma_p2 = np.zeros(T + 1)
    sigma_p2[1:] = 1.0 / alpha[1:] - 1.0

    # Varianza posterior q(x_{t-1} | x_t, x_0); en t = 1 es nula porque ᾱ_0 = 1
    sigma_q2 = np.zeros(T + 1)
    sigma_q2[1:] = (1.0 - alpha[1:]) * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])

    omega = np.zeros(T + 1)
    omega[2:] = (1.0 - alpha[2:]) ** 2 / (2.0 * sigma_q2[2:] * alpha[2:])
    omega_bar = float(omega[2:].sum())

    razon = sigma_q2[2:] / sigma_p2[2:]
    v = float(np.sum(0.5 * (-np.log(razon) - 1.0 + razon)))

    sched = NoiseSchedule(
        T=T, c0=c0, c1=c1,
        alpha=alpha, alpha_bar=alpha_bar,
        sigma_q2=sigma_q2, sigma_p2=sigma_p2,
        omega=omega, omega_bar=omega_bar, v=v, kind=kind,
    )
    for arr in (alpha, alpha_bar, sigma_q2, sigma_p2, omega):
        arr.setflags(write=False)

    logger.debug(
        "Schedule %s: T=%d, ᾱ_1=%.6g, ᾱ_T=%.3g, ω̄=%.6g, v=%.6g",
        kind, T, alpha_bar[1], alpha_bar[T], omega_bar, v,
    )
    return sched


def forward_marginal_sample(sched: NoiseSchedule, x0, t, noise) -> np.ndarray:
    """x_t = √ᾱ_t · x0 + √(1-ᾱ_t) · ruido.

    Acepta un punto (``x0`` de forma (d,), ``t`` entero) o un lote (``x0`` de
    forma (n, d) y ``t`` entero o arreglo de n pasos).
    """
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x0.shape != noise.shape:
        raise DimensionMismatch(
            f"x0 tiene forma {x0.shape} pero el ruido tiene forma {noise.shape}"
        )
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"t fuera de [1, {sched.T}]")
    ab = sched.alpha_bar[t]
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def time_sampler(sched: NoiseSchedule, mode: str, rng: np.random.Generator, size=None):
    """Sortea pasos en {2..T}: uniforme o con probabilidad ω_t/ω̄.

    Con ``size=None`` retorna un entero; si no, un arreglo de enteros.
    """
    if mode == "uniform":
        return rng.integers(2, sched.T + 1, size=size)
    pmf = sched.time_pmf(mode)
    return rng.choice(np.arange(2, sched.T + 1), size=size, p=pmf)

