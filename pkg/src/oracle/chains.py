"""
Cadenas de Markov tabulares y verificación exhaustiva de las identidades del ELBO.

Una cadena ``TabularChain`` es genérica: y_0 → y_1 → ... → y_T con pmf inicial y
T kernels estocásticos por filas. Se usa en dos sentidos:
  - q (forward):  y_t = x_t,      q(x_0) Π q(x_t | x_{t-1})
  - p (backward): y_k = x_{T-k},  p(x_T) Π p(x_{t-1} | x_t)

Con ambas articulaciones enumeradas sobre las K^{T+1} trayectorias se calculan
ELBO, KL conjunto, log-verosimilitud y KL del posterior, y los dos residuos
  residual_1 = loglik - elbo - posterior_kl
  residual_2 = kl_joint + elbo - E_q[log q(x_0)]
que deben anularse a precisión de máquina.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from config import settings
from src.errors import ConfigError

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-12


class EnumerationBudgetExceeded(ConfigError):
    """K^{T+1} supera el presupuesto de enumeración exacta."""


@dataclass(frozen=True)
class TabularChain:
    T: int
    state_count: int
    initial: np.ndarray
    kernels: tuple = field(repr=False)

    def __post_init__(self):
        errores = []
        initial = np.asarray(self.initial, dtype=float)
        kernels = tuple(np.asarray(k, dtype=float) for k in self.kernels)
        K = self.state_count

        if self.T < 1:
            errores.append(f"T debe ser >= 1, se recibió: {self.T}")
        if initial.shape != (K,):
            errores.append(f"initial debe tener forma ({K},), tiene {initial.shape}")
        elif np.any(initial < 0) or abs(initial.sum() - 1.0) > ROW_TOLERANCE:
            errores.append("initial no es una pmf válida")
        if len(kernels) != self.T:
            errores.append(f"Se esperaban {self.T} kernels, llegaron {len(kernels)}")
        for i, M in enumerate(kernels):
            if M.shape != (K, K):
                errores.append(f"kernels[{i}] debe ser {K}x{K}, es {M.shape}")
            elif np.any(M < 0) or np.max(np.abs(M.sum(axis=1) - 1.0)) > ROW_TOLERANCE:
                errores.append(f"kernels[{i}] no es estocástico por filas")
        if errores:
            raise ConfigError(errores)

        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "kernels", kernels)

    @classmethod
    def random(cls, T: int, state_count: int, rng: np.random.Generator) -> "TabularChain":
        """Cadena con pmf y filas Dirichlet(1), todas estrictamente positivas."""
        initial = rng.dirichlet(np.ones(state_count))
        kernels = [rng.dirichlet(np.ones(state_count), size=state_count) for _ in range(T)]
        return cls(T=T, state_count=state_count, initial=initial, kernels=kernels)


@dataclass
class ChainJointReport:
    elbo: float
    kl_joint: float
    loglik: float
    posterior_kl: float
    entropy_term: float     # E_q[log q(x_0)]
    residual_1: float
    residual_2: float

    def as_dict(self) -> dict:
        return asdict(self)


# ── Enumeración ───────────────────────────────────────────────────────────────

def _on_axes(vector_or_matrix: np.ndarray, axes: tuple, ndim: int) -> np.ndarray:
    """Ubica un arreglo de 1 o 2 ejes en ``axes`` de un tensor de ``ndim`` ejes."""
    forma = [1] * ndim
    for eje, tam in zip(axes, vector_or_matrix.shape):
        forma[eje] = tam
    return vector_or_matrix.reshape(forma)


def _log_joint(chain: TabularChain, order: list) -> np.ndarray:
    """log de la conjunta sobre (x_0, ..., x_T); ``order[k]`` es el eje de y_k."""
    n = chain.T + 1
    with np.errstate(divide="ignore"):
        logp = _on_axes(np.log(chain.initial), (order[0],), n)
        for k, M in enumerate(chain.kernels):
            origen, destino = order[k], order[k + 1]
            logM = np.log(M)
            if origen < destino:
                logp = logp + _on_axes(logM, (origen, destino), n)
            else:
                logp = logp + _on_axes(logM.T, (destino, origen), n)
    return logp


def _expectation(weights: np.ndarray, values: np.ndarray) -> float:
    """Σ w·f con la convención 0·(±∞) = 0."""
    with np.errstate(invalid="ignore"):
        terminos = np.where(weights > 0, weights * values, 0.0)
    return float(terminos.sum())


def chain_joint_ops(chain_q: TabularChain, chain_p: TabularChain) -> ChainJointReport:
    """ELBO, KL conjunto, log-verosimilitud y KL del posterior por enumeración.

    Parameters
    ----------
    chain_q : TabularChain
        Proceso forward, leído como x_0 → x_T.
    chain_p : TabularChain
        Proceso backward, leído como x_T → x_0.

    Returns
    -------
    ChainJointReport
        Las cuatro cantidades más ambos residuos de las identidades.
    """
    if (chain_q.T, chain_q.state_count) != (chain_p.T, chain_p.state_count):
        raise ConfigError(
            f"Cadenas incompatibles: q tiene (T={chain_q.T}, K={chain_q.state_count}), "
            f"p tiene (T={chain_p.T}, K={chain_p.state_count})"
        )
    T, K = chain_q.T, chain_q.state_count
    if K ** (T + 1) > settings.ENUMERATION_BUDGET:
        raise EnumerationBudgetExceeded(
            f"K^(T+1) = {K}^{T + 1} supera el presupuesto de {settings.ENUMERATION_BUDGET}"
        )

    ejes_previos = tuple(range(1, T + 1))
    log_q = _log_joint(chain_q, list(range(T + 1)))
    log_p = _log_joint(chain_p, list(range(T, -1, -1)))
    q_conj = np.exp(log_q)

    log_q0 = _on_axes(np.log(np.where(chain_q.initial > 0, chain_q.initial, 1.0)), (0,), T + 1)
    with np.errstate(divide="ignore"):
        log_p0 = logsumexp(log_p, axis=ejes_previos, keepdims=True)

    # log q(x_{1:T} | x_0) y log p(x_{1:T} | x_0)
    log_q_cond = log_q - log_q0
    log_p_cond = log_p - log_p0

    elbo = _expectation(q_conj, log_p - log_q_cond)
    kl_joint = _expectation(q_conj, log_q - log_p)
    q0 = chain_q.initial
    loglik = _expectation(q0, log_p0.reshape(K))
    posterior_kl = _expectation(q_conj, log_q_cond - log_p_cond)
    termino_q0 = _expectation(q0, log_q0.reshape(K))

    reporte = ChainJointReport(
        elbo=elbo,
        kl_joint=kl_joint,
        loglik=loglik,
        posterior_kl=posterior_kl,
        entropy_term=termino_q0,
        residual_1=loglik - elbo - posterior_kl,
        residual_2=kl_joint + elbo - termino_q0,
    )
    logger.debug("Enumeración K=%d, T=%d: %s", K, T, reporte)
    return reporte
