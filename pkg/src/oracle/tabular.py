"""
Oráculo tabular exacto del problema dual sin parametrizar.

Con soportes disjuntos entre q y las q^i todo es cerrado:
  - factibilidad:  s = Σ e^{h_i - b̄_i} < 1
  - dual óptimo:   λ*_i = r_i/(1 - s),  r_i = e^{h_i - b̄_i}
  - primal óptimo: p*(λ) = q_mix^{(λ)}

Convenciones de umbrales (nats):
  b   → restricción KL(q^i ‖ p) <= b_i
  b̄  → restricción -E_{q^i}[log p] <= b̄_i,   con b̄_i = b_i + h_i

El ascenso exacto usa la misma actualización dual que el entrenamiento neuronal
(``src.training.dual.dual_step``) con los KL exactos como "estimados".
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import settings
from src.diffusion.distributions import MixtureSpec, TabularDist
from src.errors import ConfigError, InfeasibleProblem
from src.training.dual import dual_step

logger = logging.getLogger(__name__)


class Infeasible(InfeasibleProblem):
    """s = Σ e^{h-b̄} >= 1: el dual no es acotado."""


class NonPositiveDual(ValueError):
    """El gradiente cerrado requiere λ_i > 0."""


class DisjointnessViolation(ConfigError):
    """Los soportes de q y de las q^i no son disjuntos."""


# ── Tipos ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DualProblem:
    """q, restricciones q^1..q^m con soportes disjuntos y umbrales en forma b̄."""
    q: TabularDist
    constraints: tuple
    b_bar: np.ndarray
    h: np.ndarray = field(init=False)

    def __post_init__(self):
        constraints = tuple(self.constraints)
        b_bar = np.asarray(self.b_bar, dtype=float).reshape(-1)
        if len(b_bar) != len(constraints):
            raise ConfigError(
                f"b_bar tiene {len(b_bar)} entradas para {len(constraints)} restricciones"
            )
        _check_disjoint((self.q,) + constraints)
        h = np.array([c.entropy() for c in constraints], dtype=float)
        object.__setattr__(self, "constraints", constraints)
        object.__setattr__(self, "b_bar", b_bar)
        object.__setattr__(self, "h", h)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def b(self) -> np.ndarray:
        """Umbrales en forma KL: b_i = b̄_i - h_i."""
        return self.b_bar - self.h

    def mixture(self, lam) -> TabularDist:
        return MixtureSpec(self.q, self.constraints, lam).flatten()


def _check_disjoint(dists) -> None:
    vistos: dict = {}
    choques = []
    for i, dist in enumerate(dists):
        for atom in dist.support:
            if atom in vistos:
                choques.append(f"átomo {atom!r} en distribuciones {vistos[atom]} y {i}")
            else:
                vistos[atom] = i
    if choques:
        raise DisjointnessViolation([f"Soportes no disjuntos: {c}" for c in choques])


@dataclass
class Feasibility:
    feasible: bool
    margin: float


@dataclass
class AscentResult:
    """Trayectoria del ascenso dual exacto y banderas de término."""
    trajectory: np.ndarray            # (iteraciones + 1, m)
    p_star: TabularDist
    iterations: int
    converged: bool
    divergent: bool
    max_iters_exceeded: bool
    dual_values: list = field(default_factory=list)
    constraint_values: list = field(default_factory=list)

    @property
    def lam_final(self) -> np.ndarray:
        return self.trajectory[-1]


# ── Operaciones cerradas ──────────────────────────────────────────────────────

def feasibility_check(h, b_bar) -> Feasibility:
    """Factible si y solo si s = Σ e^{h_i - b̄_i} < 1."""
    s = float(np.sum(np.exp(np.asarray(h, dtype=float) - np.asarray(b_bar, dtype=float))))
    return Feasibility(feasible=s < 1.0, margin=s)


def optimal_dual_closed_form(h, b_bar) -> np.ndarray:
    """λ*_i = r_i/(1 - s), solución única de λ_i/(1 + Σλ) = r_i."""
    r = np.exp(np.asarray(h, dtype=float) - np.asarray(b_bar, dtype=float))
    s = float(r.sum())
    if s >= 1.0:
        raise Infeasible(f"Problema infactible: Σ e^(h-b̄) = {s:.6g} >= 1")
    return r / (1.0 - s)


def tabular_kl(a: TabularDist, b: TabularDist) -> float:
    """KL(a ‖ b) exacto; +∞ si a tiene masa donde b no."""
    total = 0.0
    for atom, p in zip(a.support, a.pmf):
        if p <= 0:
            continue
        pb = b.prob(atom)
        if pb <= 0:
            return float("inf")
        total += p * (np.log(p) - np.log(pb))
    return float(total)


def constraint_kls(prob: DualProblem, lam) -> np.ndarray:
    """KL(q^i ‖ q_mix^{(λ)}) para cada restricción."""
    mezcla = prob.mixture(lam)
    return np.array([tabular_kl(c, mezcla) for c in prob.constraints], dtype=float)


def dual_function_exact(prob: DualProblem, lam) -> float:
    """g(λ) = -Σ λ_i b̄_i + (1 + Σλ)·H(q_mix^{(λ)})."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError(f"λ debe ser no negativo: {lam}")
    mezcla = prob.mixture(lam)
    return float(-lam @ prob.b_bar + (1.0 + lam.sum()) * mezcla.entropy())


def dual_gradient_exact(prob: DualProblem, lam) -> np.ndarray:
    """∂g/∂λ_i = h_i - b̄_i - log(λ_i/(1 + Σλ))."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise NonPositiveDual(f"El gradiente cerrado requiere λ > 0, se recibió: {lam}")
    return prob.h - prob.b_bar - np.log(lam / (1.0 + lam.sum()))


def primal_value_exact(prob: DualProblem, lam) -> float:
    """Objetivo -E_q[log q_mix^{(λ)}] (forma ELBO) en el minimizador cerrado."""
    mezcla = prob.mixture(lam)
    return float(-sum(p * np.log(mezcla.prob(a)) for a, p in zip(prob.q.support, prob.q.pmf) if p > 0))


def kkt_residuals(prob: DualProblem, lam) -> np.ndarray:
    """|KL(q^i ‖ q_mix) - b_i| para restricciones activas (λ_i > 0); 0 en las inactivas."""
    lam = np.asarray(lam, dtype=float)
    residuos = np.abs(constraint_kls(prob, lam) - prob.b)
    return np.where(lam > 0, residuos, 0.0)


def tv_exact(a: TabularDist, b: TabularDist) -> float:
    """½ Σ |p_a - p_b| sobre la unión de soportes."""
    atomos = set(a.support) | set(b.support)
    return float(0.5 * sum(abs(a.prob(x) - b.prob(x)) for x in atomos))


# ── Ascenso dual exacto ───────────────────────────────────────────────────────

def exact_iteration(prob: DualProblem, lam, eta: float, kl_cap: float = None):
    """Un paso del ascenso exacto: (KL acotados en λ, λ siguiente).

    En λ_i = 0 el KL de q^i contra la mezcla es +∞ (soportes disjuntos); se
    acota en ``kl_cap`` para que el primer paso desde λ = 0 sea finito.
    """
    kl_cap = settings.KL_CAP if kl_cap is None else kl_cap
    valores = np.minimum(constraint_kls(prob, lam), kl_cap)
    return valores, dual_step(lam, valores, prob.b, eta)


def exact_dual_ascent(prob: DualProblem, eta: float, max_iters: int, tol: float,
                      lam0=None, divergence_threshold: float = None,
                      kl_cap: float = None) -> AscentResult:
    """Ascenso dual proyectado con el paso primal reemplazado por q_mix^{(λ)}.

    Termina cuando ‖λ_{k+1} - λ_k‖ < tol (convergido), cuando ‖λ‖∞ supera
    ``divergence_threshold`` (divergente) o al agotar ``max_iters`` (se marca y
    se retorna la trayectoria igual).
    """
    umbral = settings.DIVERGENCE_THRESHOLD if divergence_threshold is None else divergence_threshold
    lam = np.zeros(prob.m) if lam0 is None else np.asarray(lam0, dtype=float).copy()

    trayectoria = [lam.copy()]
    duales, restricciones = [], []
    convergido = divergente = False
    k = 0

    if prob.m == 0:
        convergido = True
    while not (convergido or divergente) and k < max_iters:
        valores, siguiente = exact_iteration(prob, lam, eta, kl_cap)
        duales.append(dual_function_exact(prob, lam))
        restricciones.append(valores)
        paso = float(np.linalg.norm(siguiente - lam))
        lam = siguiente
        trayectoria.append(lam.copy())
        k += 1
        if paso < tol:
            convergido = True
        elif np.max(lam) > umbral:
            divergente = True
        if k % settings.LOG_EVERY == 0:
            logger.debug("Ascenso exacto: iter %d, λ=%s, paso=%.3g", k, lam, paso)

    excedido = not (convergido or divergente)
    if excedido:
        logger.warning("Ascenso exacto sin converger tras %d iteraciones (λ=%s)", k, lam)
    elif divergente:
        logger.info("Ascenso exacto divergente en iteración %d: ‖λ‖∞ = %.4g", k, np.max(lam))
    else:
        logger.info("Ascenso exacto convergido en %d iteraciones: λ=%s", k, lam)

    return AscentResult(
        trajectory=np.array(trayectoria).reshape(len(trayectoria), prob.m),
        p_star=prob.mixture(lam),
        iterations=k,
        converged=convergido,
        divergent=divergente,
        max_iters_exceeded=excedido,
        dual_values=duales,
        constraint_values=restricciones,
    )
