"""Distribuciones sintéticas con densidad, score difundido, entropía y mezclas analíticas.

Tres tipos:
  - GaussianMixture: mezcla de gaussianas isotrópicas en R^d.
  - TabularDist: soporte finito de átomos (etiquetas o tuplas).
  - MixtureSpec: (q + Σ λ_i q^i)/(1 + Σλ) sobre cualquiera de los anteriores.

Todas son inmutables; el muestreo recibe explícitamente un ``np.random.Generator``.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from config import settings

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_PMF_TOL = 1e-12


class OverlappingComponents(ValueError):
    """Componentes demasiado cercanas para la fórmula de entropía con soportes disjuntos."""


class InfiniteKL(ValueError):
    """Algún log-cociente muestreado es +∞ (p_to sin soporte donde p_from muestrea)."""


# ── Tipos ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GaussianMixture:
    """Mezcla de componentes N(μ_k, σ_k² I)."""
    dim: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    component_labels: tuple | None = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(len(weights), -1)
        variances = np.asarray(self.variances, dtype=float).reshape(-1)

        if means.shape[1] != self.dim:
            raise ValueError(f"Las medias tienen dimensión {means.shape[1]}, se esperaba {self.dim}")
        if len(variances) != len(weights):
            raise ValueError("weights y variances deben tener el mismo largo")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > _PMF_TOL:
            raise ValueError(f"weights debe ser un vector de probabilidad: {weights}")
        if np.any(variances <= 0):
            raise ValueError(f"Todas las varianzas deben ser positivas: {variances}")

        labels = self.component_labels
        if labels is not None:
            labels = tuple(str(lbl) for lbl in labels)
            if len(labels) != len(weights):
                raise ValueError("component_labels debe tener una etiqueta por componente")

        for arr in (weights, means, variances):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "component_labels", labels)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def labels(self) -> tuple:
        """Etiquetas de componente; por defecto el índice como texto."""
        if self.component_labels is not None:
            return self.component_labels
        return tuple(str(k) for k in range(self.n_components))

    def component_log_densities(self, x) -> np.ndarray:
        """log w_k + log N(x; μ_k, σ_k² I), forma (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sq = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return (
            log_w[None, :]
            - 0.5 * self.dim * (_LOG_2PI + np.log(self.variances))[None, :]
            - 0.5 * sq / self.variances[None, :]
        )

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        valores = logsumexp(self.component_log_densities(x), axis=1)
        return float(valores[0]) if x.ndim == 1 else valores

    def diffused(self, alpha_bar: float) -> "GaussianMixture":
        """Marginal forward q_t: componente k → N(√ᾱ μ_k, (ᾱ σ_k² + 1 - ᾱ) I)."""
        return GaussianMixture(
            dim=self.dim,
            weights=self.weights,
            means=np.sqrt(alpha_bar) * self.means,
            variances=alpha_bar * self.variances + 1.0 - alpha_bar,
            component_labels=self.component_labels,
        )

    def sample(self, n: int, rng: np.random.Generator, return_components: bool = False):
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        ruido = rng.standard_normal((n, self.dim))
        x = self.means[comps] + np.sqrt(self.variances[comps])[:, None] * ruido
        if return_components:
            return x, comps
        return x


@dataclass(frozen=True)
class TabularDist:
    """Distribución de soporte finito. Los átomos vectoriales se guardan como tuplas."""
    support: tuple
    pmf: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        support = tuple(
            tuple(a) if isinstance(a, (list, np.ndarray)) else a for a in self.support
        )
        pmf = np.asarray(self.pmf, dtype=float).reshape(-1)
        if len(pmf) != len(support):
            raise ValueError("support y pmf deben tener el mismo largo")
        if len(set(support)) != len(support):
            raise ValueError("Los átomos del soporte deben ser distintos")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > _PMF_TOL:
            raise ValueError(f"pmf debe ser un vector de probabilidad: {pmf}")
        pmf.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(support)})

    def prob(self, atom) -> float:
        atom = tuple(atom) if isinstance(atom, (list, np.ndarray)) else atom
        i = self._index.get(atom)
        return 0.0 if i is None else float(self.pmf[i])

    def log_density(self, x):
        """log-pmf; -∞ fuera del soporte. Acepta un átomo o una lista de átomos."""
        if isinstance(x, list):
            return np.array([self._log_prob(a) for a in x])
        return self._log_prob(x)

    def _log_prob(self, atom) -> float:
        p = self.prob(atom)
        return float(np.log(p)) if p > 0 else -np.inf

    def sample(self, n: int, rng: np.random.Generator) -> list:
        idx = rng.choice(len(self.support), size=n, p=self.pmf)
        return [self.support[i] for i in idx]

    def entropy(self) -> float:
        return float(-xlogy(self.pmf, self.pmf).sum())


@dataclass(frozen=True)
class MixtureSpec:
    """q_mix^{(λ)} = (q + Σ λ_i q^i)/(1 + Σλ)."""
    base: object
    constraints: tuple
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        constraints = tuple(self.constraints)
        if len(lam) != len(constraints):
            raise ValueError(f"λ tiene {len(lam)} entradas para {len(constraints)} restricciones")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError(f"λ debe ser finito y no negativo: {lam}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "constraints", constraints)

    @property
    def sources(self) -> tuple:
        return (self.base,) + self.constraints

    @property
    def weights(self) -> np.ndarray:
        """(1, λ_1, …, λ_m)/(1 + Σλ)."""
        crudos = np.concatenate([[1.0], self.lam])
        return crudos / crudos.sum()

    def flatten(self):
        """Distribución equivalente de un solo nivel (GaussianMixture o TabularDist)."""
        if isinstance(self.base, TabularDist):
            masa: dict = {}
            for w, dist in zip(self.weights, self.sources):
                for atom, p in zip(dist.support, dist.pmf):
                    masa[atom] = masa.get(atom, 0.0) + w * p
            atoms = list(masa)
            pmf = np.array([masa[a] for a in atoms])
            return TabularDist(support=tuple(atoms), pmf=pmf / pmf.sum())

        weights, means, variances, labels = [], [], [], []
        for w, dist in zip(self.weights, self.sources):
            weights.append(w * dist.weights)
            means.append(dist.means)
            variances.append(dist.variances)
            labels.extend(dist.labels)
        weights = np.concatenate(weights)
        return GaussianMixture(
            dim=self.base.dim,
            weights=weights / weights.sum(),
            means=np.vstack(means),
            variances=np.concatenate(variances),
            component_labels=tuple(labels),
        )

    def log_density(self, x):
        logs = np.array([np.asarray(dist.log_density(x), dtype=float) for dist in self.sources])
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
            valores = logsumexp(log_w.reshape((-1,) + (1,) * (logs.ndim - 1)) + logs, axis=0)
        return float(valores) if np.ndim(valores) == 0 else valores

    def sample(self, n: int, rng: np.random.Generator):
        fuente = rng.choice(len(self.sources), size=n, p=self.weights)
        tabular = isinstance(self.base, TabularDist)
        salida = [None] * n if tabular else np.empty((n, self.base.dim))
        for s, dist in enumerate(self.sources):
            posiciones = np.flatnonzero(fuente == s)
            if posiciones.size == 0:
                continue
            puntos = dist.sample(posiciones.size, rng)
            if tabular:
                for pos, atom in zip(posiciones, puntos):
                    salida[pos] = atom
            else:
                salida[posiciones] = puntos
        return salida


# ── Operaciones ───────────────────────────────────────────────────────────────

def sample(dist, n: int, rng: np.random.Generator):
    """n muestras i.i.d. de cualquier distribución del módulo."""
    if n < 1:
        raise ValueError(f"n debe ser >= 1, se recibió: {n}")
    return dist.sample(n, rng)


def log_density(dist, x):
    """log-densidad exacta (nats); -∞ para átomos fuera del soporte."""
    return dist.log_density(x)


def diffused_score(dist, sched, t, x) -> np.ndarray:
    """∇ log q_t(x) de la mezcla difundida hasta el paso t.

    ``x`` puede ser un punto (d,) o un lote (n, d); ``t`` un entero o un arreglo
    de n pasos.
    """
    if isinstance(dist, MixtureSpec):
        dist = dist.flatten()
    x = np.asarray(x, dtype=float)
    un_punto = x.ndim == 1
    x = np.atleast_2d(x)
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"t fuera de [1, {sched.T}]")

    ab = sched.alpha_bar[t][:, None]                                    # (n, 1)
    medias = np.sqrt(ab)[:, :, None] * dist.means[None, :, :]           # (n, K, d)
    var = ab * dist.variances[None, :] + 1.0 - ab                       # (n, K)
    dif = x[:, None, :] - medias
    with np.errstate(divide="ignore"):
        log_w = np.log(dist.weights)
    log_comp = (
        log_w[None, :]
        - 0.5 * dist.dim * np.log(var)
        - 0.5 * (dif ** 2).sum(axis=-1) / var
    )
    resp = softmax(log_comp, axis=1)
    score = -(resp[:, :, None] * dif / var[:, :, None]).sum(axis=1)
    return score[0] if un_punto else score


def entropy(dist) -> float:
    """Entropía (nats): Shannon para tabulares; fórmula de soportes disjuntos para GMM.

    Raises
    ------
    OverlappingComponents
        Si alguna distancia entre medias es < SEPARATION_FACTOR · σ máx.
    """
    if isinstance(dist, TabularDist):
        return dist.entropy()
    if isinstance(dist, MixtureSpec):
        dist = dist.flatten()

    sigma_max = float(np.sqrt(dist.variances.max()))
    minimo = settings.SEPARATION_FACTOR * sigma_max
    for i, j in combinations(range(dist.n_components), 2):
        distancia = float(np.linalg.norm(dist.means[i] - dist.means[j]))
        if distancia < minimo:
            raise OverlappingComponents(
                f"Componentes {i} y {j} a distancia {distancia:.4g} < {minimo:.4g} "
                f"({settings.SEPARATION_FACTOR:g}·σ máx)"
            )
    w = dist.weights
    por_componente = 0.5 * dist.dim * np.log(2.0 * np.pi * np.e * dist.variances)
    return float(np.sum(w * por_componente) - xlogy(w, w).sum())


def gaussian_kl(mu_a, var_a: float, mu_b, var_b: float, d: int) -> float:
    """KL(N(μ_a, σ_a² I) ‖ N(μ_b, σ_b² I)) en forma cerrada estándar."""
    delta = np.asarray(mu_a, dtype=float) - np.asarray(mu_b, dtype=float)
    return 0.5 * (
        d * np.log(var_b / var_a) - d + d * var_a / var_b + float(delta @ delta) / var_b
    )


def kl_monte_carlo(p_from, p_to, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Media y error estándar de log p_from(x) - log p_to(x), x ~ p_from."""
    x = p_from.sample(n, rng)
    log_a = np.asarray(p_from.log_density(x), dtype=float)
    log_b = np.asarray(p_to.log_density(x), dtype=float)
    razones = log_a - log_b
    if np.any(np.isposinf(razones)):
        raise InfiniteKL(
            f"{int(np.isposinf(razones).sum())} muestras fuera del soporte de p_to"
        )
    estimado = float(razones.mean())
    error = float(razones.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return estimado, error


def tv_binned(samples_a, samples_b, bins: int = None) -> float:
    """½ Σ |f_a - f_b| sobre un histograma de bins iguales y rango común."""
    bins = settings.TV_BINS if bins is None else bins
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("Ambos conjuntos de muestras deben ser no vacíos")
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)

    juntos = np.vstack([a, b])
    bajo, alto = juntos.min(axis=0), juntos.max(axis=0)
    plano = alto <= bajo
    bajo = np.where(plano, bajo - 0.5, bajo)
    alto = np.where(plano, alto + 0.5, alto)
    bordes = [np.linspace(lo, hi, bins + 1) for lo, hi in zip(bajo, alto)]

    f_a, _ = np.histogramdd(a, bins=bordes)
    f_b, _ = np.histogramdd(b, bins=bordes)
    return float(0.5 * np.abs(f_a / len(a) - f_b / len(b)).sum())
