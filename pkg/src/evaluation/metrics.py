"""
Métricas post-hoc sobre muestras generadas: clasificación por responsabilidad,
frecuencias por clase contra una referencia y contraste con la mezcla objetivo
q_mix^{(λ)}.

Para referencias tabulares la clasificación es la búsqueda exacta del átomo; la
etiqueta es ``str(átomo)``.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.diffusion.distributions import GaussianMixture, MixtureSpec, TabularDist

logger = logging.getLogger(__name__)

# Etiqueta para muestras tabulares fuera del soporte de la referencia
FUERA_DE_SOPORTE = "fuera_de_soporte"


@dataclass
class FrequencyReport:
    labels: list
    counts: np.ndarray
    frequencies: np.ndarray
    reference_frequencies: np.ndarray
    max_abs_gap: float

    @property
    def gaps(self) -> np.ndarray:
        return self.frequencies - self.reference_frequencies

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def frequency_of(self, label) -> float:
        return float(self.frequencies[self.labels.index(str(label))])

    def to_frame(self) -> pd.DataFrame:
        """Columnas: label, count, frequency, target, gap."""
        return pd.DataFrame({
            "label": self.labels,
            "count": self.counts,
            "frequency": self.frequencies,
            "target": self.reference_frequencies,
            "gap": self.gaps,
        })


def _flat(reference):
    return reference.flatten() if isinstance(reference, MixtureSpec) else reference


def reference_weights(reference) -> dict:
    """Peso total por etiqueta, en orden de primera aparición."""
    reference = _flat(reference)
    pesos: dict = {}
    if isinstance(reference, TabularDist):
        for atom, p in zip(reference.support, reference.pmf):
            pesos[str(atom)] = pesos.get(str(atom), 0.0) + float(p)
        return pesos
    for etiqueta, w in zip(reference.labels, reference.weights):
        pesos[etiqueta] = pesos.get(etiqueta, 0.0) + float(w)
    return pesos


def classify_by_responsibility(samples, reference) -> list:
    """Etiqueta de la componente con mayor responsabilidad a posteriori.

    Empates → componente de menor índice (``np.argmax`` toma la primera).
    """
    reference = _flat(reference)
    if isinstance(reference, TabularDist):
        return [str(a) if reference.prob(a) > 0 else FUERA_DE_SOPORTE for a in samples]
    if not isinstance(reference, GaussianMixture):
        raise TypeError(f"Referencia no soportada: {type(reference).__name__}")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return []
    idx = np.argmax(reference.component_log_densities(x.reshape(-1, reference.dim)), axis=1)
    etiquetas = reference.labels
    return [etiquetas[k] for k in idx]


def frequency_report(samples, reference, target_frequencies="uniform") -> FrequencyReport:
    """Frecuencias empíricas por etiqueta contra ``target_frequencies``.

    Parameters
    ----------
    samples : array (n, d) o lista de átomos
    reference : GaussianMixture, TabularDist o MixtureSpec
        Define las clases y clasifica las muestras.
    target_frequencies : "uniform", "reference" o dict etiqueta → probabilidad

    Returns
    -------
    FrequencyReport
    """
    etiquetas = list(reference_weights(reference))
    if isinstance(target_frequencies, str):
        if target_frequencies == "uniform":
            objetivo = np.full(len(etiquetas), 1.0 / len(etiquetas))
        elif target_frequencies == "reference":
            objetivo = np.array(list(reference_weights(reference).values()))
        else:
            raise ValueError(f"Objetivo desconocido: {target_frequencies!r}")
    else:
        faltantes = set(map(str, target_frequencies)) - set(etiquetas)
        if faltantes:
            raise ValueError(f"Etiquetas objetivo sin clase en la referencia: {sorted(faltantes)}")
        mapa = {str(k): float(v) for k, v in target_frequencies.items()}
        objetivo = np.array([mapa.get(e, 0.0) for e in etiquetas])
        if np.any(objetivo < 0) or abs(objetivo.sum() - 1.0) > 1e-9:
            raise ValueError(f"target_frequencies no es una pmf: {mapa}")

    clases = classify_by_responsibility(samples, reference)
    if not clases:
        raise ValueError("Se requiere al menos una muestra para el reporte de frecuencias")
    posicion = {e: i for i, e in enumerate(etiquetas)}
    conteos = np.zeros(len(etiquetas), dtype=int)
    for c in clases:
        if c in posicion:
            conteos[posicion[c]] += 1
    fuera = len(clases) - int(conteos.sum())
    if fuera:
        logger.warning("%d muestras fuera del soporte de la referencia", fuera)
        etiquetas.append(FUERA_DE_SOPORTE)
        conteos = np.append(conteos, fuera)
        objetivo = np.append(objetivo, 0.0)

    frecuencias = conteos / len(clases)
    return FrequencyReport(
        labels=etiquetas,
        counts=conteos,
        frequencies=frecuencias,
        reference_frequencies=objetivo,
        max_abs_gap=float(np.max(np.abs(frecuencias - objetivo))),
    )


def mixture_target(lambda_best, q, constraints) -> dict:
    """Pesos por etiqueta de q_mix^{(λ)}: (1, λ)/(1 + Σλ) expandidos por componente."""
    return reference_weights(MixtureSpec(q, tuple(constraints), lambda_best))


def mixture_match_report(samples, lambda_best, q, constraints) -> FrequencyReport:
    """Frecuencias empíricas contra la mezcla q_mix^{(λ_best)}."""
    mezcla = MixtureSpec(q, tuple(constraints), lambda_best)
    return frequency_report(samples, mezcla, mixture_target(lambda_best, q, constraints))
