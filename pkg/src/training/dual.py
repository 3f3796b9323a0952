"""Actualizaciones del dual y transformación de umbrales.

Es el único lugar donde se actualiza λ: el entrenamiento neuronal y el ascenso
exacto del oráculo tabular llaman a estas mismas funciones.
"""

import numpy as np


def dual_step(lam, estimates, thresholds, eta_d: float) -> np.ndarray:
    """λ⁺_i = max(0, λ_i + η_d·(estimado_i - b_i))."""
    lam = np.asarray(lam, dtype=float)
    slack = np.asarray(estimates, dtype=float) - np.asarray(thresholds, dtype=float)
    return np.maximum(0.0, lam + eta_d * slack)


def resilient_dual_step(lam, estimates, eta_d: float, gamma: float) -> np.ndarray:
    """λ⁺_i = max(0, λ_i + η_d·(estimado_i - 2γλ_i)), con umbrales nulos."""
    lam = np.asarray(lam, dtype=float)
    slack = np.asarray(estimates, dtype=float) - 2.0 * gamma * lam
    return np.maximum(0.0, lam + eta_d * slack)


def threshold_transform(b_bar: float, v: float, omega_bar: float, d: int) -> float:
    """b̃ = (b̄ - d·v)/ω̄, con ``v`` por unidad de dimensión."""
    if omega_bar <= 0:
        raise ValueError(f"omega_bar debe ser positivo, se recibió: {omega_bar}")
    return (b_bar - d * v) / omega_bar


def inverse_threshold_transform(b_tilde: float, v: float, omega_bar: float, d: int) -> float:
    """b̄ = ω̄·b̃ + d·v."""
    return omega_bar * b_tilde + d * v
