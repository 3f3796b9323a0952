"""Genera el ``summary.json`` de una corrida."""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SUMMARY_VERSION = "1.0"


def exportar_resumen(resumen: dict, output_path) -> dict:
    """Escribe el resumen con metadatos de versión y fecha de generación.

    Parameters
    ----------
    resumen : dict
        Contenido propio de la corrida (escenario, semilla, λ, métricas...).
    output_path : Path | str

    Returns
    -------
    dict
        Estructura del JSON generado.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    estructura = {
        "metadata": {
            "version": SUMMARY_VERSION,
            "generado": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        },
        **{k: _a_json(v) for k, v in resumen.items()},
    }
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(estructura, f, ensure_ascii=False, indent=2, default=str)

    logger.info("Resumen exportado a %s", output_path)
    return estructura


def _a_json(valor):
    """numpy → tipos nativos; recursivo sobre dicts y listas."""
    if isinstance(valor, dict):
        return {str(k): _a_json(v) for k, v in valor.items()}
    if isinstance(valor, (list, tuple)):
        return [_a_json(v) for v in valor]
    if isinstance(valor, np.ndarray):
        return _a_json(valor.tolist())
    if isinstance(valor, np.generic):
        return _a_json(valor.item())
    if isinstance(valor, float) and not np.isfinite(valor):
        return str(valor)
    return valor
