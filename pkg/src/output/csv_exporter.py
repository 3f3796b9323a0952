"""Escritura de CSVs de resultados y del directorio de salida de una corrida.

Todos los reales se escriben con 17 dígitos significativos, lo que permite
comparar corridas byte a byte.
"""

import logging
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from config import settings

logger = logging.getLogger(__name__)


def exportar_csv(df: pd.DataFrame, output_path) -> Path:
    """Escribe ``df`` con cabecera y sin índice.

    Parameters
    ----------
    df : pd.DataFrame
    output_path : Path | str

    Returns
    -------
    Path
        Ruta del archivo escrito.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(output_path, index=False, float_format=settings.CSV_FLOAT_FORMAT,
              lineterminator="\n")
    logger.info("CSV exportado a %s (%d filas)", output_path, len(df))
    return output_path


def muestras_a_frame(samples) -> pd.DataFrame:
    """Arreglo (n, d) → DataFrame con columnas x1..xd. Átomos tabulares → columna ``atom``."""
    if isinstance(samples, list) and samples and not isinstance(samples[0], np.ndarray):
        return pd.DataFrame({"atom": [str(a) for a in samples]})
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return pd.DataFrame(x, columns=[f"x{j + 1}" for j in range(x.shape[1])])


def exportar_muestras(samples, output_path) -> Path:
    return exportar_csv(muestras_a_frame(samples), output_path)


def leer_muestras(path) -> np.ndarray:
    """Lee un CSV de muestras con columnas x1..xd."""
    path = Path(path)
    # el parser rápido por defecto puede perder el último ulp
    df = pd.read_csv(path, float_precision="round_trip")
    columnas = [c for c in df.columns if c.startswith("x") and c[1:].isdigit()]
    if not columnas:
        raise ValueError(f"{path} no tiene columnas x1..xd")
    columnas.sort(key=lambda c: int(c[1:]))
    return df[columnas].to_numpy(dtype=float)


@contextmanager
def directorio_atomico(destino):
    """Entrega un directorio temporal hermano de ``destino`` y lo renombra al salir.

    Si el bloque falla, el temporal se borra y ``destino`` queda intacto.
    """
    destino = Path(destino)
    destino.parent.mkdir(parents=True, exist_ok=True)
    temporal = Path(tempfile.mkdtemp(prefix=f".{destino.name}.", dir=destino.parent))
    try:
        yield temporal
    except BaseException:
        shutil.rmtree(temporal, ignore_errors=True)
        raise
    if destino.exists():
        shutil.rmtree(destino)
    temporal.replace(destino)
    logger.info("Resultados publicados en %s", destino)
