"""Configuración centralizada: lee variables desde .env."""

import os
from pathlib import Path

from dotenv import load_dotenv

# Raíz del proyecto: dos niveles arriba de este archivo (config/settings.py)
PROJECT_ROOT = Path(__file__).resolve().parent.parent

# Cargar .env desde la raíz del proyecto
load_dotenv(PROJECT_ROOT / ".env")

# ── Rutas ──────────────────────────────────────────────────
OUTPUT_PATH = Path(os.getenv("OUTPUT_PATH", "./data/output"))
CONFIGS_PATH = Path(os.getenv("CONFIGS_PATH", "./configs"))

# Resolver rutas relativas respecto a la raíz del proyecto
if not OUTPUT_PATH.is_absolute():
    OUTPUT_PATH = PROJECT_ROOT / OUTPUT_PATH
if not CONFIGS_PATH.is_absolute():
    CONFIGS_PATH = PROJECT_ROOT / CONFIGS_PATH

# ── Schedule de difusión ──────────────────────────────────
DEFAULT_T = int(os.getenv("DEFAULT_T", "1000"))
DEFAULT_C0 = float(os.getenv("DEFAULT_C0", "2.0"))
# c1 = 8 deja ᾱ_T < 1e-8 para T >= 100 con la fórmula del régimen convergente
DEFAULT_C1 = float(os.getenv("DEFAULT_C1", "8.0"))

# ── Distribuciones y métricas ─────────────────────────────
TV_BINS = int(os.getenv("TV_BINS", "50"))
# Separación mínima entre medias (en unidades de σ máx) para la entropía exacta
SEPARATION_FACTOR = float(os.getenv("SEPARATION_FACTOR", "6.0"))

# ── Oráculo tabular ───────────────────────────────────────
DIVERGENCE_THRESHOLD = float(os.getenv("DIVERGENCE_THRESHOLD", "1000"))
KL_CAP = float(os.getenv("KL_CAP", "10.0"))  # nats, tope del KL infinito en λ_i = 0
ENUMERATION_BUDGET = int(os.getenv("ENUMERATION_BUDGET", "1000000"))

# ── Muestreo ──────────────────────────────────────────────
SAMPLER_CHUNK_SIZE = int(os.getenv("SAMPLER_CHUNK_SIZE", "1024"))

# ── Salidas ───────────────────────────────────────────────
CSV_FLOAT_FORMAT = os.getenv("CSV_FLOAT_FORMAT", "%.17g")
CHECKPOINT_NAME = os.getenv("CHECKPOINT_NAME", "modelo.ckpt")

# ── Logging ────────────────────────────────────────────────
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_EVERY = int(os.getenv("LOG_EVERY", "100"))
