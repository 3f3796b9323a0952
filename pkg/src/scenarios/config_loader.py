"""
Lectura y validación de archivos de corrida (TOML).

Estructura:

    scenario = "fairness"        # fairness | finetune | unconstrained | oracle | sensitivity
    seed = 7
    data = "q"                   # distribución objetivo
    output_dir = "data/output/fairness"   # opcional

    [schedule]                   # T, c0, c1, kind
    [distributions.<nombre>]     # kind = "gaussian_mixture" | "tabular"
    [[constraints]]              # label, source, threshold | b_bar | b, batch_size_dual
    [train]                      # H, N, eta_p, eta_d, gamma, batch_primal, ...
    [eval]                       # n_samples, target, baseline, tv_bins
    [finetune]                   # checkpoint | pretrain_data, reference
    [oracle]                     # eta, max_iters, tol, kl_cap, divergence_threshold
    [sweep]                      # batch_sizes = [[primal, dual], ...], N = [...], fixed_budget

Todos los errores se acumulan con su ruta (``constraints[1].source``) y se
lanzan juntos en un único ``ConfigError``.
"""

import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from config import settings
from src.diffusion.distributions import GaussianMixture, TabularDist
from src.diffusion.schedule import SCHEDULE_KINDS
from src.errors import ConfigError
from src.training.trainer import TrainConfig

logger = logging.getLogger(__name__)

SCENARIOS = ("fairness", "finetune", "unconstrained", "oracle", "sensitivity")
DIST_KINDS = ("gaussian_mixture", "tabular")
PRETRAINED_SOURCE = "pretrained"

_TRAIN_KEYS = {
    f.name for f in fields(TrainConfig)
} - {"T", "seed", "c0", "c1", "schedule_kind"}


# ── Bloques ───────────────────────────────────────────────────────────────────

@dataclass
class ConstraintBlock:
    label: str
    source: str
    threshold: float | None = None      # forma b̃
    b_bar: float | None = None
    b: float | None = None              # forma KL (solo oráculo)
    batch_size_dual: int = 256


@dataclass
class ScheduleBlock:
    T: int = settings.DEFAULT_T
    c0: float = settings.DEFAULT_C0
    c1: float | None = None             # None: DEFAULT_C1 acotado según T
    kind: str = "convergent"


@dataclass
class EvalBlock:
    n_samples: int = 10000
    target: object = "uniform"          # "uniform" | "reference" | dict etiqueta → peso
    baseline: bool = True
    tv_bins: int = settings.TV_BINS


@dataclass
class FinetuneBlock:
    checkpoint: Path | None = None
    pretrain_data: str | None = None
    reference: list = field(default_factory=list)


@dataclass
class OracleBlock:
    eta: float = 0.2
    max_iters: int = 10000
    tol: float = 1e-10
    match_tol: float = 1e-6
    kl_cap: float = settings.KL_CAP
    divergence_threshold: float = settings.DIVERGENCE_THRESHOLD


@dataclass
class SweepBlock:
    """Grilla del barrido de sensibilidad: pares (lote primal, lote dual) × N."""
    batch_sizes: list = field(default_factory=lambda: [[64, 16], [64, 64], [128, 16], [128, 64]])
    N: list = field(default_factory=lambda: [2])
    # conserva H·N del bloque [train] al variar N
    fixed_budget: bool = True

    def settings(self) -> list[tuple[int, int, int]]:
        """(batch_primal, batch_size_dual, N) en el orden de la grilla."""
        return [(int(p), int(d), int(n)) for p, d in self.batch_sizes for n in self.N]


@dataclass
class RunConfig:
    scenario: str
    seed: int
    data: str
    distributions: dict
    constraints: list
    train: TrainConfig
    schedule: ScheduleBlock
    eval: EvalBlock
    finetune: FinetuneBlock
    oracle: OracleBlock
    output_dir: Path
    source_path: Path | None = None
    sweep: SweepBlock = field(default_factory=SweepBlock)

    @property
    def q(self):
        return self.distributions[self.data]

    def distribution(self, nombre: str):
        return self.distributions[nombre]


# ── Carga ─────────────────────────────────────────────────────────────────────

def cargar_config(path, seed: int | None = None) -> RunConfig:
    """Lee un TOML de corrida. ``seed`` (si se da) reemplaza la semilla del archivo."""
    path = Path(path)
    if not path.is_absolute() and not path.exists():
        path = settings.CONFIGS_PATH / path
    if not path.exists():
        raise ConfigError(f"No existe el archivo de configuración: {path}")
    try:
        with open(path, "rb") as f:
            crudo = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML inválido ({e})") from e
    if seed is not None:
        crudo["seed"] = seed
    config = parse_config(crudo, base_dir=path.parent)
    config.source_path = path
    logger.info("Configuración cargada: %s (escenario=%s, semilla=%d)", path, config.scenario,
                config.seed)
    return config


def parse_config(crudo: dict, base_dir: Path | None = None) -> RunConfig:
    """Valida el dict de un TOML ya leído y construye el ``RunConfig``."""
    errores: list[str] = []
    base_dir = Path(base_dir) if base_dir else settings.PROJECT_ROOT

    escenario = crudo.get("scenario")
    if escenario not in SCENARIOS:
        errores.append(f"scenario: debe ser uno de {SCENARIOS}, se recibió {escenario!r}")
    seed = crudo.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errores.append(f"seed: entero no negativo obligatorio, se recibió {seed!r}")
        seed = 0

    distribuciones = _parse_distributions(crudo.get("distributions", {}), errores)
    data = crudo.get("data")
    if data not in distribuciones:
        errores.append(f"data: {data!r} no es una distribución declarada")

    schedule = (_parse_block(ScheduleBlock, crudo.get("schedule", {}), "schedule", errores)
                or ScheduleBlock())
    if schedule.kind not in SCHEDULE_KINDS:
        errores.append(f"schedule.kind: debe ser uno de {SCHEDULE_KINDS}")
    restricciones = _parse_constraints(crudo.get("constraints", []), distribuciones,
                                       escenario, errores)
    train = _parse_train(crudo.get("train", {}), schedule, seed, errores)
    evaluacion = _parse_block(EvalBlock, crudo.get("eval", {}), "eval", errores) or EvalBlock()
    finetune = _parse_finetune(crudo.get("finetune", {}), escenario, data, distribuciones,
                               base_dir, errores)
    oraculo = _parse_block(OracleBlock, crudo.get("oracle", {}), "oracle", errores) or OracleBlock()
    sweep = _parse_sweep(crudo.get("sweep", {}), escenario, restricciones, errores)

    if escenario == "oracle":
        for nombre in [data] + [r.source for r in restricciones]:
            if nombre in distribuciones and not isinstance(distribuciones[nombre], TabularDist):
                errores.append(f"distributions.{nombre}: el oráculo requiere kind = \"tabular\"")
    elif escenario in SCENARIOS:
        for nombre, dist in distribuciones.items():
            if isinstance(dist, TabularDist):
                errores.append(f"distributions.{nombre}: el escenario {escenario} requiere "
                               "mezclas gaussianas")

    output_dir = Path(crudo.get("output_dir", settings.OUTPUT_PATH / f"{escenario}_{seed}"))
    if not output_dir.is_absolute():
        output_dir = settings.PROJECT_ROOT / output_dir

    if errores:
        raise ConfigError(errores)
    return RunConfig(
        scenario=escenario,
        seed=seed,
        data=data,
        distributions=distribuciones,
        constraints=restricciones,
        train=train,
        schedule=schedule,
        eval=evaluacion,
        finetune=finetune,
        oracle=oraculo,
        output_dir=output_dir,
        sweep=sweep,
    )


# ── Secciones ─────────────────────────────────────────────────────────────────

def _parse_block(cls, crudo: dict, ruta: str, errores: list):
    if not isinstance(crudo, dict):
        errores.append(f"{ruta}: se esperaba una sección")
        return None
    validos = {f.name: f for f in fields(cls)}
    valores = {}
    for clave, valor in crudo.items():
        if clave not in validos:
            errores.append(f"{ruta}.{clave}: clave desconocida")
            continue
        valores[clave] = valor
    try:
        return cls(**valores)
    except (TypeError, ValueError) as e:
        errores.append(f"{ruta}: {e}")
        return None


def _parse_distributions(crudo: dict, errores: list) -> dict:
    distribuciones = {}
    for nombre, bloque in crudo.items():
        ruta = f"distributions.{nombre}"
        kind = bloque.get("kind")
        try:
            if kind == "gaussian_mixture":
                distribuciones[nombre] = GaussianMixture(
                    dim=int(bloque["dim"]),
                    weights=bloque["weights"],
                    means=bloque["means"],
                    variances=bloque["variances"],
                    component_labels=bloque.get("labels"),
                )
            elif kind == "tabular":
                distribuciones[nombre] = TabularDist(
                    support=tuple(bloque["support"]),
                    pmf=np.asarray(bloque["pmf"], dtype=float),
                )
            else:
                errores.append(f"{ruta}.kind: debe ser uno de {DIST_KINDS}, se recibió {kind!r}")
        except KeyError as e:
            errores.append(f"{ruta}.{e.args[0]}: campo obligatorio")
        except (TypeError, ValueError) as e:
            errores.append(f"{ruta}: {e}")
    return distribuciones


def _parse_constraints(crudo: list, distribuciones: dict, escenario, errores: list) -> list:
    bloques = []
    for i, bloque in enumerate(crudo):
        ruta = f"constraints[{i}]"
        antes = len(errores)
        r = _parse_block(ConstraintBlock, {"label": f"r{i + 1}", **bloque}, ruta, errores)
        if len(errores) > antes:
            continue
        if r.source == PRETRAINED_SOURCE:
            if escenario != "finetune":
                errores.append(f"{ruta}.source: \"pretrained\" solo vale en el escenario finetune")
        elif r.source not in distribuciones:
            errores.append(f"{ruta}.source: {r.source!r} no es una distribución declarada")
        umbrales = [x for x in (r.threshold, r.b_bar, r.b) if x is not None]
        if len(umbrales) > 1:
            errores.append(f"{ruta}: usar solo uno de threshold, b_bar o b")
        if escenario == "oracle" and r.b_bar is None and r.b is None:
            errores.append(f"{ruta}: el oráculo requiere b_bar o b")
        if r.b is not None and escenario != "oracle":
            errores.append(f"{ruta}.b: la forma KL solo vale en el oráculo")
        if any(not np.isfinite(x) for x in umbrales):
            errores.append(f"{ruta}: umbral no finito")
        if r.batch_size_dual < 1:
            errores.append(f"{ruta}.batch_size_dual: debe ser >= 1")
        bloques.append(r)
    return bloques


def _parse_train(crudo: dict, schedule: ScheduleBlock, seed: int, errores: list) -> TrainConfig:
    valores = {}
    for clave, valor in crudo.items():
        if clave not in _TRAIN_KEYS:
            errores.append(f"train.{clave}: clave desconocida")
        else:
            valores[clave] = valor
    try:
        return TrainConfig(T=schedule.T, c0=schedule.c0, c1=schedule.c1,
                           schedule_kind=schedule.kind, seed=seed, **valores)
    except ConfigError as e:
        errores.extend(f"train: {msg}" for msg in e.errores)
    except TypeError as e:
        errores.append(f"train: {e}")
    return TrainConfig()


def _parse_finetune(crudo: dict, escenario, data, distribuciones: dict, base_dir: Path,
                    errores: list) -> FinetuneBlock:
    bloque = _parse_block(FinetuneBlock, crudo, "finetune", errores) or FinetuneBlock()
    if bloque.checkpoint is not None:
        checkpoint = Path(bloque.checkpoint)
        bloque.checkpoint = checkpoint if checkpoint.is_absolute() else base_dir / checkpoint
    if escenario != "finetune":
        return bloque
    if bloque.checkpoint is None and bloque.pretrain_data is None:
        errores.append("finetune: se requiere checkpoint o pretrain_data")
    if bloque.pretrain_data is not None and bloque.pretrain_data not in distribuciones:
        errores.append(f"finetune.pretrain_data: {bloque.pretrain_data!r} no está declarada")
    if not bloque.reference:
        bloque.reference = [n for n in (bloque.pretrain_data, data) if n is not None]
    for nombre in bloque.reference:
        if nombre not in distribuciones:
            errores.append(f"finetune.reference: {nombre!r} no está declarada")
    return bloque


def _entero_positivo(valor) -> bool:
    return isinstance(valor, int) and not isinstance(valor, bool) and valor >= 1


def _parse_sweep(crudo: dict, escenario, restricciones: list, errores: list) -> SweepBlock:
    bloque = _parse_block(SweepBlock, crudo, "sweep", errores) or SweepBlock()
    if escenario != "sensitivity":
        return bloque
    if not restricciones:
        errores.append("constraints: el barrido de sensibilidad requiere al menos una restricción")
    for i, par in enumerate(bloque.batch_sizes):
        if not (isinstance(par, list) and len(par) == 2 and all(map(_entero_positivo, par))):
            errores.append(f"sweep.batch_sizes[{i}]: se esperaba [primal, dual] enteros >= 1")
    for i, n in enumerate(bloque.N):
        if not _entero_positivo(n):
            errores.append(f"sweep.N[{i}]: entero >= 1, se recibió {n!r}")
    if not bloque.batch_sizes or not bloque.N:
        errores.append("sweep: batch_sizes y N no pueden estar vacíos")
    return bloque
