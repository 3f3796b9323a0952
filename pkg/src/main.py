"""Punto de entrada del laboratorio de difusión con restricciones.

Subcomandos:
    python -m src.main schedule dump --T 1000 --out schedule.csv
    python -m src.main dist sample --config fairness.toml --name q --n 1000 --out q.csv
    python -m src.main oracle solve --config oracle.toml
    python -m src.main train --config fairness.toml [--seed N] [--save modelo.ckpt] [--exact-mode]
    python -m src.main sample --load modelo.ckpt --n 10000 --seed 0 --out muestras.csv
    python -m src.main eval --samples muestras.csv --reference fairness.toml --target uniform --out reporte.csv
    python -m src.main run --config fairness.toml

Códigos de salida: 0 éxito, 1 error inesperado, 2 configuración inválida,
3 divergencia numérica, 4 problema del oráculo infactible.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from config import settings

# Configurar logging antes de importar módulos que lo usen
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

from src.errors import ConfigError, InfeasibleProblem, NumericalDivergence  # noqa: E402

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_INFEASIBLE = 4


# ── Subcomandos ───────────────────────────────────────────────────────────────

def cmd_schedule_dump(args) -> int:
    from src.diffusion.schedule import build_schedule
    from src.output.csv_exporter import exportar_csv

    sched = build_schedule(args.T, args.c0, args.c1, kind=args.kind)
    exportar_csv(sched.to_frame(), args.out)
    print(f"T={sched.T} alpha_bar_T={sched.alpha_bar[-1]:.6g} omega_bar={sched.omega_bar:.6g} "
          f"v={sched.v:.6g}")
    return EXIT_OK


def cmd_dist_sample(args) -> int:
    from src.diffusion.distributions import GaussianMixture
    from src.output.csv_exporter import exportar_csv, exportar_muestras, muestras_a_frame
    from src.scenarios.config_loader import cargar_config

    config = cargar_config(args.config)
    if args.name not in config.distributions:
        raise ConfigError(f"--name: {args.name!r} no está declarada en {args.config}")
    dist = config.distribution(args.name)
    rng = np.random.default_rng(args.seed)
    if isinstance(dist, GaussianMixture):
        x, componentes = dist.sample(args.n, rng, return_components=True)
        df = muestras_a_frame(x)
        df["component"] = [dist.labels[k] for k in componentes]
        exportar_csv(df, args.out)
    else:
        exportar_muestras(dist.sample(args.n, rng), args.out)
    return EXIT_OK


def cmd_oracle_solve(args) -> int:
    from src.scenarios.config_loader import cargar_config
    from src.scenarios.orchestrator import ScenarioOrchestrator

    config = cargar_config(args.config, seed=args.seed)
    if config.scenario != "oracle":
        raise ConfigError(f"scenario: se esperaba \"oracle\", el archivo declara {config.scenario!r}")
    resumen = ScenarioOrchestrator(config, output_dir=args.out).run()
    return _linea_oraculo(resumen)


def _linea_oraculo(resumen: dict) -> int:
    if resumen["feasible"]:
        print(f"match: {str(resumen['match']).lower()} "
              f"max_abs_diff={resumen['max_abs_diff']:.3g} iterations={resumen['iterations']}")
        return EXIT_OK
    print(f"divergent: {str(resumen['divergent']).lower()} margin={resumen['margin']:.6g}")
    logger.error("Problema infactible: Σ e^(h-b̄) = %.6g >= 1", resumen["margin"])
    return EXIT_INFEASIBLE


def cmd_train(args) -> int:
    from src.diffusion.score_net import save_checkpoint
    from src.output.csv_exporter import directorio_atomico, exportar_csv
    from src.scenarios.config_loader import cargar_config
    from src.scenarios.orchestrator import ScenarioOrchestrator, oracle_problem, substream
    from src.training.trainer import train, train_exact

    config = cargar_config(args.config, seed=args.seed)
    destino = Path(args.out) if args.out else config.output_dir

    if args.exact_mode:
        if config.scenario != "oracle":
            raise ConfigError("--exact-mode requiere un archivo con scenario = \"oracle\"")
        dual = train_exact(config.train, oracle_problem(config), kl_cap=config.oracle.kl_cap)
        with directorio_atomico(destino) as tmp:
            exportar_csv(dual.to_frame(), tmp / "dual_history.csv")
        print(f"h_best={dual.best[0]} g_best={dual.best[2]:.17g} lambda={dual.lam.tolist()}")
        return EXIT_OK

    orquestador = ScenarioOrchestrator(config, output_dir=destino)
    sched = orquestador.schedule()
    specs = orquestador.constraint_specs()
    net, dual = train(config.train, config.q, specs, rng=substream(config.seed, "train"),
                      sched=sched)
    with directorio_atomico(destino) as tmp:
        exportar_csv(dual.to_frame(), tmp / "dual_history.csv")
        checkpoint = Path(args.save) if args.save else tmp / settings.CHECKPOINT_NAME
        save_checkpoint(net, checkpoint, orquestador.metadata())
    if dual.best is not None:
        print(f"h_best={dual.best[0]} g_best={dual.best[2]:.6g} lambda={dual.lam.tolist()}")
    return EXIT_OK


def cmd_sample(args) -> int:
    from src.diffusion.sampler import generate
    from src.diffusion.schedule import build_schedule
    from src.diffusion.score_net import load_checkpoint
    from src.output.csv_exporter import exportar_muestras

    net, metadata = load_checkpoint(args.load)
    sched = build_schedule(metadata.get("T"), metadata.get("c0"), metadata.get("c1"),
                           kind=metadata.get("kind", "convergent"))
    corrida = generate(net, sched, args.n, args.seed)
    exportar_muestras(corrida.outputs, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from src.evaluation.metrics import frequency_report
    from src.output.csv_exporter import exportar_csv, leer_muestras
    from src.scenarios.config_loader import cargar_config
    from src.scenarios.orchestrator import class_reference

    config = cargar_config(args.reference)
    referencia = class_reference(config)
    reporte = frequency_report(leer_muestras(args.samples), referencia, _parse_target(args.target))
    exportar_csv(reporte.to_frame(), args.out)
    print(f"max_abs_gap={reporte.max_abs_gap:.6g} n={reporte.n}")
    return EXIT_OK


def _parse_target(valor: str):
    """uniform | reference | etiqueta=peso,etiqueta=peso."""
    if valor in ("uniform", "reference"):
        return valor
    if valor == "weights":
        return "reference"
    try:
        return {k.strip(): float(v) for k, v in (par.split("=") for par in valor.split(","))}
    except ValueError as e:
        raise ConfigError(f"--target: formato inválido {valor!r}") from e


def cmd_run(args) -> int:
    from src.scenarios.config_loader import cargar_config
    from src.scenarios.orchestrator import ScenarioOrchestrator

    config = cargar_config(args.config, seed=args.seed)
    resumen = ScenarioOrchestrator(config, output_dir=args.out).run()
    if config.scenario == "oracle":
        return _linea_oraculo(resumen)
    return EXIT_OK


# ── Parser ────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Laboratorio de difusión con restricciones KL")
    sub = parser.add_subparsers(dest="comando", required=True)

    p_sched = sub.add_parser("schedule", help="Schedule de varianzas")
    sub_sched = p_sched.add_subparsers(dest="accion", required=True)
    p = sub_sched.add_parser("dump", help="Escribe el schedule a CSV")
    p.add_argument("--T", type=int, default=settings.DEFAULT_T)
    p.add_argument("--c0", type=float, default=None)
    p.add_argument("--c1", type=float, default=None)
    p.add_argument("--kind", default="convergent", choices=["convergent", "linear"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule_dump)

    p_dist = sub.add_parser("dist", help="Distribuciones declaradas en un archivo de corrida")
    sub_dist = p_dist.add_subparsers(dest="accion", required=True)
    p = sub_dist.add_parser("sample", help="Muestrea una distribución a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dist_sample)

    p_or = sub.add_parser("oracle", help="Oráculo tabular exacto")
    sub_or = p_or.add_subparsers(dest="accion", required=True)
    p = sub_or.add_parser("solve", help="λ* cerrado y ascenso dual exacto")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="Directorio de salida")
    p.set_defaults(func=cmd_oracle_solve)

    p = sub.add_parser("train", help="Entrenamiento primal-dual")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--save", default=None, help="Ruta del checkpoint")
    p.add_argument("--out", default=None, help="Directorio de salida")
    p.add_argument("--exact-mode", action="store_true",
                   help="Paso primal cerrado sobre un problema tabular")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="Muestreo desde un checkpoint")
    p.add_argument("--load", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="Reporte de frecuencias por clase")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True, help="Archivo de corrida con las clases")
    p.add_argument("--target", default="uniform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="Ejecuta el escenario completo de un archivo de corrida")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="Directorio de salida")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        for msg in e.errores:
            logger.error("Configuración inválida: %s", msg)
        return EXIT_CONFIG
    except NumericalDivergence as e:
        logger.error("Divergencia numérica: %s", e)
        return EXIT_DIVERGENCE
    except InfeasibleProblem as e:
        logger.error("Problema infactible: %s", e)
        return EXIT_INFEASIBLE
    except Exception:
        logger.exception("Error inesperado")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
