"""
Orquestador de escenarios: equidad, ajuste fino, sin restricciones, oráculo y
barrido de sensibilidad.

Cada escenario escribe sus artefactos en un directorio temporal que se publica
al final con un rename; si algo falla, el directorio de salida no cambia.

Toda la aleatoriedad sale de la semilla de la corrida a través de subflujos
con nombre (train, sample, eval), de modo que cada componente es reproducible
por separado.
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from config import settings
from src.diffusion.distributions import MixtureSpec, tv_binned
from src.diffusion.sampler import generate
from src.diffusion.schedule import build_schedule
from src.diffusion.score_net import load_checkpoint, save_checkpoint
from src.evaluation.metrics import frequency_report, mixture_match_report
from src.oracle.tabular import (
    DualProblem,
    dual_function_exact,
    exact_dual_ascent,
    feasibility_check,
    kkt_residuals,
    optimal_dual_closed_form,
    primal_value_exact,
)
from src.output.csv_exporter import directorio_atomico, exportar_csv, exportar_muestras
from src.output.json_exporter import exportar_resumen
from src.scenarios.config_loader import PRETRAINED_SOURCE, RunConfig
from src.training.dual import threshold_transform
from src.training.trainer import ConstraintSpec, finetune_constraint_estimate, pretrain, train

logger = logging.getLogger(__name__)

SUBSTREAMS = ("train", "sample", "eval")


def substream(seed: int, nombre: str) -> np.random.Generator:
    """Generador del subflujo ``nombre`` derivado de la semilla de la corrida."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), SUBSTREAMS.index(nombre)]))


def substream_seed(seed: int, nombre: str) -> int:
    """Semilla entera del subflujo, para APIs que reciben una semilla (el muestreo)."""
    estado = np.random.SeedSequence([int(seed), SUBSTREAMS.index(nombre)]).generate_state(1)
    return int(estado[0])


def class_reference(config: RunConfig, nombres=None):
    """Mezcla con todas las clases del escenario, para clasificar muestras."""
    if nombres is None:
        nombres = [config.data] + [r.source for r in config.constraints
                                   if r.source != PRETRAINED_SOURCE]
    dists = [config.distribution(n) for n in nombres]
    if len(dists) == 1:
        return dists[0]
    return MixtureSpec(dists[0], tuple(dists[1:]), np.ones(len(dists) - 1))


class ScenarioOrchestrator:
    """Ejecuta el escenario declarado en un ``RunConfig`` y publica sus artefactos."""

    def __init__(self, config: RunConfig, output_dir=None):
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else config.output_dir
        self.sched = None

    def run(self) -> dict:
        logger.info("=" * 60)
        logger.info("ESCENARIO %s (semilla=%d)", self.config.scenario.upper(), self.config.seed)
        logger.info("=" * 60)

        ejecutores = {
            "fairness": self.run_fairness,
            "unconstrained": self.run_unconstrained,
            "finetune": self.run_finetune,
            "oracle": self.run_oracle,
            "sensitivity": self.run_sensitivity,
        }
        with directorio_atomico(self.output_dir) as tmp:
            resumen = ejecutores[self.config.scenario](tmp)
            resumen = {"scenario": self.config.scenario, "seed": self.config.seed, **resumen}
            exportar_resumen(resumen, tmp / "summary.json")

        logger.info("=" * 60)
        logger.info("ESCENARIO COMPLETADO → %s", self.output_dir)
        logger.info("=" * 60)
        return resumen

    # ── Piezas comunes ────────────────────────────────────────────────────────

    def schedule(self):
        if self.sched is None:
            s = self.config.schedule
            self.sched = build_schedule(s.T, s.c0, s.c1, kind=s.kind)
        return self.sched

    def _b_tilde(self, bloque, d: int) -> float:
        if bloque.b_bar is not None:
            sched = self.schedule()
            return threshold_transform(bloque.b_bar, sched.v, sched.omega_bar, d)
        return 0.0 if bloque.threshold is None else float(bloque.threshold)

    def constraint_specs(self, pretrained=None) -> list:
        d = self.config.q.dim
        specs = []
        for bloque in self.config.constraints:
            fuente = pretrained if bloque.source == PRETRAINED_SOURCE else \
                self.config.distribution(bloque.source)
            specs.append(ConstraintSpec(
                source=fuente,
                threshold_b_tilde=self._b_tilde(bloque, d),
                batch_size_dual=bloque.batch_size_dual,
                label=bloque.label,
            ))
        return specs

    def metadata(self) -> dict:
        s = self.sched
        return {"T": s.T, "c0": s.c0, "c1": s.c1, "kind": s.kind, "seed": self.config.seed}

    def _muestrear(self, net, destino: Path):
        ev = self.config.eval
        corrida = generate(net, self.schedule(), ev.n_samples,
                           substream_seed(self.config.seed, "sample"))
        exportar_muestras(corrida.outputs, destino / "samples.csv")
        return corrida.outputs

    def _reporte(self, muestras, referencia, destino: Path, nombre="frequency_report.csv"):
        reporte = frequency_report(muestras, referencia, self.config.eval.target)
        exportar_csv(reporte.to_frame(), destino / nombre)
        return reporte

    def _tv_contra(self, muestras, dist) -> float:
        """TV binned entre las muestras y una muestra fresca de ``dist`` (subflujo eval)."""
        ref = dist.sample(len(muestras), substream(self.config.seed, "eval"))
        return tv_binned(muestras, ref, self.config.eval.tv_bins)

    def _entrenar(self, specs, destino: Path, net=None, train_config=None) -> dict:
        """Entrena, guarda historial, checkpoint y muestras en ``destino``."""
        destino.mkdir(parents=True, exist_ok=True)
        red, dual = train(train_config or self.config.train, self.config.q, specs,
                          rng=substream(self.config.seed, "train"), sched=self.schedule(),
                          net=net)
        if specs:
            exportar_csv(dual.to_frame(), destino / "dual_history.csv")
        save_checkpoint(red, destino / settings.CHECKPOINT_NAME, self.metadata())
        muestras = self._muestrear(red, destino)
        return {"net": red, "dual": dual, "samples": muestras}

    # ── Escenarios ────────────────────────────────────────────────────────────

    def run_fairness(self, tmp: Path) -> dict:
        """Modelo restringido y (opcional) línea base sin restricciones, mismas semillas."""
        specs = self.constraint_specs()
        referencia = class_reference(self.config)
        resumen = {}

        restringido = self._entrenar(specs, tmp / "constrained")
        reporte = self._reporte(restringido["samples"], referencia, tmp / "constrained")
        resumen["constrained"] = {
            "max_abs_gap": reporte.max_abs_gap,
            "frequencies": dict(zip(reporte.labels, reporte.frequencies)),
            "tv_binned_q": self._tv_contra(restringido["samples"], self.config.q),
        }
        dual = restringido["dual"]
        if specs:
            h_best, lam_best, g_best = dual.best
            fuentes = [s.source for s in specs]
            ajuste = mixture_match_report(restringido["samples"], lam_best, self.config.q,
                                          fuentes)
            exportar_csv(ajuste.to_frame(), tmp / "constrained" / "mixture_match.csv")
            resumen["constrained"].update({
                "lambda_final": dual.lam,
                "lambda_best": lam_best,
                "h_best": h_best,
                "g_best": g_best,
                "mixture_max_abs_gap": ajuste.max_abs_gap,
                "tv_binned_mixture": self._tv_contra(
                    restringido["samples"],
                    MixtureSpec(self.config.q, tuple(fuentes), lam_best)),
            })

        if specs and self.config.eval.baseline:
            base = self._entrenar([], tmp / "unconstrained")
            reporte_base = self._reporte(base["samples"], referencia, tmp / "unconstrained")
            resumen["unconstrained"] = {
                "max_abs_gap": reporte_base.max_abs_gap,
                "frequencies": dict(zip(reporte_base.labels, reporte_base.frequencies)),
                "tv_binned_q": self._tv_contra(base["samples"], self.config.q),
            }
            logger.info("Brecha máxima a la meta: restringido=%.4f, sin restricciones=%.4f",
                        reporte.max_abs_gap, reporte_base.max_abs_gap)
        return resumen

    def run_unconstrained(self, tmp: Path) -> dict:
        resultado = self._entrenar([], tmp)
        reporte = self._reporte(resultado["samples"], self.config.q, tmp)
        return {
            "max_abs_gap": reporte.max_abs_gap,
            "frequencies": dict(zip(reporte.labels, reporte.frequencies)),
            "tv_binned_q": self._tv_contra(resultado["samples"], self.config.q),
        }

    def run_finetune(self, tmp: Path) -> dict:
        """Ajuste fino sobre datos nuevos con y sin la restricción de cercanía al preentrenado."""
        ft = self.config.finetune
        sched = self.schedule()
        if ft.checkpoint is not None:
            preentrenada, _ = load_checkpoint(ft.checkpoint)
        else:
            logger.info("Sin checkpoint: preentrenando sobre %r", ft.pretrain_data)
            preentrenada = pretrain(self.config.train, self.config.distribution(ft.pretrain_data),
                                    rng=substream(self.config.seed, "train"), sched=sched)
        save_checkpoint(preentrenada, tmp / "pretrained" / settings.CHECKPOINT_NAME,
                        self.metadata())

        referencia = class_reference(self.config, ft.reference)
        antes = self._muestrear(preentrenada, tmp / "pretrained")
        reporte_antes = self._reporte(antes, referencia, tmp / "pretrained")

        specs = self.constraint_specs(pretrained=preentrenada)
        restringido = self._entrenar(specs, tmp / "constrained", net=preentrenada.copy())
        reporte = self._reporte(restringido["samples"], referencia, tmp / "constrained")
        n_gap = self.config.eval.n_samples
        resumen = {
            "pretrained": dict(zip(reporte_antes.labels, reporte_antes.frequencies)),
            "constrained": {
                "frequencies": dict(zip(reporte.labels, reporte.frequencies)),
                "max_abs_gap": reporte.max_abs_gap,
                "pretrained_gap": finetune_constraint_estimate(
                    restringido["net"], preentrenada, sched, n_gap,
                    substream(self.config.seed, "eval")),
            },
        }
        if specs:
            h_best, lam_best, g_best = restringido["dual"].best
            resumen["constrained"].update({
                "lambda_final": restringido["dual"].lam,
                "lambda_best": lam_best,
                "h_best": h_best,
                "g_best": g_best,
            })

        if self.config.eval.baseline:
            base = self._entrenar([], tmp / "unconstrained", net=preentrenada.copy())
            reporte_base = self._reporte(base["samples"], referencia, tmp / "unconstrained")
            resumen["unconstrained"] = {
                "frequencies": dict(zip(reporte_base.labels, reporte_base.frequencies)),
                "max_abs_gap": reporte_base.max_abs_gap,
                "pretrained_gap": finetune_constraint_estimate(
                    base["net"], preentrenada, sched, n_gap,
                    substream(self.config.seed, "eval")),
            }
        return resumen

    def run_sensitivity(self, tmp: Path) -> dict:
        """Repite el entrenamiento restringido sobre la grilla (lote primal, lote dual) × N.

        Cada punto usa los mismos subflujos de la corrida y deja sus artefactos en
        ``<tmp>/bp<primal>_bd<dual>_N<n>/``; la tabla comparativa va a ``sweep.csv``.
        """
        barrido = self.config.sweep
        base = self.config.train
        referencia = class_reference(self.config)
        filas = []

        for batch_primal, batch_dual, n in barrido.settings():
            H = max(1, round(base.H * base.N / n)) if barrido.fixed_budget else base.H
            config = replace(base, batch_primal=batch_primal, N=n, H=H)
            specs = [replace(s, batch_size_dual=batch_dual) for s in self.constraint_specs()]
            nombre = f"bp{batch_primal}_bd{batch_dual}_N{n}"
            logger.info("── Barrido %s (H=%d) ──", nombre, H)

            resultado = self._entrenar(specs, tmp / nombre, train_config=config)
            reporte = self._reporte(resultado["samples"], referencia, tmp / nombre)
            h_best, lam_best, g_best = resultado["dual"].best
            fila = {
                "setting": nombre,
                "batch_primal": batch_primal,
                "batch_size_dual": batch_dual,
                "batch_ratio": batch_primal / batch_dual,
                "N": n,
                "H": H,
            }
            fila.update({f"freq_{e}": f for e, f in zip(reporte.labels, reporte.frequencies)})
            fila["max_abs_gap"] = reporte.max_abs_gap
            fila.update({f"lambda_best_{i + 1}": x for i, x in enumerate(lam_best)})
            fila.update({"h_best": h_best, "g_best": g_best})
            filas.append(fila)

        exportar_csv(pd.DataFrame(filas), tmp / "sweep.csv")
        mejor = min(filas, key=lambda f: f["max_abs_gap"])
        logger.info("Mejor punto del barrido: %s (brecha=%.4f)", mejor["setting"],
                    mejor["max_abs_gap"])
        return {"settings": filas, "best_setting": mejor["setting"]}

    def run_oracle(self, tmp: Path) -> dict:
        """λ* cerrado, trayectoria del ascenso exacto, margen de factibilidad y residuos KKT."""
        prob = oracle_problem(self.config)
        oc = self.config.oracle
        factibilidad = feasibility_check(prob.h, prob.b_bar)
        logger.info("Factibilidad: s = %.6g (%s)", factibilidad.margin,
                    "factible" if factibilidad.feasible else "infactible")

        resultado = exact_dual_ascent(prob, oc.eta, oc.max_iters, oc.tol,
                                      divergence_threshold=oc.divergence_threshold,
                                      kl_cap=oc.kl_cap)
        exportar_csv(trajectory_frame(prob, resultado), tmp / "trajectory.csv")
        exportar_csv(pd.DataFrame({
            "atom": [str(a) for a in resultado.p_star.support],
            "prob": resultado.p_star.pmf,
        }), tmp / "p_star.csv")

        resumen = {
            "feasible": factibilidad.feasible,
            "margin": factibilidad.margin,
            "iterations": resultado.iterations,
            "converged": resultado.converged,
            "divergent": resultado.divergent,
            "max_iters_exceeded": resultado.max_iters_exceeded,
            "lambda_final": resultado.lam_final,
        }
        if factibilidad.feasible:
            lam_star = optimal_dual_closed_form(prob.h, prob.b_bar)
            distancia = float(np.max(np.abs(resultado.lam_final - lam_star))) if prob.m else 0.0
            resumen.update({
                "lambda_star": lam_star,
                "match": distancia < oc.match_tol,
                "max_abs_diff": distancia,
                "dual_value": dual_function_exact(prob, lam_star),
                "primal_value": primal_value_exact(prob, lam_star),
                "kkt_residuals": kkt_residuals(prob, lam_star),
            })
        return resumen


def oracle_problem(config: RunConfig) -> DualProblem:
    """DualProblem a partir de la configuración; umbrales b se pasan a b̄ = b + h."""
    restricciones = [config.distribution(r.source) for r in config.constraints]
    b_bar = [
        r.b_bar if r.b_bar is not None else r.b + dist.entropy()
        for r, dist in zip(config.constraints, restricciones)
    ]
    return DualProblem(q=config.q, constraints=tuple(restricciones), b_bar=np.array(b_bar))


def trajectory_frame(prob: DualProblem, resultado) -> pd.DataFrame:
    """Columnas iter, lambda_i, dual_value, constraint_i (una fila por iteración)."""
    filas = []
    for k, (lam, g, valores) in enumerate(zip(resultado.trajectory, resultado.dual_values,
                                              resultado.constraint_values)):
        fila = {"iter": k}
        fila.update({f"lambda_{i + 1}": x for i, x in enumerate(lam)})
        fila["dual_value"] = g
        fila.update({f"constraint_{i + 1}": x for i, x in enumerate(valores)})
        filas.append(fila)
    return pd.DataFrame(filas)
