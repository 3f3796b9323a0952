"""Tests del entrenamiento primal-dual, del paso dual y del modo exacto."""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np
import pytest

from src.diffusion.distributions import GaussianMixture, TabularDist
from src.diffusion.schedule import build_schedule
from src.diffusion.score_net import ScoreNet
from src.errors import ConfigError
from src.oracle.tabular import DualProblem, exact_dual_ascent
from src.training.dual import (
    dual_step,
    inverse_threshold_transform,
    resilient_dual_step,
    threshold_transform,
)
from src.training.trainer import (
    ConstraintSpec,
    DualState,
    TrainConfig,
    TrainingDiverged,
    batch_mse,
    data_batch,
    finetune_batch,
    finetune_constraint_estimate,
    lagrangian_loss,
    train,
    train_exact,
)

Q = GaussianMixture(dim=2, weights=[0.5, 0.5], means=[[-3.0, 0.0], [3.0, 0.0]],
                    variances=[0.25, 0.25])
R = GaussianMixture(dim=2, weights=[1.0], means=[[0.0, 3.0]], variances=[0.25])


@pytest.fixture(scope="module")
def sched():
    return build_schedule(20, c1=2)


def _config_chica(**kwargs):
    base = dict(H=3, N=2, eta_p=1e-2, eta_d=0.5, batch_primal=16, T=20, c1=2.0,
                hidden_dims=(8,), time_embed_dim=4, seed=11)
    base.update(kwargs)
    return TrainConfig(**base)


# ── Paso dual y umbrales ──────────────────────────────────────────────────────

class TestDualStep:
    def test_ascenso(self):
        np.testing.assert_allclose(dual_step([0.0], [3.0], [1.0], 0.5), [1.0])

    def test_proyeccion_en_cero(self):
        np.testing.assert_array_equal(dual_step([0.2, 1.0], [0.0, 1.0], [1.0, 0.5], 0.5),
                                      [0.0, 1.25])

    def test_resiliente(self):
        np.testing.assert_allclose(resilient_dual_step([1.0], [0.5], 0.1, 0.5), [0.95])
        np.testing.assert_array_equal(resilient_dual_step([0.0], [0.0], 0.1, 0.5), [0.0])

    def test_punto_fijo_resiliente(self):
        # con estimado constante c el punto fijo es λ = c/(2γ)
        lam = np.array([0.0])
        for _ in range(500):
            lam = resilient_dual_step(lam, [0.3], 0.2, 0.5)
        np.testing.assert_allclose(lam, [0.3], rtol=1e-10)

    def test_transformacion_de_umbral(self):
        assert threshold_transform(1.0, 0.1, 2.0, 2) == pytest.approx(0.4)
        assert inverse_threshold_transform(0.4, 0.1, 2.0, 2) == pytest.approx(1.0)

    def test_omega_bar_no_positivo(self):
        with pytest.raises(ValueError):
            threshold_transform(1.0, 0.1, 0.0, 2)


# ── Tipos de configuración ────────────────────────────────────────────────────

class TestConfiguracion:
    @pytest.mark.parametrize("kwargs", [
        {"H": 0}, {"N": 0}, {"eta_p": 0.0}, {"eta_d": -1.0}, {"gamma": -0.1},
        {"batch_primal": 0}, {"time_mode": "cuadratico"}, {"best_warmup": 1.0},
        {"best_warmup": -0.1},
    ])
    def test_train_config_invalida(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_paso_primal_constante_por_defecto(self):
        config = TrainConfig(H=4, N=5, eta_p=2e-3)
        assert {config.primal_step_size(k) for k in range(20)} == {2e-3}

    def test_paso_primal_coseno(self):
        config = TrainConfig(H=4, N=5, eta_p=1e-2, eta_p_min=1e-4)
        pasos = np.array([config.primal_step_size(k) for k in range(20)])
        assert pasos[0] == pytest.approx(1e-2)
        assert pasos[-1] == pytest.approx(1e-4)
        assert np.all(np.diff(pasos) < 0)
        # a mitad de camino el coseno vale 1/2
        assert config.primal_step_size(9.5) == pytest.approx(0.5 * (1e-2 + 1e-4))

    @pytest.mark.parametrize("eta_p_min", [0.0, 2e-3])
    def test_paso_primal_minimo_invalido(self, eta_p_min):
        with pytest.raises(ConfigError):
            TrainConfig(eta_p=1e-3, eta_p_min=eta_p_min)

    def test_errores_acumulados(self):
        with pytest.raises(ConfigError) as info:
            TrainConfig(H=0, gamma=-1.0)
        assert len(info.value.errores) == 2

    def test_restriccion_tabular(self):
        with pytest.raises(ConfigError):
            ConstraintSpec(source=TabularDist(support=("a",), pmf=[1.0]))

    def test_umbral_no_finito(self):
        with pytest.raises(ConfigError):
            ConstraintSpec(source=R, threshold_b_tilde=float("nan"))

    def test_dimensiones_incompatibles(self):
        r1d = GaussianMixture(dim=1, weights=[1.0], means=[[0.0]], variances=[1.0])
        with pytest.raises(ConfigError):
            train(_config_chica(), Q, [ConstraintSpec(source=r1d, label="r")])


class TestDualState:
    def test_mejor_iterado_y_frame(self):
        estado = DualState(lam=np.zeros(2))
        estado.record(1, [0.0, 0.0], [1.0, 2.0], 0.5, 0.5, 5.0, 0.7)
        estado.record(2, [0.1, 0.3], [0.8, 1.0], 0.4, 0.9, 1.64, 0.6)
        estado.record(3, [0.2, 0.4], [0.7, 0.9], 0.4, 0.8, 1.3, 0.5)
        assert estado.best[0] == 2
        df = estado.to_frame()
        assert list(df.columns) == [
            "h", "lambda_1", "lambda_2", "constraint_est_1", "constraint_est_2",
            "objective_est", "lagrangian", "is_best", "slack_sq_norm", "inner_loss",
        ]
        assert df["is_best"].tolist() == [False, True, False]

    def test_iterado_no_candidato_no_compite(self):
        estado = DualState(lam=np.zeros(1))
        # ĝ alto al inicio: λ grande frente a una red sin entrenar
        estado.record(1, [0.0], [5.0], 2.0, 2.0, 25.0, candidate=False)
        estado.record(2, [2.5], [4.0], 1.5, 11.5, 16.0, candidate=False)
        estado.record(3, [2.0], [1.0], 0.6, 2.6, 1.0)
        estado.record(4, [1.5], [1.2], 0.5, 2.3, 1.44)
        h_best, lam_best, g_best = estado.best
        assert h_best == 3
        np.testing.assert_array_equal(lam_best, [2.0])
        assert g_best == pytest.approx(2.6)
        assert estado.to_frame()["is_best"].tolist() == [False, False, True, False]


# ── Lagrangiano y estimados ───────────────────────────────────────────────────

class TestLagrangiano:
    def test_lineal_en_lambda(self, sched, rng):
        net = ScoreNet(input_dim=2, hidden_dims=(8,))
        q_lote = data_batch(Q, 32, sched, rng)
        r_lote = data_batch(R, 16, sched, rng)
        base = batch_mse(net, q_lote, sched)
        extra = batch_mse(net, r_lote, sched)
        for lam in (0.0, 0.5, 3.0):
            assert lagrangian_loss(net, q_lote, [r_lote], [lam], sched) == pytest.approx(
                base + lam * extra, rel=1e-12)

    def test_lambda_negativo(self, sched, rng):
        net = ScoreNet(input_dim=2, hidden_dims=(8,))
        with pytest.raises(ValueError):
            lagrangian_loss(net, data_batch(Q, 4, sched, rng), [data_batch(R, 4, sched, rng)],
                            [-1.0], sched)

    def test_lote_de_datos(self, sched, rng):
        lote = data_batch(Q, 50, sched, rng, time_mode="elbo_weighted")
        assert lote.x_t.shape == (50, 2) and lote.target.shape == (50, 2)
        assert lote.t.min() >= 2 and lote.t.max() <= sched.T
        ab = sched.alpha_bar[lote.t][:, None]
        np.testing.assert_allclose(lote.x_t, np.sqrt(ab) * lote.x0 + np.sqrt(1 - ab) * lote.target)


class TestFinetuneEstimate:
    def test_misma_red_da_cero(self, sched, rng):
        net = ScoreNet(input_dim=2, hidden_dims=(8,))
        assert finetune_constraint_estimate(net, net.copy(), sched, 64, rng) == 0.0

    def test_corrimiento_del_sesgo_final(self, sched, rng):
        pre = ScoreNet(input_dim=2, hidden_dims=(8,))
        net = pre.copy()
        delta = np.array([0.3, -0.4])
        net.theta[-2:] += delta
        estimado = finetune_constraint_estimate(net, pre, sched, 64, rng)
        assert estimado == pytest.approx(float(delta @ delta), rel=1e-10)

    def test_lote_de_ajuste_fino(self, sched, rng):
        pre = ScoreNet(input_dim=2, hidden_dims=(8,))
        lote = finetune_batch(pre, 10, sched, rng)
        assert lote.x0 is None
        assert batch_mse(pre, lote, sched) == 0.0

    def test_dimension_incompatible(self, sched, rng):
        with pytest.raises(ValueError):
            finetune_constraint_estimate(ScoreNet(input_dim=2, hidden_dims=(4,)),
                                         ScoreNet(input_dim=3, hidden_dims=(4,)), sched, 8, rng)


# ── Entrenamiento ─────────────────────────────────────────────────────────────

class TestTrain:
    def test_determinista(self):
        restricciones = [ConstraintSpec(source=R, threshold_b_tilde=0.5, batch_size_dual=16)]
        net_a, dual_a = train(_config_chica(), Q, restricciones)
        net_b, dual_b = train(_config_chica(), Q, restricciones)
        np.testing.assert_array_equal(net_a.theta, net_b.theta)
        np.testing.assert_array_equal(dual_a.lam, dual_b.lam)
        assert dual_a.to_frame().equals(dual_b.to_frame())

    def test_historial_y_lambda(self):
        restricciones = [ConstraintSpec(source=R, threshold_b_tilde=0.0, batch_size_dual=16)]
        _, dual = train(_config_chica(H=4), Q, restricciones)
        df = dual.to_frame()
        assert df["h"].tolist() == [1, 2, 3, 4]
        assert df["lambda_1"].iloc[0] == 0.0
        # umbral nulo y MSE positivo: λ crece en cada paso
        assert np.all(np.diff(df["lambda_1"]) > 0)
        assert df["is_best"].sum() == 1
        # con best_warmup = 0.5 y H = 4 el mejor sale de h = 3 o h = 4
        assert df.loc[df["is_best"], "h"].iloc[0] > 2
        fila = df.iloc[2]
        assert fila["lagrangian"] == pytest.approx(
            fila["objective_est"] + fila["lambda_1"] * fila["constraint_est_1"])

    @pytest.mark.parametrize("warmup, h_min", [(0.0, 1), (0.5, 5), (0.9, 8)])
    def test_mejor_iterado_despues_del_calentamiento(self, warmup, h_min):
        restricciones = [ConstraintSpec(source=R, batch_size_dual=16)]
        config = _config_chica(H=8, gamma=0.5, best_warmup=warmup)
        _, dual = train(config, Q, restricciones)
        assert config.warmup_iterations == h_min - 1
        assert dual.best[0] >= h_min
        candidatos = [f for f in dual.history if f["h"] >= h_min]
        assert dual.best[2] == max(f["lagrangian"] for f in candidatos)

    def test_umbral_holgado_mantiene_lambda_nulo(self):
        restricciones = [ConstraintSpec(source=R, threshold_b_tilde=1e6, batch_size_dual=16)]
        _, dual = train(_config_chica(H=5), Q, restricciones)
        assert np.all(dual.to_frame()["lambda_1"] == 0.0)
        np.testing.assert_array_equal(dual.lam, [0.0])

    def test_resiliente_ignora_umbrales(self):
        restricciones = [ConstraintSpec(source=R, threshold_b_tilde=1e6, batch_size_dual=16)]
        _, dual = train(_config_chica(H=3, gamma=0.5), Q, restricciones)
        # con umbrales nulos el estimado positivo empuja λ hacia arriba
        assert dual.lam[0] > 0
        df = dual.to_frame()
        assert df["slack_sq_norm"].iloc[0] == pytest.approx(df["constraint_est_1"].iloc[0] ** 2)

    def test_resiliente_acotado_y_repetible(self):
        config = _config_chica(H=8, gamma=0.5, eta_d=0.3)
        restricciones = [ConstraintSpec(source=R, batch_size_dual=16)]
        _, dual = train(config, Q, restricciones)
        lams = [fila["lam"] for fila in dual.history] + [dual.lam]
        M = max(float(fila["estimates"].max()) for fila in dual.history)
        cota = max(0.0, M / (2 * config.gamma)) + config.eta_d * M
        assert all(float(lam.max()) <= cota for lam in lams)
        for k, fila in enumerate(dual.history):
            np.testing.assert_array_equal(
                resilient_dual_step(fila["lam"], fila["estimates"], config.eta_d, config.gamma),
                lams[k + 1],
            )

    def test_sin_restricciones_reduce_la_perdida(self):
        config = _config_chica(H=40, N=10, batch_primal=128, eta_p=5e-3, hidden_dims=(32, 32),
                               time_embed_dim=8)
        _, dual = train(config, Q)
        objetivo = dual.to_frame()["objective_est"]
        assert objetivo.iloc[-5:].mean() < objetivo.iloc[:2].mean()
        assert dual.m == 0

    def test_red_no_finita(self):
        config = _config_chica()
        net = ScoreNet(input_dim=2, hidden_dims=config.hidden_dims,
                       time_embed_dim=config.time_embed_dim)
        net.theta[0] = np.inf
        with pytest.raises(TrainingDiverged) as info:
            train(config, Q, net=net)
        assert info.value.iteration == 1


class TestTrainExact:
    def _problema(self):
        q = TabularDist(support=("a", "b"), pmf=[0.5, 0.5])
        r1 = TabularDist(support=("c",), pmf=[1.0])
        r2 = TabularDist(support=("d", "e"), pmf=[0.3, 0.7])
        return DualProblem(q=q, constraints=(r1, r2),
                           b_bar=np.array([np.log(4.0), r2.entropy() + np.log(5.0)]))

    def test_identico_al_ascenso_exacto(self):
        prob = self._problema()
        estado = train_exact(TrainConfig(H=60, eta_d=0.2), prob)
        ascenso = exact_dual_ascent(prob, eta=0.2, max_iters=60, tol=0.0)
        historial = np.array([fila["lam"] for fila in estado.history])
        np.testing.assert_array_equal(historial, ascenso.trajectory[:60])
        np.testing.assert_array_equal(estado.lam, ascenso.trajectory[60])
        np.testing.assert_array_equal(estado.to_frame()["lagrangian"], ascenso.dual_values)

    def test_mejor_iterado_cerca_del_optimo(self):
        prob = self._problema()
        estado = train_exact(TrainConfig(H=2000, eta_d=0.2), prob)
        # λ* = r/(1 - s) con r = (1/4, 1/5)
        np.testing.assert_allclose(estado.lam, np.array([0.25, 0.2]) / 0.55, atol=1e-6)
        assert estado.best[2] == pytest.approx(np.log(2.0) - np.log(0.55), abs=1e-9)
