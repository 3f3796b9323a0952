"""Tests de las distribuciones sintéticas, mezclas y estimadores de distancia."""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np
import pytest

from src.diffusion.distributions import (
    GaussianMixture,
    InfiniteKL,
    MixtureSpec,
    OverlappingComponents,
    TabularDist,
    diffused_score,
    entropy,
    gaussian_kl,
    kl_monte_carlo,
    log_density,
    sample,
    tv_binned,
)
from src.diffusion.schedule import build_schedule


def _gmm_dos_modos(w=(0.5, 0.5)):
    return GaussianMixture(dim=2, weights=w, means=[[-3.0, 0.0], [3.0, 0.0]],
                           variances=[0.25, 0.25], component_labels=["A", "B"])


class TestTipos:
    def test_pesos_no_normalizados(self):
        with pytest.raises(ValueError):
            GaussianMixture(dim=1, weights=[0.5, 0.6], means=[[0.0], [1.0]], variances=[1, 1])

    def test_varianza_no_positiva(self):
        with pytest.raises(ValueError):
            GaussianMixture(dim=1, weights=[1.0], means=[[0.0]], variances=[0.0])

    def test_dimension_de_medias(self):
        with pytest.raises(ValueError):
            GaussianMixture(dim=3, weights=[1.0], means=[[0.0, 1.0]], variances=[1.0])

    def test_atomos_repetidos(self):
        with pytest.raises(ValueError):
            TabularDist(support=("a", "a"), pmf=[0.5, 0.5])

    def test_atomos_vectoriales_como_tuplas(self):
        dist = TabularDist(support=[[0, 1], [1, 0]], pmf=[0.25, 0.75])
        assert dist.prob((1, 0)) == 0.75
        assert dist.prob([0, 1]) == 0.25

    def test_etiquetas_por_defecto(self):
        g = GaussianMixture(dim=1, weights=[0.5, 0.5], means=[[0.0], [5.0]], variances=[1, 1])
        assert g.labels == ("0", "1")

    def test_mezcla_con_lambda_negativo(self):
        q = TabularDist(support=("a",), pmf=[1.0])
        with pytest.raises(ValueError):
            MixtureSpec(q, (TabularDist(support=("b",), pmf=[1.0]),), [-0.1])


class TestSample:
    def test_pmf_degenerada(self, rng):
        dist = TabularDist(support=("x", "y"), pmf=[1.0, 0.0])
        assert set(sample(dist, 500, rng)) == {"x"}

    def test_n_invalido(self, rng):
        with pytest.raises(ValueError):
            sample(_gmm_dos_modos(), 0, rng)

    def test_mezcla_con_lambda_cero_igual_a_base(self):
        q = _gmm_dos_modos((0.7, 0.3))
        r = GaussianMixture(dim=2, weights=[1.0], means=[[0.0, 5.0]], variances=[1.0])
        mezcla = MixtureSpec(q, (r,), [0.0])
        x = np.random.default_rng(3).standard_normal((20, 2))
        np.testing.assert_allclose(mezcla.log_density(x), q.log_density(x), rtol=1e-12)
        plana = mezcla.flatten()
        np.testing.assert_allclose(plana.weights[:2], q.weights)
        assert plana.weights[2] == 0.0

    def test_frecuencias_por_componente(self, rng):
        g = GaussianMixture(dim=1, weights=[0.2, 0.5, 0.3], means=[[-5.0], [0.0], [5.0]],
                            variances=[0.1, 0.1, 0.1])
        n = 100_000
        _, comps = g.sample(n, rng, return_components=True)
        conteos = np.bincount(comps, minlength=3)
        sd = np.sqrt(n * g.weights * (1 - g.weights))
        assert np.all(np.abs(conteos - n * g.weights) <= 4 * sd)

    def test_muestras_de_mezcla_tabular(self, rng):
        q = TabularDist(support=("a", "b"), pmf=[0.5, 0.5])
        r = TabularDist(support=("c",), pmf=[1.0])
        muestras = MixtureSpec(q, (r,), [1.0]).sample(40_000, rng)
        frecuencia_c = muestras.count("c") / len(muestras)
        assert frecuencia_c == pytest.approx(0.5, abs=4 * np.sqrt(0.25 / 40_000))


class TestLogDensity:
    def test_normal_estandar(self):
        g = GaussianMixture(dim=1, weights=[1.0], means=[[0.0]], variances=[1.0])
        assert log_density(g, np.array([0.0])) == pytest.approx(-0.5 * np.log(2 * np.pi))

    def test_tabular_uniforme(self):
        dist = TabularDist(support=(0, 1), pmf=[0.5, 0.5])
        assert log_density(dist, 0) == pytest.approx(-np.log(2))
        assert log_density(dist, 7) == -np.inf

    def test_punto_equidistante(self):
        g = GaussianMixture(dim=1, weights=[0.5, 0.5], means=[[-1.0], [1.0]], variances=[1, 1])
        esperado = np.log(np.exp(-0.5) / np.sqrt(2 * np.pi))
        assert log_density(g, np.array([0.0])) == pytest.approx(esperado, rel=1e-12)

    def test_identidad_de_mezcla_tabular(self):
        q = TabularDist(support=("a", "b"), pmf=[0.3, 0.7])
        r1 = TabularDist(support=("c",), pmf=[1.0])
        r2 = TabularDist(support=("d", "e"), pmf=[0.4, 0.6])
        lam = np.array([0.5, 2.0])
        mezcla = MixtureSpec(q, (r1, r2), lam)
        for atom in ("a", "b", "c", "d", "e"):
            directo = (q.prob(atom) + lam[0] * r1.prob(atom) + lam[1] * r2.prob(atom)) / 3.5
            assert mezcla.log_density(atom) == pytest.approx(np.log(directo), abs=1e-12)
            assert mezcla.flatten().prob(atom) == pytest.approx(directo, abs=1e-12)

    def test_identidad_de_mezcla_gaussiana(self, rng):
        q = _gmm_dos_modos((0.9, 0.1))
        r = GaussianMixture(dim=2, weights=[1.0], means=[[3.0, 0.0]], variances=[0.25])
        lam = np.array([1.7])
        x = rng.normal(scale=3.0, size=(50, 2))
        directo = (np.exp(q.log_density(x)) + lam[0] * np.exp(r.log_density(x))) / (1 + lam[0])
        np.testing.assert_allclose(MixtureSpec(q, (r,), lam).log_density(x), np.log(directo),
                                   rtol=1e-9)


class TestDiffusedScore:
    def test_normal_estandar(self):
        sched = build_schedule(100)
        g = GaussianMixture(dim=2, weights=[1.0], means=[[0.0, 0.0]], variances=[1.0])
        x = np.array([0.7, -1.3])
        for t in (1, 50, 100):
            np.testing.assert_allclose(diffused_score(g, sched, t, x), -x, rtol=1e-12)

    def test_simetria_en_la_media(self):
        sched = build_schedule(100)
        score = diffused_score(_gmm_dos_modos(), sched, 30, np.zeros(2))
        np.testing.assert_allclose(score, 0.0, atol=1e-12)

    def test_diferencias_finitas(self, rng):
        sched = build_schedule(200)
        q = GaussianMixture(dim=2, weights=[0.6, 0.4], means=[[-1.0, 0.5], [2.0, -1.0]],
                            variances=[0.3, 0.8])
        h = 1e-5
        for _ in range(100):
            t = int(rng.integers(1, 201))
            x = rng.normal(scale=2.0, size=2)
            difundida = q.diffused(sched.alpha_bar[t])
            numerico = np.array([
                (difundida.log_density(x + h * e) - difundida.log_density(x - h * e)) / (2 * h)
                for e in np.eye(2)
            ])
            analitico = diffused_score(q, sched, t, x)
            np.testing.assert_allclose(analitico, numerico, rtol=1e-5, atol=1e-7)

    def test_lote_con_pasos_por_fila(self, rng):
        sched = build_schedule(100)
        q = _gmm_dos_modos()
        x = rng.standard_normal((5, 2))
        t = np.array([1, 10, 20, 50, 100])
        lote = diffused_score(q, sched, t, x)
        for j in range(5):
            np.testing.assert_allclose(lote[j], diffused_score(q, sched, t[j], x[j]))

    def test_mezcla_se_aplana(self):
        sched = build_schedule(100)
        q = _gmm_dos_modos((0.9, 0.1))
        r = GaussianMixture(dim=2, weights=[1.0], means=[[3.0, 0.0]], variances=[0.25])
        mezcla = MixtureSpec(q, (r,), [1.0])
        x = np.array([0.5, 0.2])
        np.testing.assert_allclose(diffused_score(mezcla, sched, 10, x),
                                   diffused_score(mezcla.flatten(), sched, 10, x))


class TestEntropy:
    def test_tabular_uniforme(self):
        dist = TabularDist(support=tuple(range(8)), pmf=np.full(8, 1 / 8))
        assert entropy(dist) == pytest.approx(np.log(8), rel=1e-12)

    def test_gaussiana_unidimensional(self):
        g = GaussianMixture(dim=1, weights=[1.0], means=[[0.0]], variances=[1.0])
        assert entropy(g) == pytest.approx(1.4189385332046727, rel=1e-12)

    def test_dos_gaussianas_separadas(self):
        g = GaussianMixture(dim=1, weights=[0.5, 0.5], means=[[0.0], [10.0]], variances=[1, 1])
        assert entropy(g) == pytest.approx(0.5 * np.log(2 * np.pi * np.e) + np.log(2))

    def test_componentes_solapadas(self):
        g = GaussianMixture(dim=1, weights=[0.5, 0.5], means=[[0.0], [1.0]], variances=[1, 1])
        with pytest.raises(OverlappingComponents):
            entropy(g)

    def test_consistencia_monte_carlo(self, rng):
        g = _gmm_dos_modos((0.7, 0.3))
        x = g.sample(50_000, rng)
        valores = -g.log_density(x)
        error = valores.std(ddof=1) / np.sqrt(len(x))
        assert abs(valores.mean() - entropy(g)) < 3 * error + 1e-3


class TestKL:
    def test_parametros_identicos(self):
        assert gaussian_kl(np.zeros(3), 2.0, np.zeros(3), 2.0, 3) == pytest.approx(0.0, abs=1e-15)

    def test_solo_termino_cuadratico(self):
        assert gaussian_kl(np.array([0.0]), 1.0, np.array([1.0]), 1.0, 1) == pytest.approx(0.5)

    def test_varianzas_distintas(self):
        esperado = 0.5 * (np.log(2) - 1 + 0.5)
        assert gaussian_kl(np.array([0.0]), 1.0, np.array([0.0]), 2.0, 1) == pytest.approx(esperado)
        assert esperado == pytest.approx(0.09657, abs=1e-5)

    def test_monte_carlo_contra_cerrado(self, rng):
        a = GaussianMixture(dim=1, weights=[1.0], means=[[0.0]], variances=[1.0])
        b = GaussianMixture(dim=1, weights=[1.0], means=[[0.5]], variances=[2.0])
        estimado, error = kl_monte_carlo(a, b, 100_000, rng)
        exacto = gaussian_kl(np.array([0.0]), 1.0, np.array([0.5]), 2.0, 1)
        assert abs(estimado - exacto) < 3 * error

    def test_monte_carlo_misma_distribucion(self, rng):
        g = _gmm_dos_modos()
        estimado, error = kl_monte_carlo(g, g, 1000, rng)
        assert estimado == pytest.approx(0.0, abs=1e-12)
        assert error == pytest.approx(0.0, abs=1e-12)

    def test_monte_carlo_tabular(self, rng):
        p = TabularDist(support=("a", "b", "c"), pmf=[0.5, 0.3, 0.2])
        q = TabularDist(support=("a", "b", "c"), pmf=[0.2, 0.3, 0.5])
        exacto = float(np.sum(p.pmf * np.log(p.pmf / q.pmf)))
        estimado, error = kl_monte_carlo(p, q, 100_000, rng)
        assert abs(estimado - exacto) < 3 * error

    def test_soporte_insuficiente(self, rng):
        p = TabularDist(support=("a", "b"), pmf=[0.5, 0.5])
        q = TabularDist(support=("a",), pmf=[1.0])
        with pytest.raises(InfiniteKL):
            kl_monte_carlo(p, q, 200, rng)


class TestTVBinned:
    def test_muestras_identicas(self, rng):
        x = rng.standard_normal((1000, 2))
        assert tv_binned(x, x) == 0.0

    def test_bins_disjuntos(self):
        a = np.zeros((100, 1))
        b = np.ones((100, 1))
        assert tv_binned(a, b, bins=10) == pytest.approx(1.0)

    def test_autodistancia_calibrada(self):
        g = GaussianMixture(dim=1, weights=[0.4, 0.6], means=[[-2.0], [2.0]], variances=[0.5, 0.5])
        a = g.sample(50_000, np.random.default_rng(1))
        b = g.sample(50_000, np.random.default_rng(2))
        assert tv_binned(a, b, bins=50) < 0.05

    def test_muestras_vacias(self):
        with pytest.raises(ValueError):
            tv_binned(np.empty((0, 2)), np.zeros((3, 2)))
