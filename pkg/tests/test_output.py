"""Tests para los módulos de salida."""

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np
import pandas as pd
import pytest


class TestCsvExporter:
    def test_diecisiete_digitos(self):
        from src.output.csv_exporter import exportar_csv

        df = pd.DataFrame({"h": [1, 2], "lambda_1": [0.1, 1.0 / 3.0]})
        with tempfile.TemporaryDirectory() as tmpdir:
            ruta = exportar_csv(df, Path(tmpdir) / "sub" / "dual_history.csv")
            texto = ruta.read_text(encoding="utf-8")
        assert texto == "h,lambda_1\n1,0.10000000000000001\n2,0.33333333333333331\n"

    def test_muestras_a_frame(self):
        from src.output.csv_exporter import muestras_a_frame

        df = muestras_a_frame(np.zeros((3, 2)))
        assert list(df.columns) == ["x1", "x2"]
        assert list(muestras_a_frame(np.zeros(4)).columns) == ["x1"]
        assert muestras_a_frame(["a", ("b", 1)])["atom"].tolist() == ["a", "('b', 1)"]

    def test_lectura_de_muestras(self):
        from src.output.csv_exporter import exportar_muestras, leer_muestras

        x = np.random.default_rng(0).standard_normal((5, 3))
        with tempfile.TemporaryDirectory() as tmpdir:
            ruta = exportar_muestras(x, Path(tmpdir) / "samples.csv")
            np.testing.assert_array_equal(leer_muestras(ruta), x)

    def test_lectura_exacta_de_muchas_muestras(self):
        from src.output.csv_exporter import exportar_muestras, leer_muestras

        # Con suficientes valores el parser por defecto de pandas falla en algún ulp
        rng = np.random.default_rng(123)
        x = rng.standard_normal((20_000, 2)) * 10.0 ** rng.integers(-6, 6, size=(20_000, 2))
        with tempfile.TemporaryDirectory() as tmpdir:
            ruta = exportar_muestras(x, Path(tmpdir) / "samples.csv")
            leido = leer_muestras(ruta)
        assert leido.tobytes() == x.tobytes()

    def test_lectura_sin_columnas_x(self):
        from src.output.csv_exporter import leer_muestras

        with tempfile.TemporaryDirectory() as tmpdir:
            ruta = Path(tmpdir) / "otro.csv"
            ruta.write_text("label,count\na,1\n", encoding="utf-8")
            with pytest.raises(ValueError):
                leer_muestras(ruta)


class TestDirectorioAtomico:
    def test_publica_al_terminar(self, tmp_path):
        from src.output.csv_exporter import directorio_atomico

        destino = tmp_path / "corrida"
        with directorio_atomico(destino) as tmp:
            (tmp / "a.txt").write_text("hola", encoding="utf-8")
            assert not destino.exists()
        assert (destino / "a.txt").read_text(encoding="utf-8") == "hola"
        assert [p.name for p in tmp_path.iterdir()] == ["corrida"]

    def test_falla_no_toca_el_destino(self, tmp_path):
        from src.output.csv_exporter import directorio_atomico

        destino = tmp_path / "corrida"
        destino.mkdir()
        (destino / "previo.txt").write_text("viejo", encoding="utf-8")
        with pytest.raises(RuntimeError):
            with directorio_atomico(destino) as tmp:
                (tmp / "nuevo.txt").write_text("x", encoding="utf-8")
                raise RuntimeError("falla a mitad de corrida")
        assert sorted(p.name for p in destino.iterdir()) == ["previo.txt"]
        assert [p.name for p in tmp_path.iterdir()] == ["corrida"]

    def test_reemplaza_corrida_anterior(self, tmp_path):
        from src.output.csv_exporter import directorio_atomico

        destino = tmp_path / "corrida"
        destino.mkdir()
        (destino / "previo.txt").write_text("viejo", encoding="utf-8")
        with directorio_atomico(destino) as tmp:
            (tmp / "nuevo.txt").write_text("x", encoding="utf-8")
        assert sorted(p.name for p in destino.iterdir()) == ["nuevo.txt"]


class TestJsonExporter:
    def test_exportar_resumen_estructura(self):
        from src.output.json_exporter import exportar_resumen

        resumen = {
            "scenario": "oracle",
            "lambda_star": np.array([0.5, 0.5]),
            "iterations": np.int64(42),
            "margin": np.float64(0.5),
            "best": {"h": 3, "g": float("inf")},
        }
        with tempfile.TemporaryDirectory() as tmpdir:
            out_path = Path(tmpdir) / "summary.json"
            result = exportar_resumen(resumen, out_path)

            assert result["metadata"]["version"] == "1.0"
            assert "generado" in result["metadata"]
            assert result["lambda_star"] == [0.5, 0.5]
            assert result["iterations"] == 42
            assert result["best"]["g"] == "inf"

            with open(out_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
            assert loaded == result
