"""Raíces de errores del laboratorio.

Cada raíz se traduce a un código de salida en ``src.main``:
    ConfigError          → 2
    NumericalDivergence  → 3
    InfeasibleProblem    → 4
Los módulos definen sus errores específicos heredando de estas clases.
"""


class LaboratorioError(Exception):
    """Error base de todo el paquete."""


class ConfigError(LaboratorioError):
    """Configuración inválida. Acumula los mensajes con su ruta en el archivo."""

    def __init__(self, errores):
        if isinstance(errores, str):
            errores = [errores]
        self.errores = list(errores)
        super().__init__("; ".join(self.errores))


class NumericalDivergence(LaboratorioError):
    """Overflow o valores no finitos durante entrenamiento o muestreo."""


class InfeasibleProblem(LaboratorioError):
    """Problema dual sin solución acotada (Σ e^{h-b̄} >= 1)."""
