"""Red densa de predicción de ruido ε̂_θ(x_t, t) con gradientes en modo reverso.

Arquitectura: [x_t, emb(t/T)] → capas densas con tanh o softplus → salida lineal
de dimensión d. Todos los parámetros viven en un único vector plano ``theta``;
cada capa es una vista (W, b) sobre ese vector, en orden W luego b.

El forward guarda las activaciones intermedias y el backward las recorre en
orden inverso (regla de la cadena capa por capa), como en una red "a mano".
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from src.errors import ConfigError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "smooth-relu")

# Escala del embedding temporal: ángulos = (t/T)·_TIME_SCALE·frecuencia_k
_TIME_SCALE = 1000.0
_EPS_NUM = 1e-8


class DegenerateStep(ValueError):
    """ᾱ_t = 1: el score no está definido a partir del ruido predicho."""


class MissingCheckpoint(ConfigError):
    """El archivo de checkpoint no existe."""


# ── Red ───────────────────────────────────────────────────────────────────────

@dataclass
class ScoreNet:
    """Predictor de ruido. ``theta`` es el vector plano de parámetros."""
    input_dim: int
    hidden_dims: tuple
    time_embed_dim: int = 16
    activation: str = "tanh"
    seed: int = 0
    theta: np.ndarray = None

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.time_embed_dim <= 0 or self.time_embed_dim % 2:
            raise ValueError(f"time_embed_dim debe ser par y positivo: {self.time_embed_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Activación desconocida: {self.activation!r}")
        if self.theta is None:
            self.theta = self._init_theta()
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.param_count,):
            raise ValueError(
                f"theta tiene {self.theta.size} parámetros, la arquitectura requiere {self.param_count}"
            )

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim + self.time_embed_dim, *self.hidden_dims, self.input_dim]

    @property
    def param_count(self) -> int:
        tamaños = self.layer_sizes
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(tamaños[:-1], tamaños[1:]))

    def _init_theta(self) -> np.ndarray:
        """Uniforme en ±1/√fan_in por capa, desde la semilla de la red."""
        rng = np.random.default_rng(self.seed)
        partes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            cota = 1.0 / np.sqrt(fan_in)
            partes.append(rng.uniform(-cota, cota, size=fan_in * fan_out))
            partes.append(rng.uniform(-cota, cota, size=fan_out))
        return np.concatenate(partes)

    def layers(self, vector: np.ndarray = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Vistas (W, b) sobre ``vector`` (por defecto ``theta``)."""
        vector = self.theta if vector is None else vector
        vistas, pos = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = vector[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = vector[pos:pos + fan_out]
            pos += fan_out
            vistas.append((W, b))
        return vistas

    def copy(self) -> "ScoreNet":
        return ScoreNet(
            input_dim=self.input_dim,
            hidden_dims=self.hidden_dims,
            time_embed_dim=self.time_embed_dim,
            activation=self.activation,
            seed=self.seed,
            theta=self.theta.copy(),
        )

    def config(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "time_embed_dim": self.time_embed_dim,
            "activation": self.activation,
            "seed": self.seed,
        }

    # ── forward / backward ────────────────────────────────

    def _act(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.logaddexp(0.0, z)

    def _act_grad(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        return expit(z)

    def forward(self, x, t, T: int):
        """Salida (n, d) y memoria de activaciones para el backward."""
        h = np.concatenate([x, time_embedding(t, T, self.time_embed_dim)], axis=1)
        memoria = [h]
        capas = self.layers()
        for i, (W, b) in enumerate(capas):
            z = h @ W + b
            if i == len(capas) - 1:
                return z, memoria
            h = self._act(z)
            memoria.append((z, h))
        raise AssertionError("red sin capas")

    def backward(self, memoria, d_out) -> np.ndarray:
        """Gradiente plano de Σ (d_out · salida) respecto de theta."""
        grad = np.zeros_like(self.theta)
        capas = self.layers()
        grad_capas = self.layers(grad)
        delta = d_out
        for i in range(len(capas) - 1, -1, -1):
            entrada = memoria[0] if i == 0 else memoria[i][1]
            dW, db = grad_capas[i]
            dW[...] = entrada.T @ delta
            db[...] = delta.sum(axis=0)
            if i > 0:
                z, a = memoria[i]
                delta = (delta @ capas[i][0].T) * self._act_grad(z, a)
        return grad


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    """[sin, cos] de (t/T)·escala·ω_k con ω_k log-espaciadas, forma (n, dim)."""
    s = np.atleast_1d(np.asarray(t, dtype=float)) / T
    mitad = dim // 2
    frecuencias = np.exp(-np.log(10000.0) * np.arange(mitad) / mitad)
    angulos = (s * _TIME_SCALE)[:, None] * frecuencias[None, :]
    return np.concatenate([np.sin(angulos), np.cos(angulos)], axis=1)


# ── Operaciones ───────────────────────────────────────────────────────────────

def predict_noise(net: ScoreNet, x_t, t, sched) -> np.ndarray:
    """ε̂_θ(x_t, t). Acepta un punto (d,) con t entero o un lote (n, d)."""
    x = np.asarray(x_t, dtype=float)
    un_punto = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != net.input_dim:
        raise ValueError(f"x_t tiene dimensión {x.shape[1]}, la red espera {net.input_dim}")
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"t fuera de [1, {sched.T}]")
    salida, _ = net.forward(x, t, sched.T)
    return salida[0] if un_punto else salida


def to_score(eps_hat, t, sched) -> np.ndarray:
    """ŝ = -ε̂/√(1-ᾱ_t)."""
    escala = _noise_scale(t, sched, np.ndim(eps_hat))
    return -np.asarray(eps_hat, dtype=float) / escala


def from_score(score, t, sched) -> np.ndarray:
    """ε̂ = -√(1-ᾱ_t)·ŝ (inversa de ``to_score``)."""
    escala = _noise_scale(t, sched, np.ndim(score))
    return -np.asarray(score, dtype=float) * escala


def _noise_scale(t, sched, ndim: int):
    ab = sched.alpha_bar[np.asarray(t)]
    if np.any(ab >= 1.0):
        raise DegenerateStep(f"ᾱ_t = 1 en t={t}: el score no está definido")
    escala = np.sqrt(1.0 - ab)
    if np.ndim(escala) == 1 and ndim == 2:
        escala = escala[:, None]
    return escala


@dataclass
class NoiseBatch:
    """Lote de regresión de ruido: entradas (x_t, t) y objetivo ε_0 (o ε̂_pre)."""
    x_t: np.ndarray
    t: np.ndarray
    target: np.ndarray
    x0: np.ndarray | None = None

    def __len__(self):
        return len(self.t)


@dataclass
class GradWorkspace:
    """Acumulador de gradiente alineado con theta y estadísticas del lote."""
    grad: np.ndarray
    loss: float = 0.0
    batch_size: int = 0

    @classmethod
    def for_net(cls, net: ScoreNet) -> "GradWorkspace":
        return cls(grad=np.zeros(net.param_count))

    def zero(self) -> None:
        self.grad[...] = 0.0
        self.loss = 0.0
        self.batch_size = 0


def batch_loss_and_grad(net: ScoreNet, batch: NoiseBatch, sched, weight: float = 1.0,
                        workspace: GradWorkspace = None) -> tuple[float, np.ndarray]:
    """weight · media_j ‖ε̂_θ(x_t, t) - ε_0‖² y su gradiente exacto."""
    return weighted_loss_and_grad(net, [batch], [weight], sched, workspace)


def weighted_loss_and_grad(net: ScoreNet, batches, weights, sched,
                           workspace: GradWorkspace = None) -> tuple[float, np.ndarray]:
    """Σ_k w_k · media_{j∈k} ‖ε̂_θ - objetivo‖² en un solo forward/backward.

    Los lotes se concatenan y cada muestra lleva el peso w_k/n_k de su lote.
    """
    lotes = [(b, w) for b, w in zip(batches, weights) if len(b) > 0]
    if not lotes:
        raise ValueError("Se requiere al menos un lote no vacío")
    x = np.concatenate([b.x_t for b, _ in lotes])
    t = np.concatenate([np.asarray(b.t) for b, _ in lotes])
    objetivo = np.concatenate([b.target for b, _ in lotes])
    escala = np.concatenate([np.full(len(b), w / len(b)) for b, w in lotes])

    salida, memoria = net.forward(x, t, sched.T)
    residuo = salida - objetivo
    loss = float(np.sum(escala * (residuo ** 2).sum(axis=1)))
    grad = net.backward(memoria, 2.0 * escala[:, None] * residuo)

    if workspace is not None:
        workspace.grad += grad
        workspace.loss += loss
        workspace.batch_size += len(t)
    return loss, grad


# ── Optimizador ───────────────────────────────────────────────────────────────

@dataclass
class AdamState:
    """Momentos de primer y segundo orden alineados con theta."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_net(cls, net: ScoreNet) -> "AdamState":
        return cls(m=np.zeros(net.param_count), v=np.zeros(net.param_count))


def optimizer_step(net: ScoreNet, grad: np.ndarray, state: AdamState, eta_p: float,
                   beta1: float = 0.9, beta2: float = 0.999, weight_decay: float = 0.0,
                   eps: float = _EPS_NUM) -> tuple[ScoreNet, AdamState]:
    """Adam con decaimiento desacoplado. Modifica ``net`` y ``state`` in-place y los retorna.

    θ ← θ - η_p·(m̂/(√v̂ + ε) + weight_decay·θ)
    """
    if state.m.shape != net.theta.shape:
        raise ValueError("El estado del optimizador no está alineado con theta")
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    net.theta -= eta_p * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * net.theta)
    return net, state


# ── Checkpoints ───────────────────────────────────────────────────────────────

def save_checkpoint(net: ScoreNet, path, metadata: dict | None = None) -> Path:
    """Texto: una línea de cabecera JSON y luego θ en orden, 17 dígitos significativos."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cabecera = {"red": net.config(), "metadata": metadata or {}}
    np.savetxt(path, net.theta, fmt="%.17g", header=json.dumps(cabecera, sort_keys=True),
               comments="# ")
    logger.info("Checkpoint guardado en %s (%d parámetros)", path, net.param_count)
    return path


def load_checkpoint(path) -> tuple[ScoreNet, dict]:
    """Lee un checkpoint y retorna (red, metadata)."""
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"No existe el checkpoint: {path}")
    with open(path, "r", encoding="utf-8") as f:
        primera = f.readline()
    cabecera = json.loads(primera.lstrip("#").strip())
    theta = np.loadtxt(path, ndmin=1)
    red = cabecera["red"]
    net = ScoreNet(
        input_dim=red["input_dim"],
        hidden_dims=tuple(red["hidden_dims"]),
        time_embed_dim=red["time_embed_dim"],
        activation=red["activation"],
        seed=red["seed"],
        theta=theta,
    )
    logger.info("Checkpoint cargado desde %s", path)
    return net, cabecera.get("metadata", {})
