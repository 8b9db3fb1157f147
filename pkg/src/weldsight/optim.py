"""First-order optimizers: SGD, Adam, RMSprop, with exponential LR decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimizerError(Exception):
    pass


class NonFiniteGradientError(OptimizerError):
    """A gradient contained NaN or infinity; the step was not applied."""


@dataclass(frozen=True)
class ExponentialDecay:
    """Geometric interpolation of the learning rate from start to end.

    The rate at step t is start * (end/start)**(t/steps); past the step
    budget it stays clamped at `end`.
    """

    start: float
    end: float
    steps: int

    def __post_init__(self):
        if not (self.start > self.end > 0):
            raise OptimizerError(
                f"exponential decay requires start > end > 0, got {self.start}, {self.end}"
            )
        if self.steps < 1:
            raise OptimizerError(f"decay step budget must be >= 1, got {self.steps}")

    def rate_at(self, step):
        frac = min(step, self.steps) / self.steps
        return self.start * (self.end / self.start) ** frac


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.01
    decay: ExponentialDecay | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "rmsprop"):
            raise OptimizerError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise OptimizerError(f"learning rate must be positive, got {self.learning_rate}")

    def rate_at(self, step):
        if self.decay is not None:
            return self.decay.rate_at(step)
        return self.learning_rate


@dataclass
class OptimizerState:
    step: int = 0
    slots: dict = field(default_factory=dict)

    def slot(self, name, like):
        if name not in self.slots:
            self.slots[name] = {}
        per = self.slots[name]
        for key in ("m", "v"):
            if key not in per:
                per[key] = np.zeros_like(like)
        return per


def optimizer_step(parameters, gradients, config, state):
    """Apply one update to every parameter in place.

    `parameters` and `gradients` are name-keyed arrays of matching shapes.
    Gradients are validated before anything mutates, so a non-finite
    gradient leaves all parameters untouched.
    """
    for name, grad in gradients.items():
        if name not in parameters:
            raise OptimizerError(f"gradient for unknown parameter {name!r}")
        if np.asarray(grad).shape != np.asarray(parameters[name]).shape:
            raise OptimizerError(f"shape mismatch for parameter {name!r}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    lr = config.rate_at(state.step)
    for name, param in parameters.items():
        if name not in gradients:
            continue
        g = np.asarray(gradients[name], dtype=np.float64)
        if config.weight_decay:
            g = g + config.weight_decay * param
        if config.kind == "sgd":
            param -= lr * g
        elif config.kind == "adam":
            per = state.slot(name, param)
            per["m"] = config.beta1 * per["m"] + (1 - config.beta1) * g
            per["v"] = config.beta2 * per["v"] + (1 - config.beta2) * g * g
            t = state.step + 1
            mhat = per["m"] / (1 - config.beta1 ** t)
            vhat = per["v"] / (1 - config.beta2 ** t)
            param -= lr * mhat / (np.sqrt(vhat) + config.epsilon)
        else:  # rmsprop
            per = state.slot(name, param)
            per["v"] = config.rho * per["v"] + (1 - config.rho) * g * g
            param -= lr * g / (np.sqrt(per["v"]) + config.epsilon)
    state.step += 1
    return parameters, state
