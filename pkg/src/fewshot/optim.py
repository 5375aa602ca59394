"""Named parameter sets and the Adam / RAdam / SGD update rules."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class OptimizerConfig:
    kind: str = "adam"          # adam | radam | sgd
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("adam", "radam", "sgd"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1/beta2 must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")


class ParamSet:
    """Named parameter tensors plus per-parameter moment buffers.

    The step counter is shared by all parameters of the set.
    """

    def __init__(self, params=None):
        self.params = {}           # name -> Tensor(requires_grad=True)
        self.m = {}                # first moments
        self.v = {}                # second moments
        self.t = 0
        if params:
            for name, value in params.items():
                self.add(name, value)

    def add(self, name, value):
        t = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True)
        t.requires_grad = True
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def values_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_values(self, values):
        for name, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if name in self.params:
                if self.params[name].data.shape != arr.shape:
                    raise ShapeError(f"checkpoint shape mismatch for {name!r}")
                self.params[name].data = arr.copy()
            else:
                self.add(name, arr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def checksum(self):
        """Order-independent fingerprint of the raw parameter bytes."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


def backward(loss, params):
    """Run reverse-mode on a scalar loss; return {name: gradient array}.

    Parameters not reachable from the loss get zero gradients.
    """
    params.zero_grad()
    loss.backward()
    grads = {}
    for name, p in params.params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads


def _check_grads(params, grads):
    for name, p in params.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != p.data.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.data.shape} for {name!r}")


def adam_step(params, grads, cfg):
    """Bias-corrected Adam; weight decay enters as an L2 gradient term."""
    _check_grads(params, grads)
    params.t += 1
    t = params.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p.data)), dtype=np.float64)
        if cfg.weight_decay > 0:
            g = g + cfg.weight_decay * p.data
        params.m[name] = cfg.beta1 * params.m[name] + (1 - cfg.beta1) * g
        params.v[name] = cfg.beta2 * params.v[name] + (1 - cfg.beta2) * g * g
        m_hat = params.m[name] / bc1
        v_hat = params.v[name] / bc2
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return params


def rho_infinity(beta2):
    return 2.0 / (1.0 - beta2) - 1.0


def radam_step(params, grads, cfg):
    """Rectified Adam: momentum-only while the variance estimate is unreliable
    (rho_t <= 4), rectified adaptive step afterwards."""
    _check_grads(params, grads)
    params.t += 1
    t = params.t
    rho_inf = rho_infinity(cfg.beta2)
    b2t = cfg.beta2 ** t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - b2t
    if rho_t > 4.0:
        rect = np.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
    else:
        rect = None
    for name, p in params.params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p.data)), dtype=np.float64)
        if cfg.weight_decay > 0:
            g = g + cfg.weight_decay * p.data
        params.m[name] = cfg.beta1 * params.m[name] + (1 - cfg.beta1) * g
        params.v[name] = cfg.beta2 * params.v[name] + (1 - cfg.beta2) * g * g
        m_hat = params.m[name] / bc1
        if rect is None:
            p.data -= cfg.learning_rate * m_hat
        else:
            v_hat = params.v[name] / bc2
            p.data -= cfg.learning_rate * rect * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return params


def sgd_step(params, grads, cfg):
    _check_grads(params, grads)
    params.t += 1
    for name, p in params.params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p.data)), dtype=np.float64)
        if cfg.weight_decay > 0:
            g = g + cfg.weight_decay * p.data
        p.data -= cfg.learning_rate * g
    return params


_STEPS = {"adam": adam_step, "radam": radam_step, "sgd": sgd_step}


def optimizer_step(params, grads, cfg):
    return _STEPS[cfg.kind](params, grads, cfg)
