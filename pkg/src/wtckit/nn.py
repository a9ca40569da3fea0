"""Dense networks and the Adam optimizer shared by all trainers."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_ACTIVATIONS = ("relu", "none")


@dataclass
class DenseLayer:
    weight: Tensor            # (fan_in, fan_out)
    bias: Tensor              # (fan_out,)
    activation: str


class DenseNet:
    """A stack of affine layers with optional ReLU activations.

    Parameter names are stable ("0.weight", "0.bias", ...) so checkpoints
    round-trip by name.
    """

    def __init__(self, layers):
        for i, layer in enumerate(layers[:-1]):
            nxt = layers[i + 1]
            if layer.weight.shape[1] != nxt.weight.shape[0]:
                raise ad.ShapeError(
                    f"layer {i} fan-out {layer.weight.shape[1]} does not chain "
                    f"into layer {i + 1} fan-in {nxt.weight.shape[0]}")
        self.layers = list(layers)

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{i}.weight", layer.weight))
            out.append((f"{i}.bias", layer.bias))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def forward(self, x):
        """Graph-recorded forward pass; x is (B, in_dim)."""
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ad.ShapeError(f"expected input (B, {self.in_dim}), got {x.shape}")
        h = x
        for layer in self.layers:
            h = ad.affine(h, layer.weight, layer.bias)
            if layer.activation == "relu":
                h = ad.relu(h)
        return h

    def forward_numpy(self, x):
        """Plain-array forward pass for evaluation; no tape, same arithmetic."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = h @ layer.weight.data + layer.bias.data
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def load_state(self, state):
        """Overwrite parameters in place from a {name: array} mapping."""
        for name, p in self.named_parameters():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ad.ShapeError(f"parameter '{name}' shape {arr.shape} "
                                    f"does not match {p.shape}")
            p.data = arr.copy()


def init_dense_net(layer_sizes, activations, rng):
    """Build a DenseNet with Kaiming-uniform weights and zero biases.

    Weights are uniform in +-sqrt(6 / fan_in), the ReLU-stack convention.
    Deterministic given the rng state.
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least one layer (two sizes)")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError("layer sizes must be positive")
    if len(activations) != len(layer_sizes) - 1:
        raise ValueError("one activation per layer required")
    for act in activations:
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation '{act}'")
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes, layer_sizes[1:], activations):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(DenseLayer(weight=ad.constant(w),
                                 bias=ad.constant(np.zeros(fan_out)),
                                 activation=act))
    return DenseNet(layers)


class Adam:
    """Adam with bias correction; one instance per parameter set.

    Hyperparameter defaults follow the shared optimizer settings used
    everywhere in this package: lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self._scratch = [np.zeros(p.shape) for p in self.params]

    def step(self, grads):
        """One update; `grads` maps each parameter tensor to its gradient."""
        gs = []
        for p in self.params:
            g = grads[p]
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ad.ShapeError(f"gradient shape {g.shape} != param {p.shape}")
            if not np.isfinite(g.sum()):
                raise ad.NonFiniteError("non-finite gradient in adam step")
            gs.append(g)
        self.t += 1
        scale = self.lr / (1.0 - self.beta1 ** self.t)
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v, buf in zip(self.params, gs, self.m, self.v,
                                   self._scratch):
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v += buf
            np.divide(v, bc2, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= scale
            p.data = p.data - buf


def adam_step(opt, grads):
    """Functional alias: apply one Adam update through `opt`."""
    opt.step(grads)
    return opt


def clip_parameters(net, bound):
    """Clamp every parameter of `net` to [-bound, bound] in place."""
    if bound <= 0:
        raise ValueError("clip bound must be positive")
    for p in net.parameters():
        p.data = np.clip(p.data, -bound, bound)
