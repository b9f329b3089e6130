"""Named parameter sets with Adam state, dense-layer helpers."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class Param:
    """One named tensor with its gradient buffer and Adam moments.

    `group` selects the learning rate ("policy" or "value") when the
    optimizer runs with split rates.
    """

    __slots__ = ("value", "grad", "m", "v", "step", "group")

    def __init__(self, value: np.ndarray, group: str = "policy"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0
        self.group = group


class ParamSet:
    """Ordered mapping name -> Param for one network."""

    def __init__(self):
        self.params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray, group: str = "policy") -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = Param(value, group=group)

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params.keys())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad[...] = 0.0

    def tensors(self) -> dict[str, ad.Tensor]:
        """Fresh tape leaves sharing the underlying parameter arrays."""
        return {k: ad.Tensor(p.value, requires_grad=True) for k, p in self.params.items()}

    def n_values(self) -> int:
        return sum(p.value.size for p in self.params.values())


def collect_grads(ps: ParamSet, leaves: dict[str, ad.Tensor]) -> None:
    """Move gradients from tape leaves into the ParamSet buffers (accumulating)."""
    for name, t in leaves.items():
        if t.grad is not None:
            ps[name].grad += t.grad


def clone_params(src: ParamSet) -> ParamSet:
    """Deep copy of the values; optimizer moments and step counts start fresh."""
    dst = ParamSet()
    for name, p in src.params.items():
        dst.add(name, p.value.copy(), group=p.group)
    return dst


def adam_update(ps: ParamSet, lr: float | dict[str, float],
                betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam step with bias correction; moments persist on the Params.

    `lr` may be a single float or a mapping from param group name to rate.
    """
    b1, b2 = betas
    for p in ps.params.values():
        g = p.grad
        if not np.isfinite(g.sum()):
            raise FloatingPointError("non-finite gradient in adam_update")
        rate = lr[p.group] if isinstance(lr, dict) else lr
        p.step += 1
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        mhat = p.m / (1.0 - b1 ** p.step)
        vhat = p.v / (1.0 - b2 ** p.step)
        p.value -= rate * mhat / (np.sqrt(vhat) + eps)


def dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Weight init: centered Gaussian scaled by 1/sqrt(fan_in)."""
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def add_dense(ps: ParamSet, rng: np.random.Generator, name: str,
              fan_in: int, fan_out: int, group: str = "policy") -> None:
    ps.add(f"{name}.w", dense_init(rng, fan_in, fan_out), group=group)
    ps.add(f"{name}.b", np.zeros(fan_out), group=group)


def dense(leaves: dict[str, ad.Tensor], name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, leaves[f"{name}.w"]), leaves[f"{name}.b"])


def mlp_forward(leaves: dict[str, ad.Tensor], layer_names: list[str], x) -> ad.Tensor:
    """Affine + tanh hidden layers, linear final layer."""
    h = x if isinstance(x, ad.Tensor) else ad.constant(x)
    for name in layer_names[:-1]:
        h = ad.tanh(dense(leaves, name, h))
    return dense(leaves, layer_names[-1], h)
