"""Parameter collections and thin layer wrappers over the primitives."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ConfigurationError
from ..prng import Prng
from . import ops
from .tensor import Parameter, Tensor, grad_enabled


class ParamStore:
    """Named parameters and norm statistics for one model.

    Initial values are drawn in creation order from a splitmix64 stream, so a
    (seed, architecture) pair always yields the same weights.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.params: dict[str, Parameter] = {}
        self.norm_states: dict[str, ops.NormState] = {}
        self.rng = Prng(seed)
        self.dtype = np.dtype(dtype)
        self.training = True
        # False: norm layers keep per-sample statistics outside training too
        self.running_stats_in_eval = True

    def create(self, name: str, shape, init="uniform", fan_in: int | None = None, trainable: bool = True) -> Parameter:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape))
        if isinstance(init, np.ndarray):
            data = init.reshape(shape)
        elif init == "uniform":
            bound = 1.0 / math.sqrt(fan_in if fan_in else shape[-1])
            data = self.rng.uniform(-bound, bound, size).reshape(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        p = Parameter(name, np.ascontiguousarray(data, dtype=self.dtype), trainable=trainable)
        self.params[name] = p
        return p

    def norm_state(self, name: str, channels: int) -> ops.NormState:
        if name in self.norm_states:
            raise ConfigurationError(f"duplicate norm state {name!r}")
        st = ops.NormState.create(channels, self.dtype)
        self.norm_states[name] = st
        return st

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def with_prefix(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for p in self.with_prefix(prefix):
            p.set_trainable(flag)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.params.items()}
        for n, st in self.norm_states.items():
            out[f"{n}.running_mean"] = st.running_mean
            out[f"{n}.running_var"] = st.running_var
        return out

    def snapshot_norm_stats(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return {n: (st.running_mean.copy(), st.running_var.copy()) for n, st in self.norm_states.items()}

    def restore_norm_stats(self, snap: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
        for n, (mean, var) in snap.items():
            self.norm_states[n].running_mean[:] = mean
            self.norm_states[n].running_var[:] = var

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from ..errors import CheckpointError

        expected = set(self.state_dict())
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)[:5]
            extra = sorted(got - expected)[:5]
            raise CheckpointError(f"checkpoint names do not match model: missing {missing}, unexpected {extra}")
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise CheckpointError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.ascontiguousarray(state[n], dtype=self.dtype)
        for n, st in self.norm_states.items():
            st.running_mean[:] = state[f"{n}.running_mean"]
            st.running_var[:] = state[f"{n}.running_var"]


class Conv2d:
    def __init__(self, store, name, c_in, c_out, k=3, stride=1, pad=None, bias=True, padding_mode="zeros"):
        fan_in = c_in * k * k
        self.weight = store.create(f"{name}.weight", (c_out, c_in, k, k), fan_in=fan_in)
        self.bias = store.create(f"{name}.bias", (c_out,), fan_in=fan_in) if bias else None
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.padding_mode = padding_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.padding_mode)


class Linear:
    def __init__(self, store, name, c_in, c_out, bias=True):
        self.weight = store.create(f"{name}.weight", (c_in, c_out), fan_in=c_in)
        self.bias = store.create(f"{name}.bias", (c_out,), fan_in=c_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.store = store
        self.gamma = store.create(f"{name}.gamma", (channels,), init="ones")
        self.beta = store.create(f"{name}.beta", (channels,), init="zeros")
        self.state = store.norm_state(name, channels)

    def __call__(self, x: Tensor) -> Tensor:
        training = self.store.training
        use_batch_stats = training or not self.store.running_stats_in_eval
        return ops.batch_norm(x, self.gamma, self.beta, self.state, use_batch_stats, training and grad_enabled())


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.gamma = store.create(f"{name}.gamma", (channels,), init="ones")
        self.beta = store.create(f"{name}.beta", (channels,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class ConvNormAct:
    """conv (no bias: the norm would cancel it) -> batch norm -> activation."""

    def __init__(self, store, name, c_in, c_out, k=3, stride=1, act="gelu", padding_mode="zeros"):
        self.conv = Conv2d(store, f"{name}.conv", c_in, c_out, k, stride, padding_mode=padding_mode, bias=False)
        self.norm = BatchNorm(store, f"{name}.bn", c_out)
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return ops.activation(self.act, self.norm(self.conv(x)))
