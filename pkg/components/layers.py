"""
Parameterized building blocks on top of the tensor core. Each layer reports
its learnable parameters by name and its FLOPs for a given input length
(one multiply-accumulate = 2 FLOPs).
"""
from typing import Dict, List, Tuple

import numpy as np

from utils.tensor import Tensor, conv1d_temporal, matmul, parameter, same_padding


def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of named parameters and named child modules."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        tensor = parameter(data, name=name)
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        named = []
        for name, tensor in self._params.items():
            named.append((f"{prefix}{name}", tensor))
        for name, child in self._children.items():
            named.extend(child.named_parameters(f"{prefix}{name}."))
        return named

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def num_params(self) -> int:
        return sum(tensor.size for tensor in self.parameters())


class Linear(Module):
    """Fully connected layer, x [B x in] @ W [in x out] + b."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param("weight", fan_in_uniform(rng, (in_features, out_features), in_features))
        self.bias = self.add_param("bias", np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out

    def flops(self) -> int:
        return 2 * self.in_features * self.out_features


class TemporalConv(Module):
    """1-D convolution along time with same padding; weight [K x Cin/groups x Cout]."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, groups: int = 1, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.groups = groups
        fan_in = kernel_size * in_channels // groups
        self.weight = self.add_param(
            "weight", fan_in_uniform(rng, (kernel_size, in_channels // groups, out_channels), fan_in))
        self.bias = self.add_param("bias", np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv1d_temporal(x, self.weight, stride=self.stride, groups=self.groups, bias=self.bias)

    def output_length(self, steps: int) -> int:
        return same_padding(steps, self.kernel_size, self.stride)[0]

    def flops(self, steps: int) -> Tuple[int, int]:
        """Return (FLOPs, output length) for an input of `steps` frames."""
        t_out = self.output_length(steps)
        macs = self.kernel_size * self.in_channels * self.out_channels * t_out // self.groups
        return 2 * macs, t_out
