"""Light parameter-container layer on top of the kernel set.

Just enough structure to give blocks named, hierarchically addressable
parameters for the weight archive; no training machinery.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

__all__ = ["Conv2d", "LayerNorm", "Module", "Parameter"]


class Parameter(Tensor):
    """A leaf tensor owned by a module.

    ``init`` names the seeding rule applied by ``init_weights``:
    ``"conv"`` draws uniform(-b, b) with b = sqrt(1/fan_in), ``"zero"``
    and ``"one"`` are constants.
    """

    __slots__ = ("init", "fan_in")

    def __init__(self, data, init: str = "zero", fan_in: int | None = None):
        super().__init__(data, requires_grad=True)
        self.init = init
        self.fan_in = fan_in


class Module:
    """Base class giving dotted parameter names via attribute registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, param in self._params.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        for _, param in self.named_parameters():
            yield param

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        """Copy of every parameter value, keyed by canonical name."""
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Strictly install ``state``; missing/unexpected/mis-shaped names are errors."""
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        if missing:
            raise ShapeError(f"missing parameter(s): {', '.join(missing)}")
        unexpected = sorted(set(state) - set(params))
        if unexpected:
            raise ShapeError(f"unexpected parameter(s): {', '.join(unexpected)}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.data.shape:
                raise ShapeError(
                    f"parameter {name}: archive shape {value.shape} does not match "
                    f"model shape {param.data.shape}"
                )
            param.data[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        dilation: int = 1,
        groups: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        super().__init__()
        if in_channels % groups != 0:
            raise ShapeError(
                f"Conv2d: in_channels {in_channels} not divisible by groups {groups}"
            )
        if out_channels % groups != 0:
            raise ShapeError(
                f"Conv2d: out_channels {out_channels} not divisible by groups {groups}"
            )
        cin_g = in_channels // groups
        self.weight = Parameter(
            np.zeros((out_channels, cin_g, kernel, kernel)),
            init="conv",
            fan_in=cin_g * kernel * kernel,
        )
        self.bias = Parameter(np.zeros(out_channels), init="zero") if bias else None
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "dilation", dilation)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "padding", padding)

    def conv_params(self) -> ops.ConvParams:
        return ops.ConvParams(
            weight=self.weight,
            bias=self.bias,
            stride=self.stride,
            dilation=self.dilation,
            groups=self.groups,
            padding=self.padding,
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.conv_params())


class LayerNorm(Module):
    """Per-instance normalization over the channel-spatial slice with affine."""

    def __init__(self, normalized_shape, eps: float = 1e-5):
        super().__init__()
        shape = tuple(int(s) for s in normalized_shape)
        self.gamma = Parameter(np.ones(shape), init="one")
        self.beta = Parameter(np.zeros(shape), init="zero")
        object.__setattr__(self, "eps", eps)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)
