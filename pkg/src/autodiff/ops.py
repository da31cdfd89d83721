"""
Differentiable primitives.

Each primitive computes its forward value with numpy and, when any input is
recorded on a tape, records the application together with a closure mapping
the output adjoint to input adjoints. Untracked inputs give plain tensors, which
keeps tape-free evaluation (finite differences, accuracy) cheap.

Convolution is a 2x2 cross-correlation with one row/column of zero padding on
the bottom/right edges, so spatial extent is preserved.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .tape import BackwardFn, Tape, Tensor
from ..utils.errors import ContractError, ShapeError

KERNEL_SIZE = 2
POINTWISE_FUNCTIONS = ("relu", "tanh", "sigmoid")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _common_tape(inputs: Sequence[Tensor]) -> Optional[Tape]:
    tape = None
    for tensor in inputs:
        if tensor.tape is None:
            continue
        if tape is None:
            tape = tensor.tape
        elif tensor.tape is not tape:
            raise ContractError("inputs are recorded on different tapes")
    return tape


def _emit(op: str, inputs: Sequence[Tensor], output: np.ndarray, backward_fn: BackwardFn,
          branch: Optional[np.ndarray] = None) -> Tensor:
    tape = _common_tape(inputs)
    if tape is None:
        return Tensor(output)
    return tape.record(op, inputs, output, backward_fn, branch)


# Convolution

def _patches(x: np.ndarray) -> np.ndarray:
    """[C, H, W] -> [C, 2, 2, H, W] shifted views of the bottom/right padded input."""
    _, height, width = x.shape
    padded = np.pad(x, ((0, 0), (0, 1), (0, 1)))
    return np.stack(
        [np.stack([padded[:, di:di + height, dj:dj + width] for dj in range(KERNEL_SIZE)], axis=1)
         for di in range(KERNEL_SIZE)],
        axis=1,
    )


def _check_conv_shapes(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> None:
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [C, H, W], got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise ShapeError(f"conv2d kernel must be [C_out, C_in, 2, 2], got {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[0]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")


def conv2d_backward_input(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of the convolution with respect to its input."""
    out_channels, in_channels = kernel.shape[:2]
    _, height, width = grad.shape
    d_patches = (kernel.reshape(out_channels, -1).T @ grad.reshape(out_channels, -1)).reshape(
        in_channels, KERNEL_SIZE, KERNEL_SIZE, height, width
    )
    d_padded = np.zeros((in_channels, height + 1, width + 1))
    for di in range(KERNEL_SIZE):
        for dj in range(KERNEL_SIZE):
            d_padded[:, di:di + height, dj:dj + width] += d_patches[:, di, dj]
    return d_padded[:, :height, :width]


def conv2d(x, kernel, bias) -> Tensor:
    """2x2 cross-correlation, stride 1, output spatial size equal to input."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    _check_conv_shapes(x.data, kernel.data, bias.data)
    out_channels = kernel.shape[0]
    _, height, width = x.shape
    patches = _patches(x.data)
    flat_patches = patches.reshape(-1, height * width)
    flat_kernel = kernel.data.reshape(out_channels, -1)
    output = (flat_kernel @ flat_patches).reshape(out_channels, height, width) + bias.data[:, None, None]

    def backward_fn(grad: np.ndarray):
        flat_grad = grad.reshape(out_channels, -1)
        d_kernel = (flat_grad @ flat_patches.T).reshape(kernel.shape)
        return conv2d_backward_input(grad, kernel.data), d_kernel, grad.sum(axis=(1, 2))

    return _emit("conv2d", (x, kernel, bias), output, backward_fn)


# Pooling

def _windows(x: np.ndarray) -> np.ndarray:
    channels, height, width = x.shape
    return x.reshape(channels, height // 2, 2, width // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        channels, height // 2, width // 2, 4
    )


def maxpool2(x) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties resolve to the first position in row-major order."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2 input must be [C, H, W], got {x.shape}")
    channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {height}x{width}")
    windows = _windows(x.data)
    argmax = windows.argmax(axis=-1)
    output = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(grad: np.ndarray):
        d_windows = np.zeros_like(windows)
        np.put_along_axis(d_windows, argmax[..., None], grad[..., None], axis=-1)
        d_x = d_windows.reshape(channels, height // 2, width // 2, 2, 2).transpose(0, 1, 3, 2, 4)
        return (d_x.reshape(channels, height, width),)

    return _emit("maxpool2", (x,), output, backward_fn, branch=argmax)


# Pointwise nonlinearities

def pointwise(x, fn: str) -> Tensor:
    """Elementwise relu, tanh or sigmoid."""
    x = as_tensor(x)
    if fn == "relu":
        active = x.data >= 0.0
        output = np.where(active, x.data, 0.0)

        def backward_fn(grad: np.ndarray):
            return (grad * active,)

        return _emit("relu", (x,), output, backward_fn, branch=active)
    if fn == "tanh":
        output = np.tanh(x.data)

        def backward_fn(grad: np.ndarray):
            return (grad * (1.0 - output ** 2),)

        return _emit("tanh", (x,), output, backward_fn)
    if fn == "sigmoid":
        output = expit(x.data)

        def backward_fn(grad: np.ndarray):
            return (grad * output * (1.0 - output),)

        return _emit("sigmoid", (x,), output, backward_fn)
    raise ContractError(f"unknown pointwise function {fn!r}; expected one of {POINTWISE_FUNCTIONS}")


def relu(x) -> Tensor:
    return pointwise(x, "relu")


def tanh(x) -> Tensor:
    return pointwise(x, "tanh")


def sigmoid(x) -> Tensor:
    return pointwise(x, "sigmoid")


# Fully connected

def affine(x, weight, bias) -> Tensor:
    """weight @ x + bias for a vector input."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 1 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(
            f"affine expects x[n], weight[m, n], bias[m]; got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ShapeError(f"affine dimension mismatch: x{x.shape}, weight{weight.shape}, bias{bias.shape}")
    output = weight.data @ x.data + bias.data

    def backward_fn(grad: np.ndarray):
        return weight.data.T @ grad, np.outer(grad, x.data), grad

    return _emit("affine", (x, weight, bias), output, backward_fn)


# Shape plumbing

def reshape(x, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        output = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {original} into {shape}") from e

    def backward_fn(grad: np.ndarray):
        return (grad.reshape(original),)

    return _emit("reshape", (x,), output, backward_fn)


def flatten(x) -> Tensor:
    """Row-major flatten to a vector."""
    x = as_tensor(x)
    return reshape(x, (x.size,))


def masked_blend(x, bits: np.ndarray, constants: np.ndarray) -> Tensor:
    """
    x where bits == 1, constants where bits == 0.

    Gradient flows only through retained positions; the constants are not
    differentiated.
    """
    x = as_tensor(x)
    bits = np.asarray(bits, dtype=np.float64)
    constants = np.asarray(constants, dtype=np.float64)
    if bits.shape != x.shape or constants.shape != x.shape:
        raise ShapeError(
            f"masked_blend needs bits and constants of shape {x.shape}, got {bits.shape} and {constants.shape}"
        )
    keep = bits > 0.5
    output = np.where(keep, x.data, constants)

    def backward_fn(grad: np.ndarray):
        return (grad * bits,)

    return _emit("masked_blend", (x,), output, backward_fn)
