"""
Reverse-mode differentiation tape.

A ``Tape`` records every primitive application in execution order, so its
entries are already topologically sorted. ``backward`` walks the entries in
reverse, accumulating adjoints per node, and can mask the adjoint of chosen
nodes as they are reached; masking the feature node is how partial
back-propagation is done in a single pass.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import ContractError, ShapeError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array, optionally bound to a node of a ``Tape``."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Optional["Tape"] = None, node_id: Optional[int] = None):
        array = np.asarray(data, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        if any(extent < 1 for extent in array.shape):
            raise ShapeError(f"tensor extents must be >= 1, got {array.shape}")
        self.data = array
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_recorded(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        where = f", node={self.node_id}" if self.is_recorded else ""
        return f"Tensor(shape={self.shape}{where})"


@dataclass(frozen=True)
class TapeEntry:
    """One recorded primitive application."""
    op: str
    inputs: Tuple[Optional[int], ...]
    output: int
    backward: BackwardFn
    # relu sign masks / maxpool argmax indices: which smooth piece was taken
    branch: Optional[np.ndarray] = None


class Tape:
    """Ordered record of a forward computation."""

    def __init__(self):
        self._values: List[np.ndarray] = []
        self._names: Dict[str, int] = {}
        self._entries: List[TapeEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> Sequence[TapeEntry]:
        return tuple(self._entries)

    @property
    def node_count(self) -> int:
        return len(self._values)

    def _new_node(self, value: np.ndarray, name: Optional[str]) -> int:
        node_id = len(self._values)
        self._values.append(value)
        if name is not None:
            if name in self._names:
                raise ContractError(f"node name {name!r} already used on this tape")
            self._names[name] = node_id
        return node_id

    def variable(self, data, name: Optional[str] = None) -> Tensor:
        """Register a leaf value (input image or parameter)."""
        tensor = Tensor(data)
        tensor.tape = self
        tensor.node_id = self._new_node(tensor.data, name)
        return tensor

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: np.ndarray,
        backward: BackwardFn,
        branch: Optional[np.ndarray] = None,
        name: Optional[str] = None,
    ) -> Tensor:
        result = Tensor(output)
        result.tape = self
        result.node_id = self._new_node(result.data, name)
        input_ids = tuple(t.node_id if t.tape is self else None for t in inputs)
        self._entries.append(TapeEntry(op, input_ids, result.node_id, backward, branch))
        return result

    def name_node(self, tensor: Tensor, name: str) -> None:
        """Designate an already recorded node under ``name`` for later queries."""
        if tensor.tape is not self:
            raise ContractError("tensor is not recorded on this tape")
        if name in self._names:
            raise ContractError(f"node name {name!r} already used on this tape")
        self._names[name] = tensor.node_id

    def node(self, name: str) -> Tensor:
        if name not in self._names:
            raise ContractError(f"no node named {name!r} on this tape")
        node_id = self._names[name]
        return Tensor(self._values[node_id], self, node_id)

    def value(self, node: Union[Tensor, int]) -> np.ndarray:
        return self._values[_node_id(node)]

    def branch_signature(self) -> Tuple[bytes, ...]:
        """Bytes of every recorded branch choice; equal signatures mean the same smooth piece."""
        return tuple(entry.branch.tobytes() for entry in self._entries if entry.branch is not None)


def _node_id(node: Union[Tensor, int]) -> int:
    return node.node_id if isinstance(node, Tensor) else int(node)


class GradientSet(Mapping[int, np.ndarray]):
    """Adjoints keyed by node id; unreached nodes have zero gradient."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, node: Union[Tensor, int]) -> np.ndarray:
        node_id = _node_id(node)
        if not 0 <= node_id < self._tape.node_count:
            raise KeyError(node_id)
        grad = self._grads.get(node_id)
        if grad is None:
            return np.zeros_like(self._tape.value(node_id))
        return grad

    def __iter__(self) -> Iterator[int]:
        return iter(range(self._tape.node_count))

    def __len__(self) -> int:
        return self._tape.node_count

    def reached(self, node: Union[Tensor, int]) -> bool:
        return _node_id(node) in self._grads


def backward(
    tape: Tape,
    output: Tensor,
    seed: Optional[np.ndarray] = None,
    adjoint_masks: Optional[Mapping[Union[Tensor, int], np.ndarray]] = None,
) -> GradientSet:
    """
    Reverse accumulation from ``output``.

    Args:
        tape: The tape ``output`` was recorded on.
        output: Node to differentiate. Without ``seed`` it must hold one element.
        seed: Adjoint of ``output``; defaults to 1.
        adjoint_masks: Node -> array multiplied into that node's adjoint once all
            of its consumers have contributed, before it propagates further.

    Returns:
        GradientSet with d(output . seed)/d(node) for every node.
    """
    if output.tape is not tape:
        raise ContractError("output tensor is not recorded on this tape")
    if seed is None:
        if output.size != 1:
            raise ContractError(
                f"backward without an explicit seed needs a scalar output, got shape {output.shape}"
            )
        seed_array = np.ones(output.shape, dtype=np.float64)
    else:
        seed_array = np.array(seed, dtype=np.float64).reshape(np.shape(seed))
        if seed_array.shape != output.shape:
            raise ShapeError(f"seed shape {seed_array.shape} does not match output shape {output.shape}")

    masks: Dict[int, np.ndarray] = {}
    for node, mask in (adjoint_masks or {}).items():
        node_id = _node_id(node)
        mask_array = np.asarray(mask, dtype=np.float64)
        if mask_array.shape != tape.value(node_id).shape:
            raise ShapeError(
                f"adjoint mask shape {mask_array.shape} does not match node shape {tape.value(node_id).shape}"
            )
        masks[node_id] = mask_array

    grads: Dict[int, np.ndarray] = {output.node_id: seed_array}
    if output.node_id in masks:
        grads[output.node_id] = seed_array * masks.pop(output.node_id)

    for entry in reversed(tape.entries):
        if entry.output > output.node_id:
            continue
        grad = grads.get(entry.output)
        if grad is None:
            continue
        if entry.output in masks:
            grad = grad * masks.pop(entry.output)
            grads[entry.output] = grad
        for node_id, input_grad in zip(entry.inputs, entry.backward(grad)):
            if node_id is None or input_grad is None:
                continue
            if input_grad.shape != tape.value(node_id).shape:
                raise ShapeError(f"{entry.op} produced a gradient of shape {input_grad.shape} for node {node_id}")
            if node_id in grads:
                grads[node_id] = grads[node_id] + input_grad
            else:
                grads[node_id] = input_grad

    # remaining masks belong to leaves
    for node_id, mask in masks.items():
        if node_id in grads:
            grads[node_id] = grads[node_id] * mask
    return GradientSet(tape, grads)
