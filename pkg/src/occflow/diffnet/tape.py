"""Minimal reverse-accumulation autodiff over dense numpy rasters.

A Tape records every executed op in order; backward() replays the records
in reverse exactly once, accumulating gradients into the participating
nodes. Single-tape execution is single-threaded and deterministic;
independent tapes can run concurrently.
"""

from __future__ import annotations

import numpy as np

__all__ = ["TensorNode", "Tape", "DiffError"]


class DiffError(ValueError):
    """Raised for shape/contract violations in differentiable ops."""


class TensorNode:
    """Value plus gradient slot; produced by a tape op or created as a leaf."""

    __slots__ = ("value", "grad", "requires_grad", "tape", "name")

    def __init__(self, value, tape, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"TensorNode(shape={self.value.shape}, name={self.name})"


class Tape:
    def __init__(self):
        self._records = []  # (output node, backward fn, input nodes)
        self.nodes = []

    def leaf(self, value, requires_grad=False, name=None) -> TensorNode:
        node = TensorNode(np.asarray(value), self, requires_grad, name)
        self.nodes.append(node)
        return node

    def output(self, value, name=None) -> TensorNode:
        node = TensorNode(value, self, False, name)
        self.nodes.append(node)
        return node

    def record(self, out: TensorNode, inputs, backward_fn):
        """backward_fn(grad_out) must accumulate into the input nodes.

        The output inherits requires_grad from its inputs so backward can
        skip branches that reach no trainable leaf.
        """
        inputs = tuple(inputs)
        out.requires_grad = any(n.requires_grad for n in inputs)
        self._records.append((out, inputs, backward_fn))

    def backward(self, root: TensorNode):
        """Reverse-order accumulation from a scalar root.

        requires_grad nodes not on any path to the root end with zero
        gradients.
        """
        if root.tape is not self:
            raise DiffError("root was not produced on this tape")
        if np.asarray(root.value).size != 1:
            raise DiffError(f"backward root must be scalar, got shape {root.value.shape}")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None or not out.requires_grad:
                continue
            backward_fn(out.grad)
        for node in self.nodes:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.value)

    def reset(self):
        self._records.clear()
        self.nodes.clear()
