"""
Instrumentation for the training-memory contract: solvers and adjoint hooks
register every feature-sized tensor they keep alive, and an active
``BufferCounter`` records the peak number of such tensors alive at once.
"""

import weakref
from contextlib import contextmanager
from functools import partial
from typing import Dict, Iterator, List

import torch

_ACTIVE: List["BufferCounter"] = []


class BufferCounter:
    def __init__(self):
        self.live = 0
        self.peak = 0
        self.total = 0
        self._refs: Dict[int, weakref.ref] = {}

    def retain(self, tensor: torch.Tensor) -> None:
        key = id(tensor)
        if key in self._refs:
            return
        self._refs[key] = weakref.ref(tensor, partial(self._release, key))
        self.live += 1
        self.total += 1
        self.peak = max(self.peak, self.live)

    def _release(self, key: int, _ref) -> None:
        if self._refs.pop(key, None) is not None:
            self.live -= 1


@contextmanager
def track_buffers() -> Iterator[BufferCounter]:
    counter = BufferCounter()
    _ACTIVE.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE.remove(counter)


def retain(tensor: torch.Tensor) -> torch.Tensor:
    for counter in _ACTIVE:
        counter.retain(tensor)
    return tensor
