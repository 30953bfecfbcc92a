"""Named parameter storage with Adam optimizer state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamEntry:
    weight: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray


@dataclass
class ParamStore:
    """Ordered map of named float32 tensors plus Adam moments.

    Insertion order is the iteration order, so two stores built the same
    way are indistinguishable, including serialization.
    """

    entries: dict[str, ParamEntry] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, weight: np.ndarray) -> None:
        if name in self.entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        w = np.asarray(weight, dtype=np.float32)
        self.entries[name] = ParamEntry(w, np.zeros_like(w), np.zeros_like(w))

    def names(self) -> list[str]:
        return list(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].weight

    def copy(self) -> "ParamStore":
        out = ParamStore(step_count=self.step_count)
        for name, e in self.entries.items():
            out.entries[name] = ParamEntry(e.weight.copy(), e.adam_m.copy(), e.adam_v.copy())
        return out


def count_parameters(store: ParamStore) -> int:
    """Total element count of all weight tensors (Adam state excluded)."""
    return sum(e.weight.size for e in store.entries.values())


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place; increments step_count.

    grads must carry exactly the store's parameter names.
    """
    missing = [n for n in store.entries if n not in grads]
    extra = [n for n in grads if n not in store.entries]
    if missing or extra:
        raise ValueError(f"adam_step key mismatch: missing={missing}, extra={extra}")
    t = store.step_count + 1
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name, entry in store.entries.items():
        g = grads[name].astype(np.float32, copy=False)
        if g.shape != entry.weight.shape:
            raise ValueError(
                f"adam_step shape mismatch for {name!r}: grad {g.shape} vs weight {entry.weight.shape}"
            )
        entry.adam_m *= beta1
        entry.adam_m += (1.0 - beta1) * g
        entry.adam_v *= beta2
        entry.adam_v += (1.0 - beta2) * (g * g)
        m_hat = entry.adam_m / corr1
        v_hat = entry.adam_v / corr2
        entry.weight -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    store.step_count = t
