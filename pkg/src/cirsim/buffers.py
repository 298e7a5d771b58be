"""Bounded rehearsal memories with three storage policies.

reservoir (rs): classic reservoir sampling over the item stream; after n >= M
    items every item has inclusion probability M/n, so the buffer mirrors the
    stream's class distribution.
class-balanced (cb): an equal quota per seen class, earliest-seen classes
    absorbing the remainder slots; per-class reservoir updates within quotas.
frequency-aware (fa): per-class quota proportional to the inverse of the
    class's observation count (experiences in which it appeared), so rarely
    repeating classes hold more of the buffer; unused capacity is refilled
    from the most frequently observed classes.

Buffers store instance indices into the source dataset; features are looked
up at replay time.
"""

import math
from dataclasses import dataclass, field

import numpy as np

POLICIES = ("rs", "cb", "fa")


def frequency_aware_quotas(observations: dict[int, int], max_size: int) -> dict[int, int]:
    """Per-class slot targets: ceil(normalized 1/observations * max_size),
    trimmed one slot at a time until they sum to max_size.

    Trimming picks the class with the most observations (ties: larger current
    slot count, then lower class id), which preserves the bias toward
    infrequent classes.
    """
    if not observations:
        return {}
    classes = sorted(observations)
    inv = {c: 1.0 / observations[c] for c in classes}
    total = sum(inv.values())
    slots = {c: math.ceil(inv[c] / total * max_size) for c in classes}
    excess = sum(slots.values()) - max_size
    while excess > 0:
        eligible = [c for c in classes if slots[c] > 0]
        victim = max(eligible, key=lambda c: (observations[c], slots[c], -c))
        slots[victim] -= 1
        excess -= 1
    return slots


def class_balanced_quotas(seen_order: list[int], max_size: int) -> dict[int, int]:
    """floor(M / #seen) per class; the M mod #seen leftover slots go to the
    earliest-seen classes."""
    if not seen_order:
        return {}
    base, rem = divmod(max_size, len(seen_order))
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(seen_order)}


@dataclass
class BufferComposition:
    per_class: dict[int, int]
    total: int
    infrequent_ratio: float
    empty: bool


@dataclass
class ReplayBuffer:
    """Bounded sample store plus per-class observation counts."""

    max_size: int
    policy: str
    store: dict[int, list[int]] = field(default_factory=dict)
    seen_order: list[int] = field(default_factory=list)
    observations: dict[int, int] = field(default_factory=dict)
    rs_seen_count: int = 0
    _rs_items: list[tuple[int, int]] = field(default_factory=list)  # (instance, class)
    _cb_class_seen: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown buffer policy {self.policy!r}")
        if self.max_size < 1:
            raise ValueError("buffer max_size must be >= 1")

    # -- views -------------------------------------------------------------

    def counts(self) -> dict[int, int]:
        if self.policy == "rs":
            out: dict[int, int] = {}
            for _, c in self._rs_items:
                out[c] = out.get(c, 0) + 1
            return out
        return {c: len(items) for c, items in self.store.items() if items}

    def total_stored(self) -> int:
        return sum(self.counts().values())

    def stored_instances_and_labels(self) -> tuple[np.ndarray, np.ndarray]:
        if self.policy == "rs":
            pairs = self._rs_items
            inst = np.array([p[0] for p in pairs], dtype=np.int64)
            labs = np.array([p[1] for p in pairs], dtype=np.int64)
            return inst, labs
        inst, labs = [], []
        for c in self.seen_order:
            items = self.store.get(c, [])
            inst.extend(items)
            labs.extend([c] * len(items))
        return np.asarray(inst, dtype=np.int64), np.asarray(labs, dtype=np.int64)

    def quotas(self) -> dict[int, int] | None:
        """Current per-class slot targets; None for the reservoir policy."""
        if self.policy == "cb":
            return class_balanced_quotas(self.seen_order, self.max_size)
        if self.policy == "fa":
            return frequency_aware_quotas(self.observations, self.max_size)
        return None

    def sample(self, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Uniform draw (with replacement) of k stored items."""
        inst, labs = self.stored_instances_and_labels()
        if inst.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        pick = rng.integers(inst.size, size=k)
        return inst[pick], labs[pick]

    # -- updates -----------------------------------------------------------

    def _observe(self, labels: np.ndarray) -> list[int]:
        present = sorted(int(c) for c in np.unique(labels))
        for c in present:
            if c not in self.observations:
                self.seen_order.append(c)
                self.observations[c] = 1
            else:
                self.observations[c] += 1
        return present

    def update(self, instances: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> None:
        instances = np.asarray(instances, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if instances.shape != labels.shape:
            raise ValueError("instances and labels must align")
        if instances.size == 0:
            return
        present = self._observe(labels)
        if self.policy == "rs":
            self._update_rs(instances, labels, rng)
        elif self.policy == "cb":
            self._update_cb(instances, labels, present, rng)
        else:
            self._update_fa(instances, labels, present, rng)
        assert self.total_stored() <= self.max_size

    def _update_rs(self, instances, labels, rng) -> None:
        m = self.max_size
        t = self.rs_seen_count
        j = 0
        while j < instances.size and len(self._rs_items) < m:
            self._rs_items.append((int(instances[j]), int(labels[j])))
            t += 1
            j += 1
        if j < instances.size:
            # item at stream position t (1-based) claims slot rng[0,t);
            # slots < m both accept (prob m/t) and name the victim
            positions = t + 1 + np.arange(instances.size - j)
            slots = rng.integers(0, positions)
            for off in np.flatnonzero(slots < m):
                self._rs_items[slots[off]] = (int(instances[j + off]), int(labels[j + off]))
            t = int(positions[-1])
        self.rs_seen_count = t

    def _update_cb(self, instances, labels, present, rng) -> None:
        quotas = class_balanced_quotas(self.seen_order, self.max_size)
        for c in self.seen_order:
            items = self.store.get(c, [])
            if len(items) > quotas[c]:
                keep = rng.choice(len(items), size=quotas[c], replace=False)
                self.store[c] = [items[i] for i in sorted(keep)]
        for c in present:
            cap = quotas[c]
            items = self.store.setdefault(c, [])
            seen = self._cb_class_seen.get(c, 0)
            for inst in instances[labels == c]:
                seen += 1
                if len(items) < cap:
                    items.append(int(inst))
                elif cap > 0:
                    slot = int(rng.integers(seen))
                    if slot < cap:
                        items[slot] = int(inst)
            self._cb_class_seen[c] = seen

    def _update_fa(self, instances, labels, present, rng) -> None:
        m = self.max_size
        quotas = frequency_aware_quotas(self.observations, m)
        incoming = {c: instances[labels == c] for c in present}
        stored = {c: len(self.store.get(c, [])) for c in self.seen_order}
        available = {
            c: stored[c] + (incoming[c].size if c in incoming else 0)
            for c in self.seen_order
        }
        target = {c: min(quotas[c], available[c]) for c in self.seen_order}
        # fill unused capacity from the most frequently observed classes
        leftover = m - sum(target.values())
        for c in sorted(self.seen_order, key=lambda c: (-self.observations[c], c)):
            if leftover <= 0:
                break
            room = available[c] - target[c]
            take = min(room, leftover)
            target[c] += take
            leftover -= take
        for c in self.seen_order:
            items = self.store.get(c, [])
            want = target[c]
            if want < len(items):
                keep = rng.choice(len(items), size=want, replace=False)
                items = [items[i] for i in sorted(keep)]
            elif want > len(items):
                pool = incoming[c]
                add = rng.choice(pool, size=want - len(items), replace=False)
                items = items + [int(v) for v in add]
            self.store[c] = items


def update_rs(buffer: ReplayBuffer, instances, labels, rng) -> ReplayBuffer:
    assert buffer.policy == "rs"
    buffer.update(instances, labels, rng)
    return buffer


def update_cb(buffer: ReplayBuffer, instances, labels, rng) -> ReplayBuffer:
    assert buffer.policy == "cb"
    buffer.update(instances, labels, rng)
    return buffer


def update_fa(buffer: ReplayBuffer, instances, labels, rng) -> ReplayBuffer:
    assert buffer.policy == "fa"
    buffer.update(instances, labels, rng)
    return buffer


def buffer_composition(buffer: ReplayBuffer, infrequent_classes=()) -> BufferComposition:
    """Exact per-class counts plus the share held by the given classes.

    An empty buffer reports ratio 0 and is flagged as empty.
    """
    per_class = buffer.counts()
    total = sum(per_class.values())
    if total == 0:
        return BufferComposition(per_class={}, total=0, infrequent_ratio=0.0, empty=True)
    infrequent = set(int(c) for c in infrequent_classes)
    inf_count = sum(n for c, n in per_class.items() if c in infrequent)
    return BufferComposition(
        per_class=per_class,
        total=total,
        infrequent_ratio=inf_count / total,
        empty=False,
    )
