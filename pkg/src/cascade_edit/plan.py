"""Edit specifications and their resolution into index plans."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

OPS = ("insert", "delete", "substitute")


@dataclass(frozen=True)
class EditSpec:
    op: str
    interval: tuple[int, int]
    new_len: int = 0
    seed: int = 0

    def validate(self, clip_len: int) -> None:
        if self.op not in OPS:
            raise InvalidArgument(f"unknown edit op {self.op!r}; expected one of {OPS}")
        start, end = self.interval
        if not 0 < start <= end < clip_len - 1:
            raise InvalidArgument(
                f"interval {self.interval} needs anchors on both sides in a clip of {clip_len} frames"
            )
        if self.new_len < 0:
            raise InvalidArgument("new_len must be >= 0")
        if self.op == "insert" and end != start:
            raise InvalidArgument("insert takes a single position: interval must be (p, p)")
        if self.op == "delete" and self.new_len != 0:
            raise InvalidArgument("delete does not take new_len")


@dataclass
class EditPlan:
    """Resolved edit.

    Generated frames always occupy output indices
    ``anchor_before + 1 .. anchor_before + bs``; every other output frame is an
    untouched original, located through ``output_index_map``.
    """

    op: str
    interval: tuple[int, int]
    anchor_before: int
    anchor_after: int
    bs: int
    orig_len: int
    output_index_map: dict[int, int] = field(default_factory=dict)

    @property
    def out_len(self) -> int:
        return len(self.output_index_map) + self.bs

    @property
    def generated_slice(self) -> slice:
        return slice(self.anchor_before + 1, self.anchor_before + 1 + self.bs)

    @property
    def removed(self) -> tuple[int, int] | None:
        """Inclusive original-index range dropped by the edit, if any."""
        if self.op == "insert":
            return None
        return self.interval

    def splice(self, original, generated):
        """Stitch ``generated`` (length ``bs``) into ``original`` per the plan."""
        if len(generated) != self.bs:
            raise InvalidArgument(f"expected {self.bs} generated items, got {len(generated)}")
        if len(original) != self.orig_len:
            raise InvalidArgument(f"plan is for {self.orig_len} frames, got {len(original)}")
        cut = self.anchor_before + 1
        resume = self.anchor_after
        if isinstance(original, np.ndarray):
            gen = np.asarray(generated, dtype=original.dtype).reshape((self.bs,) + original.shape[1:])
            return np.concatenate([original[:cut], gen, original[resume:]], axis=0)
        return list(original[:cut]) + list(generated) + list(original[resume:])

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "interval": list(self.interval),
            "anchor_before": self.anchor_before,
            "anchor_after": self.anchor_after,
            "bs": self.bs,
            "orig_len": self.orig_len,
            "out_len": self.out_len,
            "output_index_map": [[k, v] for k, v in sorted(self.output_index_map.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditPlan":
        return cls(
            op=d["op"],
            interval=tuple(d["interval"]),
            anchor_before=d["anchor_before"],
            anchor_after=d["anchor_after"],
            bs=d["bs"],
            orig_len=d["orig_len"],
            output_index_map={int(k): int(v) for k, v in d["output_index_map"]},
        )


def plan_edit(clip_len: int, spec: EditSpec) -> EditPlan:
    spec.validate(clip_len)
    start, end = spec.interval
    if spec.op == "insert":
        before, after, bs = start, start + 1, spec.new_len
    elif spec.op == "delete":
        before, after, bs = start - 1, end + 1, 0
    else:
        before, after, bs = start - 1, end + 1, spec.new_len

    index_map = {i: i for i in range(before + 1)}
    offset = before + 1 + bs - after
    for i in range(after, clip_len):
        index_map[i] = i + offset
    return EditPlan(spec.op, (start, end), before, after, bs, clip_len, index_map)
