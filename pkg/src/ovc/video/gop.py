"""GOP reference structures (decode order, frame kinds, reference slots)."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass

GOP_RANDOM_ACCESS = 0
GOP_LOW_DELAY = 1
GOP_ALL_INTRA = 2


@dataclass(frozen=True)
class FrameSpec:
    index: int
    kind: str  # "I", "P" or "B"
    refs: tuple = ()

    def __post_init__(self):
        want = {"I": 0, "P": 1, "B": 2}.get(self.kind)
        if want is None:
            raise ValueError(f"unknown frame kind {self.kind!r}")
        if len(self.refs) != want:
            raise ValueError(f"{self.kind}-frame {self.index} needs {want} refs, got {self.refs}")


@dataclass(frozen=True)
class GopStructure:
    frames: tuple  # FrameSpec in decoding order
    gop_id: int = GOP_RANDOM_ACCESS

    def __post_init__(self):
        done = set()
        for f in self.frames:
            for r in f.refs:
                if r not in done:
                    raise ValueError(f"frame {f.index} references {r} before it is decoded")
            if f.index in done:
                raise ValueError(f"frame {f.index} appears twice")
            done.add(f.index)
        if done != set(range(len(self.frames))):
            raise ValueError("frame indices must cover 0..n-1")

    def __len__(self):
        return len(self.frames)

    @property
    def decode_order(self) -> list:
        return [f.index for f in self.frames]

    def spec(self, index: int) -> FrameSpec:
        for f in self.frames:
            if f.index == index:
                return f
        raise KeyError(index)

    def reference_counts(self) -> dict:
        c = Counter(r for f in self.frames for r in f.refs)
        return {f.index: c.get(f.index, 0) for f in self.frames}

    def dependents(self, index: int) -> set:
        """Frames whose reconstruction depends on ``index`` (transitively)."""
        out = set()
        for f in self.frames:
            if index in f.refs or out.intersection(f.refs):
                out.add(f.index)
        return out


def random_access(n: int) -> GopStructure:
    """Hierarchical-B structure: I at 0, P at n-1, B-frames by breadth-first bisection.

    n = 9 gives 0:I 8:P(0) 4:B(0,8) 2:B(0,4) 6:B(4,8) 1:B(0,2) 3:B(2,4) 5:B(4,6) 7:B(6,8).
    """
    if n < 1:
        raise ValueError("a GOP needs at least one frame")
    frames = [FrameSpec(0, "I")]
    if n > 1:
        frames.append(FrameSpec(n - 1, "P", (0,)))
    todo = deque([(0, n - 1)])
    while todo:
        a, b = todo.popleft()
        if b - a < 2:
            continue
        m = (a + b) // 2
        frames.append(FrameSpec(m, "B", (a, b)))
        todo.append((a, m))
        todo.append((m, b))
    return GopStructure(tuple(frames), GOP_RANDOM_ACCESS)


def low_delay(n: int) -> GopStructure:
    frames = [FrameSpec(0, "I")] + [FrameSpec(t, "P", (t - 1,)) for t in range(1, n)]
    return GopStructure(tuple(frames), GOP_LOW_DELAY)


def all_intra(n: int) -> GopStructure:
    return GopStructure(tuple(FrameSpec(t, "I") for t in range(n)), GOP_ALL_INTRA)


BUILDERS = {GOP_RANDOM_ACCESS: random_access, GOP_LOW_DELAY: low_delay, GOP_ALL_INTRA: all_intra}
NAMES = {"ra": GOP_RANDOM_ACCESS, "ld": GOP_LOW_DELAY, "intra": GOP_ALL_INTRA}


def build(gop_id: int, n: int) -> GopStructure:
    if gop_id not in BUILDERS:
        raise ValueError(f"unknown GOP structure id {gop_id}")
    return BUILDERS[gop_id](n)
