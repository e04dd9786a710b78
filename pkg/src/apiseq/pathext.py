"""Depth-first mining of multiple API-call sequences from a CFG.

The walk keeps one global visited set, so every block is entered at most
once and cyclic graphs terminate.  At a branch the first unvisited
successor is followed and the others are deferred on a pending stack
together with the current path length and call stack; when a walk ends the
path so far is emitted, and the next deferred block resumes from the
truncated prefix.  Calls push their continuation block so that ``RET``
resumes the right caller.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .cfg import Cfg, EdgeKind
from .miniisa import Kind


class Terminal(enum.Enum):
    RETURN = "Return"
    HALT = "Halt"
    INDIRECT = "Indirect"
    EXHAUSTED = "Exhausted"
    LIMIT_HIT = "LimitHit"


@dataclass(frozen=True)
class ApiPath:
    apis: tuple[str, ...]
    blocks: tuple[int, ...]
    terminal: Terminal


@dataclass(frozen=True)
class TraversalLimits:
    max_paths: int = 4096
    max_path_blocks: int = 10000

    def __post_init__(self):
        if self.max_paths < 1 or self.max_path_blocks < 1:
            raise ValueError("traversal limits must be positive")


class PathList(list):
    """List of ApiPath with traversal bookkeeping attached."""

    truncated: bool = False
    block_entries: int = 0


def extract_paths(cfg: Cfg, limits: TraversalLimits | None = None) -> PathList:
    limits = limits or TraversalLimits()
    blocks = {b.id: b for b in cfg.blocks}
    out = PathList()
    visited: set[int] = set()
    path: list[int] = []
    # (block to enter, path length to resume from, call stack of continuations)
    pending: list[tuple[int, int, tuple]] = [(cfg.entry_block, 0, ())]

    while pending:
        bid, prefix, calls = pending.pop()
        if bid in visited:
            continue
        if len(out) >= limits.max_paths:
            out.truncated = True
            break
        del path[prefix:]
        while True:
            visited.add(bid)
            path.append(bid)
            out.block_entries += 1
            kind = blocks[bid].terminator
            nxt = None
            if kind is Kind.RET:
                if not calls or calls[-1] is None:
                    terminal = Terminal.RETURN
                else:
                    nxt, calls = calls[-1], calls[:-1]
                    terminal = None if nxt not in visited else Terminal.EXHAUSTED
            elif kind is Kind.HALT:
                terminal = Terminal.HALT
            elif kind is Kind.CALLIND:
                terminal = Terminal.INDIRECT
            else:
                edges = cfg.successors(bid)
                fresh = [e for e in edges if e.dst not in visited]
                if not fresh:
                    terminal = Terminal.EXHAUSTED
                else:
                    for e in reversed(fresh[1:]):
                        pending.append((e.dst, len(path), calls))
                    first = fresh[0]
                    if first.kind is EdgeKind.CALL_TARGET:
                        cont = next((e.dst for e in edges if e.kind is EdgeKind.CALL_CONTINUATION), None)
                        calls = calls + (cont,)
                    nxt = first.dst
                    terminal = None
            if terminal is None and len(path) >= limits.max_path_blocks:
                terminal = Terminal.LIMIT_HIT
                out.truncated = True
            if terminal is not None:
                apis = tuple(a for b in path for a in blocks[b].api_calls)
                out.append(ApiPath(apis, tuple(path), terminal))
                break
            bid = nxt
    return out


def api_sequences(paths) -> list[tuple[str, ...]]:
    """API sequences of the paths that carry at least one call."""
    return [p.apis for p in paths if p.apis]


def paths_to_json(paths) -> str:
    return json.dumps([list(p.apis) for p in paths], indent=1)
