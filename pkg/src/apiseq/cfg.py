"""Basic-block control-flow graphs built from a listing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .disasm import Listing
from .miniisa import Kind


class EdgeKind(enum.Enum):
    TAKEN = "Taken"
    FALLTHROUGH = "FallThrough"
    CALL_TARGET = "CallTarget"
    CALL_CONTINUATION = "CallContinuation"


class CfgError(ValueError):
    pass


class EntryNotListed(CfgError):
    pass


class EmptyGraph(CfgError):
    pass


@dataclass(frozen=True)
class BasicBlock:
    id: int
    start: int
    instr_addrs: tuple[int, ...]
    api_calls: tuple[str, ...]
    terminator: Kind


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass
class Cfg:
    blocks: list[BasicBlock]
    edges: list[Edge]
    entry_block: int
    _succ: dict[int, list[Edge]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._succ = {b.id: [] for b in self.blocks}
        for e in self.edges:
            self._succ[e.src].append(e)

    def __len__(self) -> int:
        return len(self.blocks)

    def successors(self, block_id: int) -> list[Edge]:
        """Outgoing edges, Taken/CallTarget before FallThrough/CallContinuation."""
        return self._succ[block_id]

    def block_at(self, addr: int) -> BasicBlock:
        for b in self.blocks:
            if b.start == addr:
                return b
        raise KeyError(addr)


def _leaders(listing: Listing) -> set[int]:
    leaders = {listing.entry}
    prev = None
    for ins in listing:
        if prev is not None and (prev.kind.is_control or listing.fall_through(prev.address) != ins.address):
            leaders.add(ins.address)
        if ins.kind in (Kind.JMP, Kind.JCC, Kind.CALL) and ins.target in listing:
            leaders.add(ins.target)
        prev = ins
    return leaders


def build_cfg(listing: Listing) -> Cfg:
    if listing.entry not in listing:
        raise EntryNotListed(f"entry {listing.entry:#x} is not in the listing")
    leaders = _leaders(listing)

    runs: list[list] = []
    for ins in listing:
        if ins.address in leaders or not runs:
            runs.append([])
        runs[-1].append(ins)

    start_to_id = {run[0].address: i for i, run in enumerate(runs)}
    blocks = []
    edges = []
    for bid, run in enumerate(runs):
        last = run[-1]
        blocks.append(BasicBlock(
            id=bid,
            start=run[0].address,
            instr_addrs=tuple(i.address for i in run),
            api_calls=tuple(i.api for i in run if i.kind is Kind.APICALL and i.api),
            terminator=last.kind,
        ))
        k = last.kind
        ft = listing.fall_through(last.address)
        target = start_to_id.get(last.target) if k.has_target else None
        if k is Kind.JCC:
            if target is not None:
                edges.append(Edge(bid, target, EdgeKind.TAKEN))
            if ft is not None:
                edges.append(Edge(bid, start_to_id[ft], EdgeKind.FALLTHROUGH))
        elif k is Kind.JMP:
            if target is not None:
                edges.append(Edge(bid, target, EdgeKind.TAKEN))
        elif k is Kind.CALL:
            if target is not None:
                edges.append(Edge(bid, target, EdgeKind.CALL_TARGET))
            if ft is not None:
                edges.append(Edge(bid, start_to_id[ft], EdgeKind.CALL_CONTINUATION))
        elif not k.is_control and ft is not None:
            # block cut short by a leader: control simply falls into it
            edges.append(Edge(bid, start_to_id[ft], EdgeKind.FALLTHROUGH))
    return Cfg(blocks, edges, start_to_id[listing.entry])


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(cfg: Cfg, name: str = "cfg") -> str:
    if not cfg.blocks:
        raise EmptyGraph("graph has no blocks")
    lines = [f"digraph {name} {{", '  node [shape=box, fontname="monospace"];']
    for b in cfg.blocks:
        label = "\\n".join([f"{b.start:04X} ({b.terminator.name})"] + [_dot_escape(a) for a in b.api_calls])
        style = ", penwidth=2" if b.id == cfg.entry_block else ""
        lines.append(f'  b{b.id} [label="{label}"{style}];')
    for e in cfg.edges:
        lines.append(f'  b{e.src} -> b{e.dst} [label="{e.kind.value}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
