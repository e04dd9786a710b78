import pytest
from hypothesis import given, strategies as st

from apiseq.cfg import BasicBlock, Cfg, EdgeKind, EmptyGraph, EntryNotListed, build_cfg, to_dot
from apiseq.corpusgen import SplitMix64, random_program
from apiseq.disasm import Listing, Mode, disassemble_linear, disassemble_recursive, parse_ndif
from apiseq.miniisa import Kind, assemble
from oracles import ref_cfg

JCC_FIXTURE = """
    JCC L
A:  APICALL 1
    HALT
L:  APICALL 2
    HALT
"""


def _cfg(src):
    return build_cfg(disassemble_recursive(assemble(src)))


def _edges(cfg):
    return [(e.src, e.dst, e.kind) for e in cfg.edges]


def test_straight_line():
    cfg = _cfg("APICALL 1\nCOMPUTE\nHALT")
    assert len(cfg.blocks) == 1 and cfg.edges == []
    assert cfg.blocks[0].instr_addrs == (0, 6, 12)
    assert cfg.blocks[0].terminator is Kind.HALT


def test_jcc_three_blocks():
    cfg = _cfg(JCC_FIXTURE)
    assert [b.start for b in cfg.blocks] == [0, 6, 18]
    entry = cfg.entry_block
    a, l = cfg.block_at(6).id, cfg.block_at(18).id
    assert _edges(cfg) == [(entry, l, EdgeKind.TAKEN), (entry, a, EdgeKind.FALLTHROUGH)]


def test_call_edges():
    cfg = _cfg("CALL f\nHALT\nf: RET")
    e, h, f = (cfg.block_at(a).id for a in (0, 6, 12))
    assert _edges(cfg) == [(e, f, EdgeKind.CALL_TARGET), (e, h, EdgeKind.CALL_CONTINUATION)]
    assert cfg.successors(f) == []


def test_api_names_recorded_in_block():
    cfg = _cfg(".api 1 ReadFile\n.api 2 WriteFile\nAPICALL 1\nAPICALL 2\nHALT")
    assert cfg.blocks[0].api_calls == ("ReadFile", "WriteFile")


def test_jcc_target_outside_listing_keeps_fallthrough():
    listing = parse_ndif("0000 JCC 0100\n0006 HALT\n")
    cfg = build_cfg(listing)
    assert _edges(cfg) == [(0, 1, EdgeKind.FALLTHROUGH)]


def test_block_cut_by_leader_falls_through():
    cfg = _cfg("COMPUTE\nL: APICALL 1\nJMP L")
    assert [b.instr_addrs for b in cfg.blocks] == [(0,), (6, 12)]
    assert _edges(cfg) == [(0, 1, EdgeKind.FALLTHROUGH), (1, 1, EdgeKind.TAKEN)]


def test_entry_not_listed():
    listing = Listing(parse_ndif("0000 HALT").instructions, 6, Mode.INGESTED)
    with pytest.raises(EntryNotListed):
        build_cfg(listing)


def test_dot_single_block():
    dot = to_dot(_cfg("HALT"))
    assert dot.startswith("digraph")
    assert dot.count("[label=") == 1 and "->" not in dot


def test_dot_jcc():
    dot = to_dot(build_cfg(disassemble_recursive(assemble(".api 1 ReadFile\n" + JCC_FIXTURE))))
    assert sum(1 for line in dot.splitlines() if line.strip().startswith("b") and "->" not in line) == 3
    assert '-> b2 [label="Taken"]' in dot and '-> b1 [label="FallThrough"]' in dot
    assert "ReadFile" in dot


def test_dot_empty():
    with pytest.raises(EmptyGraph):
        to_dot(Cfg([], [], 0))


def check_structure(listing, cfg):
    """Partition, interior and out-degree invariants of one CFG."""
    seen = [a for b in cfg.blocks for a in b.instr_addrs]
    assert sorted(seen) == listing.addresses()
    assert len(seen) == len(set(seen))
    assert [b.id for b in cfg.blocks] == list(range(len(cfg.blocks)))
    starts = {b.start for b in cfg.blocks}
    for b in cfg.blocks:
        for a in b.instr_addrs[:-1]:
            assert not listing.instructions[a].kind.is_control
        assert b.terminator is listing.instructions[b.instr_addrs[-1]].kind
        out = [e.kind for e in cfg.successors(b.id)]
        last = listing.instructions[b.instr_addrs[-1]]
        tgt_ok = last.kind.has_target and last.target in listing
        ft_ok = listing.fall_through(last.address) is not None
        k = b.terminator
        if k is Kind.JCC:
            assert out == [EdgeKind.TAKEN] * tgt_ok + [EdgeKind.FALLTHROUGH] * ft_ok
        elif k is Kind.JMP:
            assert out == [EdgeKind.TAKEN] * tgt_ok
        elif k is Kind.CALL:
            assert out == [EdgeKind.CALL_TARGET] * tgt_ok + [EdgeKind.CALL_CONTINUATION] * ft_ok
        elif k in (Kind.RET, Kind.HALT, Kind.CALLIND):
            assert out == []
        else:
            assert out == [EdgeKind.FALLTHROUGH] * ft_ok
    # any jump target begins a block
    for ins in listing:
        if ins.kind in (Kind.JMP, Kind.JCC, Kind.CALL) and ins.target in listing:
            assert ins.target in starts


def check_against_reference(listing, cfg):
    blocks, edges = ref_cfg(listing)
    assert {b.start: (b.instr_addrs, b.api_calls, b.terminator) for b in cfg.blocks} == blocks
    start = {b.id: b.start for b in cfg.blocks}
    got = sorted(((start[e.src], start[e.dst], e.kind) for e in cfg.edges), key=lambda e: (e[0], e[1], e[2].value))
    assert got == edges
    assert start[cfg.entry_block] == listing.entry


@given(st.integers(0, 2**64 - 1), st.booleans())
def test_random_programs_structure_and_reference(seed, linear):
    img = random_program(SplitMix64(seed))
    listing = disassemble_linear(img) if linear else disassemble_recursive(img)
    if listing.entry not in listing:
        return
    cfg = build_cfg(listing)
    check_structure(listing, cfg)
    check_against_reference(listing, cfg)


@given(st.integers(0, 2**64 - 1))
def test_determinism(seed):
    listing = disassemble_recursive(random_program(SplitMix64(seed)))
    assert build_cfg(listing) == build_cfg(listing)


@given(st.lists(st.sampled_from(["SEQ", "APICALL API=ReadFile", "HALT", "RET", "JMP {t}", "JCC {t}",
                                 "CALL {t}", "CALLIND"]), min_size=1, max_size=30),
       st.lists(st.integers(1, 9), min_size=30, max_size=30), st.data())
def test_ingested_listings_match_reference(kinds, gaps, data):
    addrs = [sum(gaps[:i]) for i in range(len(kinds))]
    lines = []
    for a, k in zip(addrs, kinds):
        t = data.draw(st.sampled_from(addrs + [0xFFFF]))
        lines.append(f"{a:04X} " + k.format(t=f"{t:04X}"))
    listing = parse_ndif("\n".join(lines))
    cfg = build_cfg(listing)
    check_structure(listing, cfg)
    check_against_reference(listing, cfg)


def test_basic_block_fields():
    b = _cfg("HALT").blocks[0]
    assert isinstance(b, BasicBlock) and b.id == 0 and b.start == 0
