import struct

import pytest
from hypothesis import given, strategies as st

from apiseq.miniisa import (WIDTH, BadOperand, BinaryImage, DuplicateLabel, EmptyImage, ImageError, Instruction,
                            Kind, OutOfBounds, UndefinedLabel, UnknownOpcode, assemble, decode, decode_at, encode)
from apiseq.disasm import disassemble_linear
from strategies import CODE_LEN, instructions


def _place(ins, size=CODE_LEN):
    buf = bytearray(size)
    buf[ins.address:ins.address + WIDTH] = encode(ins)
    return buf


def test_decode_jmp_example():
    img = BinaryImage(bytes.fromhex("100030000000") + bytes(0x30))
    assert decode_at(img, 0) == Instruction(0, Kind.JMP, target=0x30)


def test_decode_ret_example():
    code = bytes.fromhex("900000000000" "130000000000")
    assert decode(code, 6) == Instruction(6, Kind.RET)


def test_decode_unknown_opcode():
    for addr in (0, 6):
        code = bytearray(12)
        code[addr] = 0x7F
        with pytest.raises(UnknownOpcode):
            decode(bytes(code), addr)


def test_decode_out_of_bounds():
    with pytest.raises(OutOfBounds):
        decode(bytes(8), 6)
    with pytest.raises(OutOfBounds):
        decode(bytes(8), -1)


def test_target_outside_code_rejected():
    code = struct.pack("<BBI", Kind.JMP.value, 0, 12)
    with pytest.raises(BadOperand):
        decode(code + bytes(6), 0)
    assert decode(code + bytes(7), 0).target == 12


def test_noncanonical_bytes_rejected():
    with pytest.raises(BadOperand):
        decode(bytes([0x13, 0, 1, 0, 0, 0]), 0)   # RET with an operand
    with pytest.raises(BadOperand):
        decode(bytes([0x11, 2, 0, 0, 0, 0]), 0)   # JCC flag other than 0/1


@given(instructions())
def test_round_trip(ins):
    buf = _place(ins)
    assert decode(buf, ins.address) == ins
    assert encode(decode(buf, ins.address)) == bytes(buf[ins.address:ins.address + WIDTH])


@given(instructions(), instructions())
def test_fixed_width_no_overlap(a, b):
    buf = bytearray(CODE_LEN)
    a = Instruction(0, a.kind, a.target, a.taken, a.value, a.operand)
    b = Instruction(WIDTH, b.kind, b.target, b.taken, b.value, b.operand)
    buf[0:6] = encode(a)
    buf[6:12] = encode(b)
    assert len(encode(a)) == len(encode(b)) == WIDTH
    assert decode(buf, 0) == a and decode(buf, 6) == b


def test_assemble_label_example():
    img = assemble("JMP L; L: HALT")
    assert len(img.code) == 12
    assert decode(img.code, 0) == Instruction(0, Kind.JMP, target=6)
    assert decode(img.code, 6).kind is Kind.HALT


def test_assemble_api_example():
    img = assemble(".api 5 CreateFile\nAPICALL 5\nHALT")
    listing = disassemble_linear(img)
    assert listing.instructions[0].api == "CreateFile"
    assert img.api_map == {5: "CreateFile"}


def test_assemble_empty():
    with pytest.raises(EmptyImage):
        assemble("")
    with pytest.raises(EmptyImage):
        assemble("# nothing here\n.entry 0\n")


def test_assemble_label_errors():
    with pytest.raises(UndefinedLabel):
        assemble("JMP nowhere\nHALT")
    with pytest.raises(DuplicateLabel):
        assemble("a: NOP\na: HALT")


def test_assemble_directives():
    src = """
    .base 0x400000
    .entry start
    .api 3 CreateFile
    data: .zero 6
    start:
        APICALL CreateFile   # by name
        JCC start+6 TAKEN
        STORE data 0x41
        CALL f
        HALT
    f:  RET
    """
    img = assemble(src)
    assert img.base_address == 0x400000
    assert img.entry_point == 6
    kinds = [decode(img.code, a).kind for a in range(6, len(img.code), 6)]
    assert kinds == [Kind.APICALL, Kind.JCC, Kind.STORE, Kind.CALL, Kind.HALT, Kind.RET]
    assert decode(img.code, 12) == Instruction(12, Kind.JCC, target=12, taken=True)
    assert decode(img.code, 18) == Instruction(18, Kind.STORE, target=0, value=0x41)


@given(st.lists(instructions(code_len=6 * 20), min_size=1, max_size=20))
def test_assemble_disassemble_identity(instrs):
    # render each instruction as a mnemonic, re-assemble, compare kind/target
    lines = []
    for i, ins in enumerate(instrs):
        k = ins.kind
        if k is Kind.JCC:
            lines.append(f"JCC {ins.target % (6 * len(instrs))} {'TAKEN' if ins.taken else 'NOTTAKEN'}")
        elif k is Kind.STORE:
            lines.append(f"STORE {ins.target % (6 * len(instrs))} {ins.value}")
        elif k.has_target:
            lines.append(f"{k.name} {ins.target % (6 * len(instrs))}")
        elif k is Kind.APICALL:
            lines.append(f"APICALL {ins.operand}")
        else:
            lines.append(k.name)
    img = assemble("\n".join(lines))
    listing = disassemble_linear(img)
    assert len(listing) == len(instrs)
    for i, (ins, got) in enumerate(zip(instrs, listing)):
        assert got.kind is ins.kind
        if ins.kind.has_target:
            assert got.target == ins.target % (6 * len(instrs))


def test_image_file_round_trip(tmp_path):
    img = BinaryImage(assemble("APICALL 1\nHALT").code, entry_point=6, base_address=0x140000,
                      api_map={1: "ReadFile", 9: "GetProcAddress"})
    p = tmp_path / "x.misa"
    img.save(p)
    raw = p.read_bytes()
    assert raw[:4] == b"MISA"
    assert struct.unpack_from("<HII", raw, 4) == (1, 0x140000, 6)
    assert BinaryImage.load(p) == img


def test_image_invariants():
    with pytest.raises(ImageError):
        BinaryImage(bytes(6), entry_point=6)
    with pytest.raises(ImageError):
        BinaryImage.from_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ImageError):
        BinaryImage.from_bytes(BinaryImage(bytes(12)).to_bytes()[:-3])
