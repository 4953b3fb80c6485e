import struct

import pytest
from hypothesis import given, strategies as st

from dhisq.bench import gen_fig10
from dhisq.isa import (FORMATS, OPCODE_CUSTOM1, REJECTED, AsmError, EncodingError, Instruction, Program,
                       assemble, decode, disassemble, encode)


def test_cw_immediate():
    (ins,) = assemble("cw.i.i 1, 1").instructions
    assert ins == Instruction("cw.i.i", (1, 1))


def test_zero_wait_is_legal():
    assert assemble("waiti 0").instructions == [Instruction("waiti", (0,))]


def test_fig10_listing_round_trips():
    fig = gen_fig10()
    assert len(fig.control) == 14
    text = disassemble(fig.control)
    again = assemble(text)
    assert again.instructions == fig.control.instructions
    assert disassemble(again) == text
    assert decode(encode(fig.control)).instructions == fig.control.instructions


def test_fig10_mnemonics_assemble():
    src = "top:\nwaiti 57\nwaitr $1\ncw.i.i 0, 1\nsync 1\naddi $1, $1, 30\nbne $2, $0, top\njal $0, top\n"
    assert [i.mnemonic for i in assemble(src)] == ["waiti", "waitr", "cw.i.i", "sync", "addi", "bne", "jal"]


def test_register_codeword_disassembly():
    prog = Program([Instruction("cw.i.r", (3, 3))])
    assert disassemble(prog).strip() == "cw.i.r 3, r3"


def test_empty_program():
    assert disassemble(Program()) == ""
    assert assemble("").instructions == []
    assert encode(Program()) == b""


def test_forward_labels():
    prog = assemble("beq r0, r0, end\naddi r1, r0, 1\nend:\n")
    assert prog.instructions[0].target == 2


def test_waiti_57_encoding():
    (word,) = struct.unpack("<I", encode(assemble("waiti 57")))
    assert word & 0x7F == OPCODE_CUSTOM1
    # low five bits sit in the rd slot, the rest from bit 15 up
    assert ((word >> 15) << 5 | (word >> 7) & 0x1F) == 57
    assert (word >> 12) & 7 == 0


def test_x0_reads_zero_after_decode():
    prog = decode(encode(assemble("addi r0, r0, 9\nadd r1, r0, r0\n")))
    assert prog.instructions[1] == Instruction("add", (1, 0, 0))


@pytest.mark.parametrize("src, needle", [
    ("foo r1", "unknown mnemonic"),
    ("addi r1, r0, 5000", "out of range"),
    ("waiti -1", "out of range"),
    ("beq r0, r0, nowhere", "undefined label"),
    ("x:\nx:\n", "duplicate label"),
    ("addi r1 r0", "operands"),
    ("add r1, r2, r40", "register"),
])
def test_syntax_errors(src, needle):
    with pytest.raises(AsmError, match=needle) as err:
        assemble(src)
    assert err.value.line is not None


@pytest.mark.parametrize("mn", sorted(REJECTED))
def test_interrupt_fence_csr_rejected(mn):
    with pytest.raises(AsmError, match="not supported"):
        assemble(f"{mn} r1, 0, r2" if mn.startswith("csr") else mn)


def test_truncated_binary():
    with pytest.raises(EncodingError):
        decode(b"\x00\x00\x00")


# ---------------------------------------------------------- properties

_RANGES = {
    "rd": (0, 31), "rs1": (0, 31), "rs2": (0, 31),
    "imm12": (-2048, 2047), "shamt": (0, 31), "imm20": (0, (1 << 20) - 1),
    "wait": (0, (1 << 22) - 1), "port": (0, 255), "cw": (0, (1 << 16) - 1),
    "tgt": (0, 4095), "src": (-1, 4094),
}


@st.composite
def programs(draw):
    n = draw(st.integers(0, 12))
    out = []
    for i in range(n):
        mn = draw(st.sampled_from(sorted(FORMATS)))
        args = []
        for kind in FORMATS[mn]:
            if kind == "mem":
                args += [draw(st.integers(-2048, 2047)), draw(st.integers(0, 31))]
            elif kind == "label":
                args.append(draw(st.integers(0, n)))
            else:
                args.append(draw(st.integers(*_RANGES[kind])))
        out.append(Instruction(mn, tuple(args)))
    return Program(out)


@given(programs())
def test_text_round_trip(prog):
    assert assemble(disassemble(prog)).instructions == prog.instructions


@given(programs())
def test_binary_round_trip(prog):
    assert decode(encode(prog)).instructions == prog.instructions
