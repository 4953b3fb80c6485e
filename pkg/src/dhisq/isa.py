"""HISQ instruction set: RV32I subset plus wait/cw/sync/send/recv.

Textual assembly is the interchange form. A flat little-endian binary
encoding is also provided; the quantum extensions live in the RISC-V
custom opcode space (cw.* in custom-0, wait*/sync in custom-1,
send/recv in custom-2).
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import Iterable

NUM_REGS = 32
PORT_BITS = 8
CODEWORD_BITS = 16
WAIT_BITS = 22
TARGET_BITS = 12
ROUTER_BASE = 256          # sync/send targets >= this are router addresses
CENTRAL_ADDR = 255         # lock-step baseline central controller
ANY_SOURCE = -1            # recv without a source operand

OPCODE_CUSTOM0 = 0b0001011
OPCODE_CUSTOM1 = 0b0101011
OPCODE_CUSTOM2 = 0b1011011


class AsmError(ValueError):
    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        self.msg, self.line, self.col = msg, line, col
        where = f"line {line}" + (f", col {col}" if col is not None else "") if line is not None else ""
        super().__init__(f"{where}: {msg}" if where else msg)


class EncodingError(ValueError):
    pass


# operand kinds per mnemonic; 'mem' expands to (imm12, rs1) written as imm(rs)
_R = ("rd", "rs1", "rs2")
FORMATS: dict[str, tuple[str, ...]] = {
    **{m: _R for m in ("add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and")},
    **{m: ("rd", "rs1", "imm12") for m in ("addi", "slti", "sltiu", "xori", "ori", "andi")},
    **{m: ("rd", "rs1", "shamt") for m in ("slli", "srli", "srai")},
    **{m: ("rd", "mem") for m in ("lb", "lh", "lw", "lbu", "lhu")},
    **{m: ("rs2", "mem") for m in ("sb", "sh", "sw")},
    **{m: ("rs1", "rs2", "label") for m in ("beq", "bne", "blt", "bge", "bltu", "bgeu")},
    "lui": ("rd", "imm20"),
    "auipc": ("rd", "imm20"),
    "jal": ("rd", "label"),
    "jalr": ("rd", "mem"),
    "waiti": ("wait",),
    "waitr": ("rs1",),
    "cw.i.i": ("port", "cw"),
    "cw.i.r": ("port", "rs2"),
    "cw.r.i": ("rs1", "cw"),
    "cw.r.r": ("rs1", "rs2"),
    "sync": ("tgt",),
    "send": ("tgt", "rs1"),
    "recv": ("rd", "src"),
}

QUANTUM_MNEMONICS = frozenset(
    ["waiti", "waitr", "cw.i.i", "cw.i.r", "cw.r.i", "cw.r.r", "sync", "send", "recv"])
BRANCHES = frozenset(["beq", "bne", "blt", "bge", "bltu", "bgeu"])

REJECTED = frozenset([
    "fence", "fence.i", "ecall", "ebreak", "mret", "sret", "uret", "wfi",
    "csrrw", "csrrs", "csrrc", "csrrwi", "csrrsi", "csrrci", "csrr", "csrw",
])

_ABI = "zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6".split()
_ABI_INDEX = {name: i for i, name in enumerate(_ABI)} | {"fp": 8}

_RANGES = {
    "imm12": (-2048, 2047),
    "shamt": (0, 31),
    "imm20": (0, (1 << 20) - 1),
    "wait": (0, (1 << WAIT_BITS) - 1),
    "port": (0, (1 << PORT_BITS) - 1),
    "cw": (0, (1 << CODEWORD_BITS) - 1),
    "tgt": (0, (1 << TARGET_BITS) - 1),
    "src": (0, (1 << TARGET_BITS) - 2),
}


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``args`` follows ``FORMATS[mnemonic]`` with 'mem' flattened into
    ``(imm, rs1)``. Branch and jump targets are absolute instruction
    indices. ``note`` is a free-form annotation carried into traces; it is
    not part of structural equality.
    """

    mnemonic: str
    args: tuple[int, ...]
    note: str | None = field(default=None, compare=False)

    @property
    def target(self) -> int | None:
        if self.mnemonic in BRANCHES or self.mnemonic == "jal":
            return self.args[-1]
        return None


@dataclass
class Program:
    instructions: list[Instruction] = field(default_factory=list)
    labels: dict[str, int] = field(default_factory=dict, compare=False)
    controller: int | None = field(default=None, compare=False)
    reg_prefix: str = field(default="r", compare=False)

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def validate(self) -> None:
        n = len(self.instructions)
        for i, ins in enumerate(self.instructions):
            t = ins.target
            if t is not None and not 0 <= t <= n:
                raise AsmError(f"instruction {i}: target {t} outside program")


# ---------------------------------------------------------------- parsing

_NUM = re.compile(r"^[+-]?(0x[0-9a-fA-F]+|0b[01]+|\d+)$")
_MEM = re.compile(r"^(?P<imm>[^()]*)\((?P<reg>[^()]+)\)$")


def _parse_int(tok: str, line: int, col: int) -> int:
    if not _NUM.match(tok):
        raise AsmError(f"expected integer, got {tok!r}", line, col)
    return int(tok, 0)


def _parse_reg(tok: str, line: int, col: int) -> tuple[int, str]:
    t = tok.strip()
    if t in _ABI_INDEX:
        return _ABI_INDEX[t], "x"
    if t[:1] in ("$", "r", "x") and t[1:].isdigit():
        idx = int(t[1:])
        if idx >= NUM_REGS:
            raise AsmError(f"register index {idx} out of range", line, col)
        return idx, t[0]
    raise AsmError(f"expected register, got {tok!r}", line, col)


def _split_operands(text: str) -> list[str]:
    return [p.strip() for p in text.split(",")] if text.strip() else []


def _expand_pseudo(mn: str, ops: list[str]) -> tuple[str, list[str]]:
    if mn == "nop" and not ops:
        return "addi", ["r0", "r0", "0"]
    if mn == "j" and len(ops) == 1:
        return "jal", ["r0", ops[0]]
    if mn == "mv" and len(ops) == 2:
        return "addi", [ops[0], ops[1], "0"]
    if mn == "li" and len(ops) == 2:
        return "addi", [ops[0], "r0", ops[1]]
    if mn in ("beqz", "bnez") and len(ops) == 2:
        return mn[:3], [ops[0], "r0", ops[1]]
    return mn, ops


def assemble(text: str, controller: int | None = None) -> Program:
    """Two-pass assembler; labels may be used before they are defined."""
    labels: dict[str, int] = {}
    pending: list[tuple[int, int, str, list[str], str | None]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code, _, comment = raw.partition("#")
        note = comment[1:].strip() if comment.startswith("@") else None
        code = code.strip()
        while True:
            m = re.match(r"^([A-Za-z_.][\w.]*)\s*:", code)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", lineno, raw.find(name) + 1)
            labels[name] = len(pending)
            code = code[m.end():].strip()
        if not code:
            continue
        mn, _, rest = code.partition(" ")
        pending.append((lineno, raw.find(mn) + 1, mn.lower(), _split_operands(rest), note))

    prefix_seen: str | None = None
    out: list[Instruction] = []
    for lineno, col, mn, ops, note in pending:
        if mn in REJECTED:
            raise AsmError(f"{mn}: interrupt/fence/CSR instructions are not supported", lineno, col)
        mn, ops = _expand_pseudo(mn, ops)
        if mn not in FORMATS:
            raise AsmError(f"unknown mnemonic {mn!r}", lineno, col)
        kinds = FORMATS[mn]
        if mn == "recv" and len(ops) == 1:
            ops = ops + [None]
        if len(ops) != len(kinds):
            raise AsmError(f"{mn} expects {len(kinds)} operands, got {len(ops)}", lineno, col)
        args: list[int] = []
        for kind, tok in zip(kinds, ops):
            if kind in ("rd", "rs1", "rs2"):
                r, style = _parse_reg(tok, lineno, col)
                prefix_seen = prefix_seen or style
                args.append(r)
            elif kind == "mem":
                m = _MEM.match(tok.replace(" ", ""))
                if not m:
                    raise AsmError(f"expected imm(reg), got {tok!r}", lineno, col)
                imm = _parse_int(m.group("imm") or "0", lineno, col)
                lo, hi = _RANGES["imm12"]
                if not lo <= imm <= hi:
                    raise AsmError(f"offset {imm} out of range", lineno, col)
                r, style = _parse_reg(m.group("reg"), lineno, col)
                prefix_seen = prefix_seen or style
                args += [imm, r]
            elif kind == "label":
                if _NUM.match(tok):
                    raise AsmError("branch targets must be labels", lineno, col)
                if tok not in labels:
                    raise AsmError(f"undefined label {tok!r}", lineno, col)
                args.append(labels[tok])
            elif kind == "src" and tok is None:
                args.append(ANY_SOURCE)
            else:
                v = _parse_int(tok, lineno, col)
                lo, hi = _RANGES[kind]
                if not lo <= v <= hi:
                    raise AsmError(f"{kind} operand {v} out of range [{lo}, {hi}]", lineno, col)
                args.append(v)
        out.append(Instruction(mn, tuple(args), note))
    prog = Program(out, labels, controller, prefix_seen or "r")
    prog.validate()
    return prog


# ---------------------------------------------------------- disassembly

def format_instruction(ins: Instruction, label_of=None, reg_prefix: str = "r") -> str:
    mn, a = ins.mnemonic, ins.args
    reg = lambda i: f"{reg_prefix}{i}"
    label_of = label_of or (lambda idx: f"L{idx}")
    if mn == "jal" and a[0] == 0:
        return f"j {label_of(a[1])}"
    parts: list[str] = []
    it = iter(a)
    for kind in FORMATS[mn]:
        if kind in ("rd", "rs1", "rs2"):
            parts.append(reg(next(it)))
        elif kind == "mem":
            imm, r = next(it), next(it)
            parts.append(f"{imm}({reg(r)})")
        elif kind == "label":
            parts.append(label_of(next(it)))
        elif kind == "src":
            v = next(it)
            if v != ANY_SOURCE:
                parts.append(str(v))
        else:
            parts.append(str(next(it)))
    return f"{mn} {', '.join(parts)}" if parts else mn


def disassemble(program: Program, reg_prefix: str | None = None) -> str:
    """Canonical text. ``assemble(disassemble(p)) == p`` for valid programs."""
    prefix = reg_prefix or program.reg_prefix
    by_index: dict[int, list[str]] = {}
    for name, idx in program.labels.items():
        by_index.setdefault(idx, []).append(name)
    for ins in program.instructions:
        t = ins.target
        if t is not None and t not in by_index:
            by_index[t] = [f"L{t}"]
    label_of = lambda idx: by_index[idx][0]
    lines: list[str] = []
    for i, ins in enumerate(program.instructions):
        lines += [f"{name}:" for name in by_index.get(i, [])]
        text = "    " + format_instruction(ins, label_of, prefix)
        if ins.note:
            text += f"  #@ {ins.note}"
        lines.append(text)
    lines += [f"{name}:" for name in by_index.get(len(program.instructions), [])]
    return "\n".join(lines) + "\n" if lines else ""


# -------------------------------------------------------------- binary

_R_FUNCT = {  # mnemonic: (funct3, funct7)
    "add": (0, 0), "sub": (0, 0x20), "sll": (1, 0), "slt": (2, 0), "sltu": (3, 0),
    "xor": (4, 0), "srl": (5, 0), "sra": (5, 0x20), "or": (6, 0), "and": (7, 0),
}
_I_FUNCT = {"addi": 0, "slti": 2, "sltiu": 3, "xori": 4, "ori": 6, "andi": 7}
_SH_FUNCT = {"slli": (1, 0), "srli": (5, 0), "srai": (5, 0x20)}
_L_FUNCT = {"lb": 0, "lh": 1, "lw": 2, "lbu": 4, "lhu": 5}
_S_FUNCT = {"sb": 0, "sh": 1, "sw": 2}
_B_FUNCT = {"beq": 0, "bne": 1, "blt": 4, "bge": 5, "bltu": 6, "bgeu": 7}
_CW_SUB = {"cw.i.r": 0, "cw.r.i": 1, "cw.r.r": 2}


def _fits_signed(v: int, bits: int) -> bool:
    return -(1 << (bits - 1)) <= v < (1 << (bits - 1))


def _u(v: int, bits: int) -> int:
    return v & ((1 << bits) - 1)


def _sext(v: int, bits: int) -> int:
    return v - (1 << bits) if v & (1 << (bits - 1)) else v


def encode_instruction(ins: Instruction, index: int) -> int:
    mn, a = ins.mnemonic, ins.args
    if mn in _R_FUNCT:
        f3, f7 = _R_FUNCT[mn]
        return f7 << 25 | a[2] << 20 | a[1] << 15 | f3 << 12 | a[0] << 7 | 0b0110011
    if mn in _I_FUNCT:
        return _u(a[2], 12) << 20 | a[1] << 15 | _I_FUNCT[mn] << 12 | a[0] << 7 | 0b0010011
    if mn in _SH_FUNCT:
        f3, f7 = _SH_FUNCT[mn]
        return f7 << 25 | a[2] << 20 | a[1] << 15 | f3 << 12 | a[0] << 7 | 0b0010011
    if mn in _L_FUNCT:
        return _u(a[1], 12) << 20 | a[2] << 15 | _L_FUNCT[mn] << 12 | a[0] << 7 | 0b0000011
    if mn in _S_FUNCT:
        imm = _u(a[1], 12)
        return (imm >> 5) << 25 | a[0] << 20 | a[2] << 15 | _S_FUNCT[mn] << 12 | (imm & 31) << 7 | 0b0100011
    if mn in _B_FUNCT:
        off = (a[2] - index) * 4
        if not _fits_signed(off, 13):
            raise EncodingError(f"branch offset {off} does not fit 13 bits")
        o = _u(off, 13)
        return ((o >> 12) & 1) << 31 | ((o >> 5) & 0x3F) << 25 | a[1] << 20 | a[0] << 15 \
            | _B_FUNCT[mn] << 12 | ((o >> 1) & 0xF) << 8 | ((o >> 11) & 1) << 7 | 0b1100011
    if mn in ("lui", "auipc"):
        return a[1] << 12 | a[0] << 7 | (0b0110111 if mn == "lui" else 0b0010111)
    if mn == "jal":
        off = (a[1] - index) * 4
        if not _fits_signed(off, 21):
            raise EncodingError(f"jump offset {off} does not fit 21 bits")
        o = _u(off, 21)
        return ((o >> 20) & 1) << 31 | ((o >> 1) & 0x3FF) << 21 | ((o >> 11) & 1) << 20 \
            | ((o >> 12) & 0xFF) << 12 | a[0] << 7 | 0b1101111
    if mn == "jalr":
        return _u(a[1], 12) << 20 | a[2] << 15 | a[0] << 7 | 0b1100111
    # custom-0: bit 7 clear -> cw.i.i with port[15:8], codeword[31:16]
    if mn == "cw.i.i":
        return a[1] << 16 | a[0] << 8 | OPCODE_CUSTOM0
    if mn in _CW_SUB:
        sub = _CW_SUB[mn]
        if mn == "cw.i.r":
            payload = a[0] << 15 | a[1] << 23
        elif mn == "cw.r.i":
            payload = a[0] << 10 | a[1] << 16
        else:
            payload = a[0] << 10 | a[1] << 15
        return payload | sub << 8 | 1 << 7 | OPCODE_CUSTOM0
    # custom-1: funct3 in [14:12]
    if mn == "waiti":
        v = a[0]
        return (v >> 5) << 15 | 0 << 12 | (v & 31) << 7 | OPCODE_CUSTOM1
    if mn == "waitr":
        return a[0] << 15 | 1 << 12 | OPCODE_CUSTOM1
    if mn == "sync":
        return a[0] << 20 | 2 << 12 | OPCODE_CUSTOM1
    # custom-2
    if mn == "send":
        return a[0] << 20 | a[1] << 15 | 0 << 12 | OPCODE_CUSTOM2
    if mn == "recv":
        src = _u(a[1], TARGET_BITS)
        return src << 20 | 1 << 12 | a[0] << 7 | OPCODE_CUSTOM2
    raise EncodingError(f"cannot encode {mn}")


def decode_word(word: int, index: int) -> Instruction:
    opc = word & 0x7F
    rd, f3 = (word >> 7) & 31, (word >> 12) & 7
    rs1, rs2, f7 = (word >> 15) & 31, (word >> 20) & 31, word >> 25
    imm_i = _sext(word >> 20, 12)
    if opc == 0b0110011:
        for mn, (a, b) in _R_FUNCT.items():
            if (a, b) == (f3, f7):
                return Instruction(mn, (rd, rs1, rs2))
    elif opc == 0b0010011:
        for mn, (a, b) in _SH_FUNCT.items():
            if a == f3 and b == f7 and f3 in (1, 5):
                return Instruction(mn, (rd, rs1, rs2))
        for mn, a in _I_FUNCT.items():
            if a == f3:
                return Instruction(mn, (rd, rs1, imm_i))
    elif opc == 0b0000011:
        for mn, a in _L_FUNCT.items():
            if a == f3:
                return Instruction(mn, (rd, imm_i, rs1))
    elif opc == 0b0100011:
        imm = _sext(f7 << 5 | rd, 12)
        for mn, a in _S_FUNCT.items():
            if a == f3:
                return Instruction(mn, (rs2, imm, rs1))
    elif opc == 0b1100011:
        off = _sext(((word >> 31) & 1) << 12 | ((word >> 7) & 1) << 11
                    | ((word >> 25) & 0x3F) << 5 | ((word >> 8) & 0xF) << 1, 13)
        for mn, a in _B_FUNCT.items():
            if a == f3:
                return Instruction(mn, (rs1, rs2, index + off // 4))
    elif opc in (0b0110111, 0b0010111):
        return Instruction("lui" if opc == 0b0110111 else "auipc", (rd, word >> 12))
    elif opc == 0b1101111:
        off = _sext(((word >> 31) & 1) << 20 | ((word >> 12) & 0xFF) << 12
                    | ((word >> 20) & 1) << 11 | ((word >> 21) & 0x3FF) << 1, 21)
        return Instruction("jal", (rd, index + off // 4))
    elif opc == 0b1100111:
        return Instruction("jalr", (rd, imm_i, rs1))
    elif opc == OPCODE_CUSTOM0:
        if not (word >> 7) & 1:
            return Instruction("cw.i.i", ((word >> 8) & 0xFF, word >> 16))
        sub = (word >> 8) & 3
        if sub == 0:
            return Instruction("cw.i.r", ((word >> 15) & 0xFF, (word >> 23) & 31))
        if sub == 1:
            return Instruction("cw.r.i", ((word >> 10) & 31, word >> 16))
        if sub == 2:
            return Instruction("cw.r.r", ((word >> 10) & 31, (word >> 15) & 31))
    elif opc == OPCODE_CUSTOM1:
        if f3 == 0:
            return Instruction("waiti", ((word >> 15) << 5 | rd,))
        if f3 == 1:
            return Instruction("waitr", (rs1,))
        if f3 == 2:
            return Instruction("sync", (word >> 20,))
    elif opc == OPCODE_CUSTOM2:
        if f3 == 0:
            return Instruction("send", (word >> 20, rs1))
        if f3 == 1:
            src = word >> 20
            return Instruction("recv", (rd, ANY_SOURCE if src == (1 << TARGET_BITS) - 1 else src))
    raise EncodingError(f"illegal instruction word {word:#010x} at index {index}")


def encode(program: Program) -> bytes:
    words = [encode_instruction(ins, i) for i, ins in enumerate(program.instructions)]
    return struct.pack(f"<{len(words)}I", *words)


def decode(blob: bytes, controller: int | None = None) -> Program:
    if len(blob) % 4:
        raise EncodingError("binary length is not a multiple of 4 bytes")
    words = struct.unpack(f"<{len(blob) // 4}I", blob)
    prog = Program([decode_word(w, i) for i, w in enumerate(words)], {}, controller)
    prog.validate()
    return prog


def is_router_addr(tgt: int) -> bool:
    return tgt >= ROUTER_BASE


def iter_targets(program: Program) -> Iterable[int]:
    for ins in program.instructions:
        if ins.mnemonic == "sync":
            yield ins.args[0]
