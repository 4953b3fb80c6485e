"""Minimal dynamic-circuit IR.

Grammar (statements end in ';', '//' starts a comment)::

    qubit q0;            qubit q0, q1;
    bit c0;
    h q0;                cz q0 q1;          cx q0, q1;
    measure q0 -> c0;
    if (c0) { x q1; }    if (c0 ^ c1 == 0) z q2;
    barrier q0, q1;
    repeat 1000 { ... }  // top level only: number of shots
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

SINGLE_QUBIT_GATES = frozenset("h x y z s sdg t tdg sx id".split())
TWO_QUBIT_GATES = frozenset(["cx", "cz", "swap"])
ALIASES = {"cnot": "cx"}


class IRError(ValueError):
    def __init__(self, msg: str, pos: int | None = None, text: str | None = None):
        if pos is not None and text is not None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
            msg = f"line {line}, col {col}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[str, ...]


@dataclass(frozen=True)
class Measure:
    qubit: str
    bit: str


@dataclass(frozen=True)
class Barrier:
    qubits: tuple[str, ...]


@dataclass(frozen=True)
class Conditional:
    """Run ``body`` when the XOR of ``bits`` equals ``value``."""

    bits: tuple[str, ...]
    body: tuple[Gate, ...]
    value: int = 1


Statement = Gate | Measure | Barrier | Conditional


@dataclass
class CircuitIR:
    qubits: list[str] = field(default_factory=list)
    bits: list[str] = field(default_factory=list)
    body: list[Statement] = field(default_factory=list)
    shots: int = 1

    def __len__(self) -> int:
        return len(self.body)

    def validate(self) -> None:
        qs, bs = set(self.qubits), set(self.bits)
        if len(qs) != len(self.qubits) or len(bs) != len(self.bits):
            raise IRError("duplicate declaration")
        measured: set[str] = set()
        for st in self.body:
            check_statement(st, qs, bs, measured)

    def to_text(self) -> str:
        lines = []
        if self.qubits:
            lines.append("qubit " + ", ".join(self.qubits) + ";")
        if self.bits:
            lines.append("bit " + ", ".join(self.bits) + ";")
        body = [_stmt_text(s) for s in self.body]
        if self.shots != 1:
            lines.append(f"repeat {self.shots} {{")
            lines += ["    " + b for b in body]
            lines.append("}")
        else:
            lines += body
        return "\n".join(lines) + ("\n" if lines else "")


def _check_gate(g: Gate, qs: set[str]) -> None:
    if g.name in ALIASES or (g.name not in SINGLE_QUBIT_GATES and g.name not in TWO_QUBIT_GATES):
        raise IRError(f"unknown gate {g.name!r}")
    want = 2 if g.name in TWO_QUBIT_GATES else 1
    if len(g.qubits) != want:
        raise IRError(f"{g.name} expects {want} qubit(s), got {len(g.qubits)}")
    if len(set(g.qubits)) != len(g.qubits):
        raise IRError(f"{g.name} repeats a qubit")
    for q in g.qubits:
        if q not in qs:
            raise IRError(f"undeclared qubit {q!r}")


def check_statement(st: Statement, qs: set[str], bs: set[str], measured: set[str]) -> None:
    """Validate one statement in program order; records measured bits in ``measured``."""
    if isinstance(st, Gate):
        _check_gate(st, qs)
    elif isinstance(st, Measure):
        if st.qubit not in qs:
            raise IRError(f"undeclared qubit {st.qubit!r}")
        if st.bit not in bs:
            raise IRError(f"undeclared bit {st.bit!r}")
        measured.add(st.bit)
    elif isinstance(st, Barrier):
        for q in st.qubits:
            if q not in qs:
                raise IRError(f"undeclared qubit {q!r}")
    elif isinstance(st, Conditional):
        for b in st.bits:
            if b not in bs:
                raise IRError(f"undeclared bit {b!r}")
            if b not in measured:
                raise IRError(f"condition reads bit {b!r} before it is measured")
        if st.value not in (0, 1):
            raise IRError("condition value must be 0 or 1")
        for g in st.body:
            if not isinstance(g, Gate):
                raise IRError("conditional bodies may only contain gates")
            _check_gate(g, qs)


def _stmt_text(st: Statement) -> str:
    if isinstance(st, Gate):
        return f"{st.name} {' '.join(st.qubits)};"
    if isinstance(st, Measure):
        return f"measure {st.qubit} -> {st.bit};"
    if isinstance(st, Barrier):
        return f"barrier {', '.join(st.qubits)};"
    pred = " ^ ".join(st.bits) + ("" if st.value == 1 else " == 0")
    inner = " ".join(_stmt_text(g) for g in st.body)
    return f"if ({pred}) {{ {inner} }}"


_TOKEN = re.compile(r"\s*(?:(//[^\n]*)|(->|==|[{}();,^])|([A-Za-z_][\w]*(?:\[\d+\])?)|(\d+))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise IRError(f"unexpected character {text[pos:].lstrip()[:1]!r}",
                          pos + len(text[pos:]) - len(text[pos:].lstrip()), text)
        if not m.group(1):
            tok = m.group(2) or m.group(3) or m.group(4)
            toks.append((tok, m.start(m.lastindex)))
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> str | None:
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def pos(self) -> int:
        return self.toks[self.i][1] if self.i < len(self.toks) else len(self.text)

    def take(self, expect: str | None = None) -> str:
        tok = self.peek()
        if tok is None:
            raise IRError(f"unexpected end of input{f', expected {expect!r}' if expect else ''}")
        if expect is not None and tok != expect:
            raise IRError(f"expected {expect!r}, got {tok!r}", self.pos(), self.text)
        self.i += 1
        return tok

    def name(self) -> str:
        tok = self.peek()
        if tok is None:
            raise IRError("unexpected end of input, expected ';'", self.pos(), self.text)
        if not re.match(r"[A-Za-z_]", tok):
            raise IRError(f"expected a name, got {tok!r}", self.pos(), self.text)
        return self.take()

    def names(self, stop: str) -> list[str]:
        out = [self.name()]
        while self.peek() != stop:
            if self.peek() == ",":
                self.take()
            out.append(self.name())
        return out

    def parse(self) -> CircuitIR:
        ir = CircuitIR()
        self.measured: set[str] = set()
        while self.peek() is not None:
            if self.peek() == "repeat":
                self.take()
                n = self.take()
                if not n.isdigit() or int(n) < 1:
                    raise IRError("repeat count must be a positive integer", self.pos(), self.text)
                if ir.shots != 1:
                    raise IRError("only one repeat block is supported", self.pos(), self.text)
                ir.shots = int(n)
                self.take("{")
                while self.peek() != "}":
                    self.statement(ir, top=True)
                self.take("}")
            else:
                self.statement(ir, top=True)
        ir.validate()
        return ir

    def statement(self, ir: CircuitIR, top: bool) -> None:
        start, n = self.pos(), len(ir.body)
        self._statement(ir, top, start)
        if len(ir.body) > n:
            try:
                check_statement(ir.body[-1], set(ir.qubits), set(ir.bits), self.measured)
            except IRError as exc:
                raise IRError(str(exc), start, self.text) from None
        elif len(set(ir.qubits)) != len(ir.qubits) or len(set(ir.bits)) != len(ir.bits):
            raise IRError("duplicate declaration", start, self.text)

    def _statement(self, ir: CircuitIR, top: bool, start: int) -> None:
        kw = self.name()
        if kw in ("qubit", "bit"):
            if not top:
                raise IRError("declarations must be at top level", start, self.text)
            (ir.qubits if kw == "qubit" else ir.bits).extend(self.names(";"))
            self.take(";")
        elif kw == "measure":
            q = self.name()
            self.take("->")
            b = self.name()
            self.take(";")
            ir.body.append(Measure(q, b))
        elif kw == "barrier":
            qs = self.names(";")
            self.take(";")
            ir.body.append(Barrier(tuple(qs)))
        elif kw == "if":
            self.take("(")
            bits = [self.name()]
            while self.peek() == "^":
                self.take()
                bits.append(self.name())
            value = 1
            if self.peek() == "==":
                self.take()
                v = self.take()
                if v not in ("0", "1"):
                    raise IRError("condition must compare with 0 or 1", self.pos(), self.text)
                value = int(v)
            self.take(")")
            body: list[Gate] = []
            if self.peek() == "{":
                self.take()
                while self.peek() != "}":
                    body.append(self.gate(self.name()))
                self.take("}")
            else:
                body.append(self.gate(self.name()))
            ir.body.append(Conditional(tuple(bits), tuple(body), value))
        else:
            ir.body.append(self.gate(kw))

    def gate(self, name: str) -> Gate:
        name = ALIASES.get(name, name)
        qs = self.names(";")
        self.take(";")
        return Gate(name, tuple(qs))


def parse_ir(text: str) -> CircuitIR:
    return _Parser(text).parse()
