"""SPICE-dialect netlist parsing and elaboration.

The dialect covers exactly the element set the simulator solves: resistors,
DC/sinusoidal voltage sources, DC current sources, NPN BJTs and memristors,
plus the ``.model``, ``.op``, ``.dc``, ``.tran``, ``.four`` and ``.end``
directives.  See ``docs/netlist.md`` for the token-by-token grammar.

Parsing happens in two stages: :func:`parse_netlist` classifies the raw text
into element/directive records (keeping source line numbers for diagnostics),
and :func:`elaborate` resolves model cards, interns node names to dense
indices with ground ``0`` fixed at index 0, and validates connectivity.
Both stages are pure functions; the resulting :class:`Circuit` is immutable
and may be shared across analysis workers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .devices import BjtParams, MemristorParams


class NetlistError(Exception):
    """Parse or elaboration failure, with the source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# Magnitude suffixes, case-insensitive; 'meg' must be matched before 'm'.
SUFFIXES = {
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "meg": 1e6,
    "g": 1e9,
    "t": 1e12,
}

_VALUE_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([A-Za-z]*)$")


def parse_value(token: str) -> float:
    """Parse a SPICE magnitude token: ``9.3k`` -> 9300.0, ``2meg`` -> 2e6.

    Letters after the numeral are checked for a magnitude suffix
    (longest match first, so ``meg`` wins over ``m``); any remaining
    letters are ignored, SPICE-style, so ``10kOhm`` parses as 10000.
    """
    m = _VALUE_RE.match(token.strip())
    if m is None:
        raise NetlistError(f"malformed numeric value {token!r}")
    number = float(m.group(1))
    letters = m.group(2).lower()
    if letters.startswith("meg"):
        return number * 1e6
    if letters[:1] in SUFFIXES:
        return number * SUFFIXES[letters[0]]
    return number


@dataclass(frozen=True)
class RawLine:
    """One merged netlist statement: element or directive."""

    lineno: int
    kind: str             # element letter ('R','V','I','Q','M') or directive name
    tokens: tuple[str, ...]
    text: str


@dataclass(frozen=True)
class RawNetlist:
    title: str
    lines: tuple[RawLine, ...]


_ELEMENT_LETTERS = "RVIQM"
_DIRECTIVES = {".MODEL", ".OP", ".DC", ".TRAN", ".FOUR", ".END"}


def parse_netlist(text: str) -> RawNetlist:
    """Split netlist text into classified element/directive records.

    The first line is the title (uninterpreted).  Comment lines (leading
    ``*``), inline ``;`` comments and blank lines are dropped, ``+`` lines
    are merged into the preceding statement, and ``.end`` stops parsing.
    """
    src = text.splitlines()
    title = src[0].strip() if src else ""
    merged: list[list] = []  # [lineno, text]
    for lineno, raw in enumerate(src[1:], start=2):
        line = raw.split(";", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("+"):
            if not merged:
                raise NetlistError("continuation with nothing to continue", lineno)
            merged[-1][1] += " " + line[1:].strip()
            continue
        merged.append([lineno, line])

    records: list[RawLine] = []
    for lineno, line in merged:
        tokens = tuple(line.split())
        head = tokens[0].upper()
        if head.startswith("."):
            if head == ".END":
                break
            if head not in _DIRECTIVES:
                raise NetlistError(f"unknown directive {tokens[0]!r}", lineno)
            records.append(RawLine(lineno, head, tokens, line))
        else:
            letter = head[0]
            if letter not in _ELEMENT_LETTERS:
                raise NetlistError(
                    f"unknown element letter {tokens[0]!r}", lineno)
            records.append(RawLine(lineno, letter, tokens, line))
    return RawNetlist(title=title, lines=tuple(records))


# --------------------------------------------------------------------------
# Typed components and directives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Resistor:
    name: str
    pos: str
    neg: str
    resistance: float

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.pos, self.neg)


@dataclass(frozen=True)
class SinSpec:
    offset: float
    amplitude: float
    frequency: float


@dataclass(frozen=True)
class VSource:
    name: str
    pos: str
    neg: str
    dc: float | None = None
    sin: SinSpec | None = None

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.pos, self.neg)

    def value(self, t: float | None = None) -> float:
        """Source voltage at time t; DC analyses use t = 0."""
        if self.sin is None:
            return self.dc if self.dc is not None else 0.0
        tt = 0.0 if t is None else t
        return self.sin.offset + self.sin.amplitude * math.sin(
            2.0 * math.pi * self.sin.frequency * tt)


@dataclass(frozen=True)
class ISource:
    name: str
    pos: str
    neg: str
    dc: float = 0.0

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.pos, self.neg)

    def value(self, t: float | None = None) -> float:
        return self.dc


@dataclass(frozen=True)
class Bjt:
    name: str
    collector: str
    base: str
    emitter: str
    model: str
    params: BjtParams

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.collector, self.base, self.emitter)


@dataclass(frozen=True)
class Memristor:
    name: str
    pos: str
    neg: str
    model: str
    params: MemristorParams

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.pos, self.neg)


Component = Resistor | VSource | ISource | Bjt | Memristor


@dataclass(frozen=True)
class OpDirective:
    pass


@dataclass(frozen=True)
class DcSweepDirective:
    source: str
    start: float
    stop: float
    step: float


@dataclass(frozen=True)
class TranDirective:
    tstep: float
    tstop: float
    tstart: float = 0.0


@dataclass(frozen=True)
class FourDirective:
    fundamental: float
    nharmonics: int
    signals: tuple[str, ...]


Directive = OpDirective | DcSweepDirective | TranDirective | FourDirective

GROUND = "0"


@dataclass(frozen=True)
class Circuit:
    """Elaborated netlist: typed components, resolved models, node indices."""

    title: str
    components: tuple[Component, ...]
    models: dict[str, BjtParams | MemristorParams]
    directives: tuple[Directive, ...]
    node_map: dict[str, int]   # node name -> dense index, ground at 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_map)

    def node_index(self, name: str) -> int:
        return self.node_map[name.upper()]

    def node_names(self) -> list[str]:
        return sorted(self.node_map, key=self.node_map.get)

    def component(self, name: str) -> Component:
        target = name.upper()
        for c in self.components:
            if c.name == target:
                return c
        raise KeyError(name)

    def of_type(self, cls) -> list:
        return [c for c in self.components if isinstance(c, cls)]


# --------------------------------------------------------------------------
# Elaboration
# --------------------------------------------------------------------------

_MODEL_KINDS = {"NPN", "MEMR"}


def _parse_params(body: str, lineno: int) -> dict[str, float]:
    """Parse a KEY=VALUE parameter list such as a model-card body."""
    out: dict[str, float] = {}
    for key, raw in re.findall(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^\s()=]+)",
                               body):
        try:
            out[key.upper()] = parse_value(raw)
        except NetlistError as exc:
            raise NetlistError(f"bad value for {key}: {exc.message}", lineno)
    return out


def _parse_model(rec: RawLine) -> tuple[str, BjtParams | MemristorParams]:
    text = rec.text
    m = re.match(r"(?i)^\.model\s+(\S+)\s+([A-Za-z]+)\s*\((.*)\)\s*$", text)
    if m is None:
        raise NetlistError("malformed .model card (expected NAME KIND(...))",
                           rec.lineno)
    name, kind, body = m.group(1).upper(), m.group(2).upper(), m.group(3)
    if kind not in _MODEL_KINDS:
        raise NetlistError(f"unknown model kind {m.group(2)!r}", rec.lineno)
    params = _parse_params(body, rec.lineno)
    try:
        if kind == "NPN":
            card: BjtParams | MemristorParams = BjtParams(
                is_sat=params.pop("IS", 1e-14),
                bf=params.pop("BF", 100.0),
                vaf=params.pop("VAF", math.inf),
                br=params.pop("BR", 1.0),
            )
        else:
            card = MemristorParams(
                r_on=params.pop("RON", 100.0),
                r_off=params.pop("ROFF", 16e3),
                d=params.pop("D", 10e-9),
                mu_v=params.pop("UV", 1e-14),
                p=int(params.pop("P", 1)),
                x_init=params.pop("XINIT", 0.5),
                window=bool(params.pop("WINDOW", 1.0)),
            )
    except ValueError as exc:
        raise NetlistError(str(exc), rec.lineno)
    if params:
        raise NetlistError(
            f"unknown model parameter(s): {', '.join(sorted(params))}",
            rec.lineno)
    return name, card


def _value_at(tokens: tuple[str, ...], idx: int, lineno: int,
              what: str) -> float:
    if idx >= len(tokens):
        raise NetlistError(f"missing {what}", lineno)
    try:
        return parse_value(tokens[idx])
    except NetlistError as exc:
        raise NetlistError(f"bad {what}: {exc.message}", lineno)


def _parse_source_spec(rec: RawLine) -> tuple[float | None, SinSpec | None]:
    """Parse the value part of a V line: ``DC v`` | ``SIN(voff vamp freq)`` | ``v``."""
    rest = rec.text.split(None, 3)[3]
    m = re.match(r"(?i)^sin\s*\(([^)]*)\)\s*$", rest)
    if m is not None:
        args = m.group(1).split()
        if len(args) != 3:
            raise NetlistError("SIN() takes exactly (voff vamp freq)",
                               rec.lineno)
        voff, vamp, freq = (parse_value(a) for a in args)
        if freq <= 0:
            raise NetlistError("SIN frequency must be positive", rec.lineno)
        return None, SinSpec(voff, vamp, freq)
    toks = rest.split()
    if toks[0].upper() == "DC":
        if len(toks) != 2:
            raise NetlistError("DC takes exactly one value", rec.lineno)
        return _value_at(tuple(toks), 1, rec.lineno, "DC value"), None
    if len(toks) != 1:
        raise NetlistError(f"unrecognized source spec {rest!r}", rec.lineno)
    return _value_at(tuple(toks), 0, rec.lineno, "source value"), None


def _parse_directive(rec: RawLine) -> Directive:
    t = rec.tokens
    if rec.kind == ".OP":
        return OpDirective()
    if rec.kind == ".DC":
        if len(t) != 5:
            raise NetlistError(".dc takes SOURCE START STOP STEP", rec.lineno)
        start = _value_at(t, 2, rec.lineno, "sweep start")
        stop = _value_at(t, 3, rec.lineno, "sweep stop")
        step = _value_at(t, 4, rec.lineno, "sweep step")
        if step <= 0:
            raise NetlistError("sweep step must be positive", rec.lineno)
        if stop < start:
            raise NetlistError("sweep stop must be >= start", rec.lineno)
        return DcSweepDirective(t[1].upper(), start, stop, step)
    if rec.kind == ".TRAN":
        if len(t) not in (3, 4):
            raise NetlistError(".tran takes TSTEP TSTOP [TSTART]", rec.lineno)
        tstep = _value_at(t, 1, rec.lineno, "tstep")
        tstop = _value_at(t, 2, rec.lineno, "tstop")
        tstart = _value_at(t, 3, rec.lineno, "tstart") if len(t) == 4 else 0.0
        if tstep <= 0:
            raise NetlistError("tstep must be positive", rec.lineno)
        if not tstop > tstart >= 0:
            raise NetlistError("require tstop > tstart >= 0", rec.lineno)
        return TranDirective(tstep, tstop, tstart)
    if rec.kind == ".FOUR":
        if len(t) < 3:
            raise NetlistError(".four takes FREQ [NHARM] SIGNAL...", rec.lineno)
        fundamental = _value_at(t, 1, rec.lineno, "fundamental frequency")
        if fundamental <= 0:
            raise NetlistError("fundamental must be positive", rec.lineno)
        rest = list(t[2:])
        nharm = 9
        if _VALUE_RE.match(rest[0]):   # bare number = harmonic count
            nharm = int(parse_value(rest[0]))
            rest = rest[1:]
        if nharm < 2:
            raise NetlistError("nharmonics must be >= 2", rec.lineno)
        if not rest:
            raise NetlistError(".four needs at least one signal", rec.lineno)
        return FourDirective(fundamental, nharm,
                             tuple(s.upper() for s in rest))
    raise NetlistError(f"unhandled directive {rec.kind}", rec.lineno)


def elaborate(raw: RawNetlist) -> Circuit:
    """Resolve models, intern nodes and validate the parsed netlist."""
    models: dict[str, BjtParams | MemristorParams] = {}
    for rec in raw.lines:
        if rec.kind == ".MODEL":
            name, card = _parse_model(rec)
            if name in models:
                raise NetlistError(f"duplicate model {name}", rec.lineno)
            models[name] = card

    node_map: dict[str, int] = {GROUND: 0}

    def intern(node: str) -> str:
        key = node.upper()
        if key not in node_map:
            node_map[key] = len(node_map)
        return key

    components: list[Component] = []
    directives: list[Directive] = []
    seen: dict[str, int] = {}
    for rec in raw.lines:
        if rec.kind == ".MODEL":
            continue
        if rec.kind.startswith("."):
            directives.append(_parse_directive(rec))
            continue

        t = rec.tokens
        name = t[0].upper()
        if name in seen:
            raise NetlistError(
                f"duplicate component name {name} (first on line {seen[name]})",
                rec.lineno)
        seen[name] = rec.lineno

        if rec.kind == "R":
            if len(t) != 4:
                raise NetlistError("resistor takes N+ N- VALUE", rec.lineno)
            value = _value_at(t, 3, rec.lineno, "resistance")
            if value <= 0:
                raise NetlistError("resistance must be positive", rec.lineno)
            components.append(Resistor(name, intern(t[1]), intern(t[2]), value))
        elif rec.kind == "V":
            if len(t) < 4:
                raise NetlistError("voltage source takes N+ N- SPEC", rec.lineno)
            dc, sin = _parse_source_spec(rec)
            components.append(VSource(name, intern(t[1]), intern(t[2]),
                                      dc=dc, sin=sin))
        elif rec.kind == "I":
            if len(t) not in (4, 5):
                raise NetlistError("current source takes N+ N- [DC] VALUE",
                                   rec.lineno)
            idx = 4 if len(t) == 5 else 3
            if len(t) == 5 and t[3].upper() != "DC":
                raise NetlistError(f"unrecognized current source spec "
                                   f"{t[3]!r}", rec.lineno)
            value = _value_at(t, idx, rec.lineno, "current value")
            components.append(ISource(name, intern(t[1]), intern(t[2]), value))
        elif rec.kind == "Q":
            if len(t) != 5:
                raise NetlistError("BJT takes NC NB NE MODEL", rec.lineno)
            model = t[4].upper()
            card = models.get(model)
            if not isinstance(card, BjtParams):
                raise NetlistError(f"unresolved NPN model {model}", rec.lineno)
            components.append(Bjt(name, intern(t[1]), intern(t[2]),
                                  intern(t[3]), model, card))
        elif rec.kind == "M":
            if len(t) not in (4, 5):
                raise NetlistError("memristor takes N+ N- MODEL [XINIT=v]",
                                   rec.lineno)
            model = t[3].upper()
            card = models.get(model)
            if not isinstance(card, MemristorParams):
                raise NetlistError(f"unresolved memristor model {model}",
                                   rec.lineno)
            params = card
            if len(t) == 5:
                override = _parse_params(t[4], rec.lineno)
                if set(override) - {"XINIT"}:
                    raise NetlistError("only XINIT may be set per instance",
                                       rec.lineno)
                if "XINIT" not in override:
                    raise NetlistError(f"unrecognized trailing token {t[4]!r}",
                                       rec.lineno)
                try:
                    params = replace(card, x_init=override["XINIT"])
                except ValueError as exc:
                    raise NetlistError(str(exc), rec.lineno)
            components.append(Memristor(name, intern(t[1]), intern(t[2]),
                                        model, params))

    if len(node_map) == 1 and components:
        raise NetlistError("no ground node (node 0) in netlist")
    touches: dict[str, int] = {}
    for comp in components:
        for node in comp.nodes:
            touches[node] = touches.get(node, 0) + 1
    if GROUND not in touches and components:
        raise NetlistError("no ground node (node 0) in netlist")
    for node, count in touches.items():
        if node != GROUND and count < 2:
            raise NetlistError(f"dangling node {node} "
                               f"(appears in only one terminal)")

    return Circuit(title=raw.title, components=tuple(components),
                   models=models, directives=tuple(directives),
                   node_map=node_map)


def parse_string(text: str) -> Circuit:
    """Parse and elaborate netlist text in one step."""
    return elaborate(parse_netlist(text))


def parse_file(path: str | Path) -> Circuit:
    return parse_string(Path(path).read_text())


# --------------------------------------------------------------------------
# Round-trip printing
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def format_circuit(circuit: Circuit) -> str:
    """Print a Circuit back to the dialect; re-parsing yields an equal Circuit."""
    out = [circuit.title]
    for c in circuit.components:
        if isinstance(c, Resistor):
            out.append(f"{c.name} {c.pos} {c.neg} {_fmt(c.resistance)}")
        elif isinstance(c, VSource):
            if c.sin is not None:
                out.append(f"{c.name} {c.pos} {c.neg} SIN({_fmt(c.sin.offset)} "
                           f"{_fmt(c.sin.amplitude)} {_fmt(c.sin.frequency)})")
            else:
                out.append(f"{c.name} {c.pos} {c.neg} DC {_fmt(c.dc)}")
        elif isinstance(c, ISource):
            out.append(f"{c.name} {c.pos} {c.neg} DC {_fmt(c.dc)}")
        elif isinstance(c, Bjt):
            out.append(f"{c.name} {c.collector} {c.base} {c.emitter} {c.model}")
        elif isinstance(c, Memristor):
            out.append(f"{c.name} {c.pos} {c.neg} {c.model} "
                       f"XINIT={_fmt(c.params.x_init)}")
    for name, card in circuit.models.items():
        if isinstance(card, BjtParams):
            vaf = "" if math.isinf(card.vaf) else f" VAF={_fmt(card.vaf)}"
            out.append(f".model {name} NPN(IS={_fmt(card.is_sat)} "
                       f"BF={_fmt(card.bf)}{vaf} BR={_fmt(card.br)})")
        else:
            win = "" if card.window else " WINDOW=0"
            out.append(f".model {name} MEMR(RON={_fmt(card.r_on)} "
                       f"ROFF={_fmt(card.r_off)} D={_fmt(card.d)} "
                       f"UV={_fmt(card.mu_v)} P={card.p} "
                       f"XINIT={_fmt(card.x_init)}{win})")
    for d in circuit.directives:
        if isinstance(d, OpDirective):
            out.append(".op")
        elif isinstance(d, DcSweepDirective):
            out.append(f".dc {d.source} {_fmt(d.start)} {_fmt(d.stop)} "
                       f"{_fmt(d.step)}")
        elif isinstance(d, TranDirective):
            out.append(f".tran {_fmt(d.tstep)} {_fmt(d.tstop)} {_fmt(d.tstart)}")
        elif isinstance(d, FourDirective):
            sigs = " ".join(d.signals)
            out.append(f".four {_fmt(d.fundamental)} {d.nharmonics} {sigs}")
    out.append(".end")
    return "\n".join(out) + "\n"
