"""Text grammar for predicates.

    color = "green" AND type = "shoes" AND (age IN (20,25) OR age IN [0,10))
    (age > 20 AND age < 25) OR age < 10

Label equalities may only be joined by AND. Range comparisons on a single
numeric attribute may be nested with AND/OR freely; they are reduced to a
normalized interval union. Comparisons desugar against the schema bounds.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .core import (
    CATEGORICAL,
    AttributeSchema,
    Interval,
    Predicate,
    SchemaError,
    intersect_unions,
    normalize_intervals,
)


class PredicateSyntaxError(SchemaError):
    pass


_TOKEN = re.compile(
    r"""\s*(?:
        (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
      | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
      | (?P<op>>=|<=|==|=|>|<)
      | (?P<punct>[()\[\],])
      | (?P<word>[A-Za-z_][A-Za-z0-9_.\-]*)
    )""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PredicateSyntaxError(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "word" and value.upper() in ("AND", "OR", "IN"):
            kind, value = "kw", value.upper()
        out.append((kind, value))
        pos = m.end()
    return out


@dataclass
class _Conj:
    labels: set
    range_attr: str | None = None
    union: tuple = ()


class _Parser:
    def __init__(self, tokens, schema: AttributeSchema):
        self.toks = tokens
        self.i = 0
        self.schema = schema

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind
            raise PredicateSyntaxError(f"expected {want} at token {self.i}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self) -> _Conj:
        node = self.or_expr()
        if self.i != len(self.toks):
            raise PredicateSyntaxError(f"trailing input at token {self.i}: {self.peek()[1]!r}")
        return node

    def or_expr(self) -> _Conj:
        node = self.and_expr()
        while self.peek() == ("kw", "OR"):
            self.i += 1
            node = _or(node, self.and_expr())
        return node

    def and_expr(self) -> _Conj:
        node = self.unary()
        while self.peek() == ("kw", "AND"):
            self.i += 1
            node = _and(node, self.unary())
        return node

    def unary(self) -> _Conj:
        if self.peek() == ("punct", "("):
            self.i += 1
            node = self.or_expr()
            self.take("punct", ")")
            return node
        return self.atom()

    def atom(self) -> _Conj:
        _, name = self.take("word")
        attr = self.schema[name]
        kind, value = self.peek()
        if (kind, value) == ("kw", "IN"):
            self.i += 1
            if attr.kind == CATEGORICAL:
                raise SchemaError(f"range term on categorical attribute {name!r}")
            return _Conj(set(), name, normalize_intervals([self.interval()]))
        _, op = self.take("op")
        kind, raw = self.take()
        if attr.kind == CATEGORICAL:
            if op not in ("=", "=="):
                raise SchemaError(f"comparison {op} on categorical attribute {name!r}")
            if kind == "str":
                raw = _unquote(raw)
            elif kind not in ("word", "num"):
                raise PredicateSyntaxError(f"bad label value {raw!r}")
            return _Conj({(name, raw)})
        if kind != "num":
            raise SchemaError(f"numeric attribute {name!r} compared to non-number {raw!r}")
        v = float(raw)
        lo, hi = attr.lo, attr.hi
        if op in ("=", "=="):
            iv = (v, v, True, True)
        elif op == ">":
            iv = (v, hi, False, True)
        elif op == ">=":
            iv = (v, hi, True, True)
        elif op == "<":
            iv = (lo, v, True, False)
        else:
            iv = (lo, v, True, True)
        union = () if iv[0] > iv[1] else normalize_intervals([Interval(*iv)])
        return _Conj(set(), name, union)

    def interval(self) -> Interval:
        _, open_ = self.take("punct")
        if open_ not in "([":
            raise PredicateSyntaxError(f"expected ( or [ to open interval, got {open_!r}")
        lo = float(self.take("num")[1])
        self.take("punct", ",")
        hi = float(self.take("num")[1])
        _, close = self.take("punct")
        if close not in ")]":
            raise PredicateSyntaxError(f"expected ) or ] to close interval, got {close!r}")
        return Interval(lo, hi, open_ == "[", close == "]")


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


def _and(a: _Conj, b: _Conj) -> _Conj:
    labels = a.labels | b.labels
    if a.range_attr is None:
        return _Conj(labels, b.range_attr, b.union)
    if b.range_attr is None:
        return _Conj(labels, a.range_attr, a.union)
    if a.range_attr != b.range_attr:
        raise SchemaError(
            f"range terms over different attributes ({a.range_attr!r}, {b.range_attr!r}) are not supported"
        )
    return _Conj(labels, a.range_attr, intersect_unions(a.union, b.union))


def _or(a: _Conj, b: _Conj) -> _Conj:
    if a.labels or b.labels:
        raise SchemaError("OR is only supported between range terms on one attribute")
    if a.range_attr != b.range_attr:
        raise SchemaError(
            f"OR across different attributes ({a.range_attr!r}, {b.range_attr!r}) is not supported"
        )
    return _Conj(set(), a.range_attr, normalize_intervals(a.union + b.union))


def parse_predicate(text: str, schema: AttributeSchema) -> Predicate:
    """Parse ``text`` into a normalized :class:`Predicate`. Empty text matches all."""
    tokens = _tokenize(text)
    if not tokens:
        return Predicate()
    node = _Parser(tokens, schema).parse()
    return Predicate(frozenset(node.labels), node.range_attr, node.union)
