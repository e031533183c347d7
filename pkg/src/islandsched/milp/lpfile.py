"""Read and write models in the CPLEX LP text format.

Only the subset the model layer produces is supported: a linear objective,
linear constraints with one sense each, bounds, ``General`` and ``Binary``
sections.  Variable and constraint names are written as given, so they must
be valid LP identifiers.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from .model import INF, Constraint, LinExpr, MilpModel, ModelError

_NAME_OK = re.compile(r"^[A-Za-z_!\"#$%&()/,;?@`'{}|~][A-Za-z0-9_!\"#$%&()/,.;?@`'{}|~\[\]]*$")


def _num(v: float) -> str:
    return repr(float(v))


def _expr(expr: LinExpr, names: list[str]) -> str:
    parts = []
    for i in sorted(expr.terms):
        c = expr.terms[i]
        if c == 0.0:
            continue
        parts.append(f"{'-' if c < 0 else '+'} {_num(abs(c))} {names[i]}")
    if not parts:
        return "0 " + names[0] if names else "0"
    return " ".join(parts)


def _wrap(s: str, width: int = 200) -> str:
    out, line = [], ""
    for tok in s.split(" "):
        if len(line) + len(tok) + 1 > width and line:
            out.append(line)
            line = " "
        line += ("" if not line or line == " " else " ") + tok
    out.append(line)
    return "\n".join(out)


def dump_lp(model: MilpModel, path) -> None:
    names = [v.name for v in model.vars]
    for n in names + [c.name for c in model.constraints]:
        if not _NAME_OK.match(n):
            raise ModelError(f"name {n!r} is not a valid LP identifier")
    lines = [f"\\ {model.name}", "Minimize"]
    obj = _expr(model.objective, names)
    if model.objective.const:
        obj += f" + {_num(model.objective.const)} __const"
    lines.append(_wrap(" obj: " + obj))
    lines.append("Subject To")
    for con in model.constraints:
        sense = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
        lines.append(_wrap(f" {con.name}: {_expr(con.expr, names)} {sense} {_num(con.rhs)}"))
    if model.objective.const:
        lines.append(" __fix_const: __const = 1")
    lines.append("Bounds")
    # every variable is listed here, in index order, so a reload keeps the order
    for v in model.vars:
        lo = "-inf" if v.lb == -INF else _num(v.lb)
        hi = "+inf" if v.ub == INF else _num(v.ub)
        if v.lb == v.ub:
            lines.append(f" {v.name} = {_num(v.lb)}")
        else:
            lines.append(f" {lo} <= {v.name} <= {hi}")
    gen = [v.name for v in model.vars if v.integer and not (v.is_binary and v.lb == 0 and v.ub == 1)]
    bins = [v.name for v in model.vars if v.is_binary and v.lb == 0 and v.ub == 1]
    if gen:
        lines.append("General")
        lines.append(_wrap(" " + " ".join(gen)))
    if bins:
        lines.append("Binary")
        lines.append(_wrap(" " + " ".join(bins)))
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


_SECTIONS = {
    "minimize": "obj", "minimum": "obj", "min": "obj",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "general": "gen", "generals": "gen", "gen": "gen",
    "binary": "bin", "binaries": "bin", "bin": "bin",
    "end": "end",
}


_TOKEN = re.compile(
    r"\s*(?:(?P<sign>[+-])|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf(?:inity)?\b)"
    r"|(?P<name>[^\s+\-<>=:]+))"
)


def _parse_terms(text: str) -> tuple[dict[str, float], float]:
    terms: dict[str, float] = {}
    const = 0.0
    sign, coef = 1.0, None
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ModelError(f"cannot parse expression {text!r}")
        pos = m.end()
        if m.group("sign"):
            if coef is not None:
                const += sign * coef
                coef = None
            sign = -1.0 if m.group("sign") == "-" else 1.0
        elif m.group("num"):
            coef = _bound(m.group("num"))
        else:
            n = m.group("name")
            terms[n] = terms.get(n, 0.0) + sign * (1.0 if coef is None else coef)
            sign, coef = 1.0, None
    if coef is not None:
        const += sign * coef
    return terms, const


def load_lp(path) -> MilpModel:
    text = Path(path).read_text()
    name = "model"
    section = None
    buf: dict[str, list[str]] = {"obj": [], "st": [], "bounds": [], "gen": [], "bin": []}
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("\\"):
            if name == "model" and len(line) > 1:
                name = line[1:].strip()
            continue
        if not line:
            continue
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            continue
        if section is None or section == "end":
            raise ModelError(f"unexpected text outside a section: {line!r}")
        buf[section].append(line)

    model = MilpModel(name)
    order: list[str] = []
    lb: dict[str, float] = {}
    ub: dict[str, float] = {}

    def see(n):
        if n not in lb:
            order.append(n)
            lb[n], ub[n] = 0.0, INF

    obj_text = " ".join(buf["obj"])
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    obj_terms, obj_const = _parse_terms(obj_text)
    for n in obj_terms:
        see(n)

    # constraints may span lines; each ends with a sense and a number
    rows = []
    cur = ""
    for line in buf["st"]:
        cur += " " + line
        if re.search(r"(<=|>=|=<|=>|<|>|=)\s*[+-]?\s*[0-9.eE+-]+(inf)?\s*$", cur):
            rows.append(cur.strip())
            cur = ""
    if cur.strip():
        raise ModelError(f"unterminated constraint: {cur.strip()!r}")
    parsed = []
    for row in rows:
        cname = ""
        if ":" in row:
            cname, row = (s.strip() for s in row.split(":", 1))
        m = re.match(r"^(.*?)(<=|>=|=<|=>|<|>|=)\s*([+-]?\s*\S+)$", row)
        if not m:
            raise ModelError(f"cannot parse constraint {row!r}")
        terms, const = _parse_terms(m.group(1))
        sense = {"<=": "<=", "=<": "<=", "<": "<=", ">=": ">=", "=>": ">=", ">": ">=", "=": "=="}[m.group(2)]
        rhs = float(m.group(3).replace(" ", ""))
        for n in terms:
            see(n)
        parsed.append((cname, terms, const, sense, rhs))

    bound_order: list[str] = []
    for line in buf["bounds"]:
        s = line.replace(" ", "")
        lo_m = re.match(r"^([^<>=]+)<=([^<>=]+)<=([^<>=]+)$", s)
        if lo_m:
            see(lo_m.group(2))
            bound_order.append(lo_m.group(2))
            lb[lo_m.group(2)] = _bound(lo_m.group(1))
            ub[lo_m.group(2)] = _bound(lo_m.group(3))
            continue
        if s.lower().endswith("free"):
            n = s[:-4]
            see(n)
            bound_order.append(n)
            lb[n], ub[n] = -INF, INF
            continue
        eq = re.match(r"^([^<>=]+)(<=|>=|=)([^<>=]+)$", s)
        if not eq:
            raise ModelError(f"cannot parse bound {line!r}")
        a, op, b = eq.groups()
        if _is_number(a):
            a, b = b, a
            op = {"<=": ">=", ">=": "<=", "=": "="}[op]
        see(a)
        bound_order.append(a)
        if op == "<=":
            ub[a] = _bound(b)
        elif op == ">=":
            lb[a] = _bound(b)
        else:
            lb[a] = ub[a] = _bound(b)

    gens = {t for line in buf["gen"] for t in line.split()}
    bins = {t for line in buf["bin"] for t in line.split()}
    for n in sorted(gens | bins):
        see(n)
    has_const = "__const" in lb
    listed = set(bound_order)
    order = list(dict.fromkeys(bound_order)) + [n for n in order if n not in listed]
    for n in order:
        if n == "__const":
            continue
        if n in bins:
            model.add_var(n, lb[n], ub[n], binary=True)
        else:
            model.add_var(n, lb[n], ub[n], integer=n in gens)

    def expr(terms, const=0.0):
        e = LinExpr(const=const)
        for n, c in terms.items():
            if n == "__const":
                e.const += c
            else:
                e.add(model.var(n), c)
        return e

    model.minimize(expr(obj_terms, obj_const))
    for cname, terms, const, sense, rhs in parsed:
        if cname == "__fix_const" and has_const:
            continue
        e = expr(terms, const) - rhs
        model.add_constr(Constraint(e, sense), cname)
    return model


def _is_number(s: str) -> bool:
    try:
        _bound(s)
        return True
    except ValueError:
        return False


def _bound(s: str) -> float:
    t = s.strip().lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return INF
    if t in ("-inf", "-infinity"):
        return -INF
    v = float(t)
    if math.isnan(v):
        raise ValueError(s)
    return v
