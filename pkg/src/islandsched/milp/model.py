"""Declarative model layer: variables, linear expressions, constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

INF = math.inf


class ModelError(ValueError):
    pass


class LinExpr:
    """Sparse affine expression ``sum(coef * var) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[int, float] | None = None, const: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def of(x) -> "LinExpr":
        if isinstance(x, LinExpr):
            return x
        if isinstance(x, Var):
            return LinExpr({x.index: 1.0})
        return LinExpr(const=float(x))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add(self, other, scale: float = 1.0) -> "LinExpr":
        """In-place ``self += scale * other``."""
        if isinstance(other, Var):
            self.terms[other.index] = self.terms.get(other.index, 0.0) + scale
        elif isinstance(other, LinExpr):
            for k, v in other.terms.items():
                self.terms[k] = self.terms.get(k, 0.0) + scale * v
            self.const += scale * other.const
        else:
            self.const += scale * float(other)
        return self

    def __add__(self, other):
        return self.copy().add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().add(other, -1.0)

    def __rsub__(self, other):
        return LinExpr.of(other).copy().add(self, -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, k):
        if isinstance(k, (Var, LinExpr)):
            raise ModelError("products of variables are not linear")
        k = float(k)
        return LinExpr({i: k * v for i, v in self.terms.items()}, k * self.const)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def __le__(self, other):
        return Constraint(self - other, "<=")

    def __ge__(self, other):
        return Constraint(self - other, ">=")

    def __eq__(self, other):  # type: ignore[override]
        return Constraint(self - other, "==")

    __hash__ = None  # type: ignore[assignment]

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[i] for i, v in self.terms.items())

    def __repr__(self):
        return f"LinExpr({self.terms}, {self.const})"


def quicksum(items: Iterable) -> LinExpr:
    out = LinExpr()
    for it in items:
        out.add(it)
    return out


@dataclass(eq=False)
class Var:
    index: int
    name: str
    lb: float
    ub: float
    integer: bool = False

    @property
    def is_binary(self) -> bool:
        return self.integer and self.lb >= 0 and self.ub <= 1

    def _e(self):
        return LinExpr({self.index: 1.0})

    def __add__(self, o):
        return self._e() + o

    __radd__ = __add__

    def __sub__(self, o):
        return self._e() - o

    def __rsub__(self, o):
        return LinExpr.of(o) - self._e()

    def __neg__(self):
        return self._e() * -1.0

    def __mul__(self, k):
        return self._e() * k

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self._e() / k

    def __le__(self, o):
        return self._e() <= o

    def __ge__(self, o):
        return self._e() >= o

    def __eq__(self, o):  # type: ignore[override]
        return self._e() == o

    __hash__ = object.__hash__


@dataclass
class Constraint:
    expr: LinExpr  # expr (sense) 0
    sense: str
    name: str = ""

    @property
    def rhs(self) -> float:
        return -self.expr.const


@dataclass
class ModelArrays:
    c: np.ndarray
    c0: float
    a: sparse.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray


@dataclass
class MilpModel:
    name: str = "model"
    vars: list[Var] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    _names: dict[str, Var] = field(default_factory=dict, repr=False)

    def add_var(self, name: str, lb: float = 0.0, ub: float = INF, *, binary: bool = False,
                integer: bool = False) -> Var:
        if name in self._names:
            raise ModelError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub, integer = max(lb, 0.0), min(ub, 1.0), True
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"invalid bounds for {name!r}: [{lb}, {ub}]")
        v = Var(len(self.vars), name, float(lb), float(ub), integer)
        self.vars.append(v)
        self._names[name] = v
        return v

    def var(self, name: str) -> Var:
        return self._names[name]

    def add_constr(self, con: Constraint, name: str = "") -> Constraint:
        if not isinstance(con, Constraint):
            raise ModelError("expected a linear constraint")
        coefs = list(con.expr.terms.values()) + [con.expr.const]
        if not all(math.isfinite(c) for c in coefs):
            raise ModelError(f"non-finite coefficient in constraint {name!r}")
        con.name = name or con.name or f"c{len(self.constraints)}"
        self.constraints.append(con)
        return con

    def minimize(self, expr) -> None:
        self.objective = LinExpr.of(expr).copy()

    @property
    def n_binary(self) -> int:
        return sum(v.is_binary for v in self.vars)

    def relaxed(self) -> "MilpModel":
        m = MilpModel(self.name + "_lp", [Var(v.index, v.name, v.lb, v.ub, False) for v in self.vars],
                      list(self.constraints), self.objective)
        m._names = {v.name: v for v in m.vars}
        return m

    def to_arrays(self) -> ModelArrays:
        n = len(self.vars)
        c = np.zeros(n)
        for i, v in self.objective.terms.items():
            c[i] += v
        rows, cols, vals = [], [], []
        lo = np.empty(len(self.constraints))
        hi = np.empty(len(self.constraints))
        for r, con in enumerate(self.constraints):
            for i, v in con.expr.terms.items():
                if v != 0.0:
                    rows.append(r)
                    cols.append(i)
                    vals.append(v)
            rhs = con.rhs
            lo[r] = rhs if con.sense in (">=", "==") else -INF
            hi[r] = rhs if con.sense in ("<=", "==") else INF
        a = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), n))
        return ModelArrays(
            c=c, c0=self.objective.const, a=a, row_lo=lo, row_hi=hi,
            lb=np.array([v.lb for v in self.vars]), ub=np.array([v.ub for v in self.vars]),
            integer=np.array([v.integer for v in self.vars], dtype=bool),
        )

    def violations(self, x: np.ndarray, tol: float = 1e-6) -> list[tuple[str, float]]:
        """Constraint and bound violations above ``tol`` (scaled by row norm)."""
        bad = []
        for con in self.constraints:
            act = con.expr.value(x)
            scale = max(1.0, max((abs(v) for v in con.expr.terms.values()), default=1.0))
            viol = {"<=": act, ">=": -act, "==": abs(act)}[con.sense] / scale
            if viol > tol:
                bad.append((con.name, viol))
        for v in self.vars:
            viol = max(v.lb - x[v.index], x[v.index] - v.ub)
            if viol > tol:
                bad.append((v.name, viol))
            if v.integer and abs(x[v.index] - round(x[v.index])) > tol:
                bad.append((v.name + ":integrality", abs(x[v.index] - round(x[v.index]))))
        return bad


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | unbounded | gap-limit | time-limit | node-limit
    objective: float = math.nan
    x: np.ndarray | None = None
    bound: float = math.nan
    nodes: int = 0
    iterations: int = 0
    snapshots: list[tuple[int, float, float]] = field(default_factory=list)
    backend: str = "builtin"

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None

    def value(self, v) -> float:
        if isinstance(v, Var):
            return float(self.x[v.index])
        return LinExpr.of(v).value(self.x)
