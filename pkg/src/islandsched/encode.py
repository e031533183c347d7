"""Mixed-integer encoding of a ReLU network inside a MilpModel."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .milp import LinExpr, MilpModel, Var, quicksum, solve_mip
from .surrogate import ActivationBounds, NeuralNet, forward, input_box

log = logging.getLogger(__name__)

# beyond this the big-M rows start to fight the solver tolerances
BIG_M_WARN = 1e4


class EncodingError(ValueError):
    pass


@dataclass
class ReluEncoding:
    z_hat: list[list[Var]]
    z: list[list[LinExpr | Var]]
    a: list[list[Var | None]]
    output: Var
    bounds: ActivationBounds

    @property
    def binaries(self) -> list[Var]:
        return [v for layer in self.a for v in layer if v is not None]


def _check_bounds(net: NeuralNet, bounds: ActivationBounds | None) -> None:
    if bounds is None:
        raise EncodingError("activation bounds are required to encode the network")
    hidden = net.hidden
    if len(bounds.lo) != len(hidden) or len(bounds.hi) != len(hidden):
        raise EncodingError(f"bounds cover {len(bounds.lo)} layers, network has {len(hidden)}")
    for m, lyr in enumerate(hidden):
        n = lyr.w.shape[1]
        if bounds.lo[m].shape != (n,) or bounds.hi[m].shape != (n,):
            raise EncodingError(f"missing bounds for neurons of hidden layer {m}")


def encode_relu(net: NeuralNet, bounds: ActivationBounds | None, input_vars: Sequence,
                model: MilpModel, *, prefix: str = "nn", linearize_stable: bool = False) -> ReluEncoding:
    """Add the network's constraints to ``model`` and return all handles.

    Per neuron: ``z <= zh - lo (1 - a)``, ``z >= zh``, ``z <= hi a``,
    ``z >= 0`` with ``a`` binary.  With ``linearize_stable`` a neuron whose
    pre-activation interval excludes zero gets a plain linear row instead.
    """
    _check_bounds(net, bounds)
    if len(input_vars) != net.n_inputs:
        raise EncodingError(f"network takes {net.n_inputs} inputs, got {len(input_vars)}")
    big = max(max(float(np.max(-lo)), float(np.max(hi))) for lo, hi in zip(bounds.lo, bounds.hi)) \
        if bounds.lo else 0.0
    if big > BIG_M_WARN:
        log.warning("big-M of %.3g exceeds %.0g; expect numerical trouble", big, BIG_M_WARN)

    prev: list = [LinExpr.of(v) for v in input_vars]
    zh_all, z_all, a_all = [], [], []
    for m, lyr in enumerate(net.hidden):
        lo_m, hi_m = bounds.lo[m], bounds.hi[m]
        act = bounds.stable_active(m) if linearize_stable else np.zeros(len(lo_m), bool)
        ina = bounds.stable_inactive(m) if linearize_stable else np.zeros(len(lo_m), bool)
        zh_l, z_l, a_l = [], [], []
        for n in range(lyr.w.shape[1]):
            lo, hi = float(lo_m[n]), float(hi_m[n])
            zh = model.add_var(f"{prefix}_zh_{m}_{n}", lo, hi)
            expr = quicksum(float(lyr.w[i, n]) * prev[i] for i in range(len(prev)) if lyr.w[i, n] != 0.0)
            model.add_constr(zh == expr + float(lyr.b[n]), f"{prefix}_aff_{m}_{n}")
            zh_l.append(zh)
            if act[n]:
                z_l.append(LinExpr.of(zh))
                a_l.append(None)
                continue
            if ina[n]:
                z_l.append(LinExpr())
                a_l.append(None)
                continue
            z = model.add_var(f"{prefix}_z_{m}_{n}", 0.0, hi)
            a = model.add_var(f"{prefix}_a_{m}_{n}", binary=True)
            model.add_constr(z - zh + lo * (1 - a) <= 0, f"{prefix}_up_{m}_{n}")
            model.add_constr(z - zh >= 0, f"{prefix}_lo_{m}_{n}")
            model.add_constr(z - hi * a <= 0, f"{prefix}_on_{m}_{n}")
            z_l.append(z)
            a_l.append(a)
        zh_all.append(zh_l)
        z_all.append(z_l)
        a_all.append(a_l)
        prev = [LinExpr.of(v) for v in z_l]

    out = net.layers[-1]
    slack = 1e-6 * max(1.0, abs(bounds.out_lo), abs(bounds.out_hi))
    f = model.add_var(f"{prefix}_out", bounds.out_lo - slack, bounds.out_hi + slack)
    expr = quicksum(float(out.w[i, 0]) * prev[i] for i in range(len(prev)) if out.w[i, 0] != 0.0)
    model.add_constr(f == expr + float(out.b[0]), f"{prefix}_outrow")
    return ReluEncoding(zh_all, z_all, a_all, f, bounds)


def encode(net: NeuralNet, bounds: ActivationBounds | None, input_vars: Sequence,
           model: MilpModel, **kw) -> Var:
    """Encode ``net`` into ``model``; returns the output variable."""
    return encode_relu(net, bounds, input_vars, model, **kw).output


# --- audit ---------------------------------------------------------------


@dataclass
class ExactnessReport:
    n_trials: int
    max_deviation: float
    witness: np.ndarray | None
    mip_min: float
    mip_max: float
    grid_min: float
    grid_max: float
    grid_tolerance: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def lipschitz_bound(net: NeuralNet) -> float:
    """Output change per unit max-norm input change."""
    L = 1.0
    for lyr in net.layers:
        L *= float(np.max(np.sum(np.abs(lyr.w), axis=0)))
    return L


def exactness_check(net: NeuralNet, bounds: ActivationBounds, n_trials: int = 100, seed: int = 0,
                    *, box=None, grid_points: int = 21, tol: float = 1e-5,
                    backend: str = "builtin", range_check: bool = True) -> ExactnessReport:
    """Compare the encoding against the forward pass.

    Random inputs from the box are fixed in the model and the MIP output is
    compared to ``forward``.  Then the output's min and max over the box are
    found by MIP and compared to a dense grid scan: the MIP extremes must
    bracket the grid extremes and sit within the grid's resolution of them.
    """
    box_lo, box_hi = input_box(net) if box is None else (np.asarray(box[0], float),
                                                         np.asarray(box[1], float))
    rng = np.random.default_rng(seed)
    model = MilpModel("exactness")
    xs = [model.add_var(f"x{i}", float(box_lo[i]), float(box_hi[i])) for i in range(net.n_inputs)]
    f = encode(net, bounds, xs, model)
    model.minimize(f)
    failures: list[str] = []
    worst, witness = 0.0, None
    for _ in range(n_trials):
        x = rng.uniform(box_lo, box_hi)
        for v, xi in zip(xs, x):
            v.lb = v.ub = float(xi)
        sol = solve_mip(model, backend=backend)
        ref = float(forward(net, x[None, :])[0])
        if not sol.ok:
            failures.append(f"MIP status {sol.status} at input {x.tolist()}")
            witness = x
            continue
        dev = abs(sol.value(f) - ref)
        if dev > worst:
            worst, witness = dev, x
    if worst > tol:
        failures.append(f"encoded output off by {worst:.3g} at input {witness.tolist()}")
    for v, lo, hi in zip(xs, box_lo, box_hi):
        v.lb, v.ub = float(lo), float(hi)

    mip_min = mip_max = grid_min = grid_max = math.nan
    gtol = math.nan
    if range_check:
        sol_min = solve_mip(model, backend=backend)
        model.minimize(-1.0 * f)
        sol_max = solve_mip(model, backend=backend)
        if not (sol_min.ok and sol_max.ok):
            failures.append(f"range MIP status {sol_min.status}/{sol_max.status}")
        else:
            mip_min, mip_max = sol_min.objective, -sol_max.objective
            axes = [np.linspace(lo, hi, grid_points) for lo, hi in zip(box_lo, box_hi)]
            grid = np.array(list(itertools.product(*axes)))
            y = forward(net, grid)
            grid_min, grid_max = float(y.min()), float(y.max())
            step = max(((hi - lo) / (grid_points - 1) for lo, hi in zip(box_lo, box_hi)), default=0.0)
            gtol = lipschitz_bound(net) * step / 2 + tol
            if mip_min > grid_min + tol or mip_max < grid_max - tol:
                failures.append("MIP range does not contain the grid range")
            if grid_min - mip_min > gtol or mip_max - grid_max > gtol:
                failures.append("MIP range exceeds the grid range by more than its resolution")
    return ExactnessReport(n_trials, worst, witness, mip_min, mip_max, grid_min, grid_max, gtol,
                           failures)
