"""MILP encoding of the counterexample search over the overapproximated model.

Variables: two inputs ``x1, x2`` in the box, their latent points ``z1, z2``
constrained to the (possibly flipped) auxiliary boxes, head outputs
``y1, y2`` and the violation ``gamma`` which is maximized. Clip boxes are
linearized with one binary per latent coordinate and input copy
(``t = 1`` pins ``z`` to the lower auxiliary); a binary ``b`` selects which
side of the output interval is violated. Hidden relu units of the
auxiliaries are encoded with the usual big-M activation binaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import Mlp, SmileModel
from ..property import InputBox, RelationalProperty
from .problem import EQ, GE, LE, MilpProblem

GAMMA_MIN = 1e-6
M_SLACK = 0.1
M_FLOOR = 1e-6
# grid cells used to tighten auxiliary output bounds
SPLIT_PIECES = 256


def interval_bounds(mlp: Mlp, box: InputBox) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sound pre-activation bounds for every layer of ``mlp`` over ``box``."""
    lo, hi = box.low.copy(), box.high.copy()
    out = []
    for layer in mlp.layers:
        Wp, Wn = np.maximum(layer.W, 0.0), np.minimum(layer.W, 0.0)
        pre_lo = Wp @ lo + Wn @ hi + layer.b
        pre_hi = Wp @ hi + Wn @ lo + layer.b
        out.append((pre_lo, pre_hi))
        if layer.act == "relu":
            lo, hi = np.maximum(pre_lo, 0.0), np.maximum(pre_hi, 0.0)
        else:
            lo, hi = pre_lo, pre_hi
    return out


def split_bounds(mlp: Mlp, box: InputBox, pieces: int = SPLIT_PIECES) -> tuple[np.ndarray, np.ndarray]:
    """Output bounds of ``mlp`` on each cell of a regular grid over ``box``.

    Returns ``(lo, hi)`` of shape ``(cells, out_dim)``. Every input in the box
    lies in some cell, so maxima and minima over cells are sound and tighten
    as the cells shrink. Binary features are evaluated at their two values.
    """
    m = box.m
    per_dim = max(1, int(np.floor(pieces ** (1.0 / m) + 1e-9)))
    axes_lo, axes_hi = [], []
    for i in range(m):
        if i in box.binary:
            pts = np.array([0.0, 1.0])
            axes_lo.append(pts)
            axes_hi.append(pts)
        else:
            edges = np.linspace(box.low[i], box.high[i], per_dim + 1)
            axes_lo.append(edges[:-1])
            axes_hi.append(edges[1:])
    idx = np.stack(np.meshgrid(*[np.arange(len(a)) for a in axes_lo], indexing="ij"),
                   axis=-1).reshape(-1, m)
    lo = np.stack([axes_lo[i][idx[:, i]] for i in range(m)], axis=1)
    hi = np.stack([axes_hi[i][idx[:, i]] for i in range(m)], axis=1)
    for layer in mlp.layers:
        Wp, Wn = np.maximum(layer.W, 0.0), np.minimum(layer.W, 0.0)
        pre_lo = lo @ Wp.T + hi @ Wn.T + layer.b
        pre_hi = hi @ Wp.T + lo @ Wn.T + layer.b
        if layer.act == "relu":
            lo, hi = np.maximum(pre_lo, 0.0), np.maximum(pre_hi, 0.0)
        else:
            lo, hi = pre_lo, pre_hi
    return lo, hi


def head_range(model: SmileModel, box: InputBox) -> tuple[float, float]:
    """Interval of ``g`` over every latent point any auxiliary box can reach."""
    lo_l, hi_l = interval_bounds(model.aux_low, box)[-1]
    lo_u, hi_u = interval_bounds(model.aux_up, box)[-1]
    zlo = np.minimum(lo_l, lo_u)
    zhi = np.maximum(hi_l, hi_u)
    w = model.head.w
    ylo = float(np.sum(np.minimum(w * zlo, w * zhi)) + model.head.b)
    yhi = float(np.sum(np.maximum(w * zlo, w * zhi)) + model.head.b)
    return ylo, yhi


def default_big_m(model: SmileModel, box: InputBox) -> float:
    """Relaxation constant for one-sided properties: twice the head range, plus one."""
    ylo, yhi = head_range(model, box)
    return 2.0 * (yhi - ylo) + 1.0


def resolve_property(prop: RelationalProperty, model: SmileModel,
                     box: InputBox) -> RelationalProperty:
    if prop.auto_big_m:
        return prop.with_big_m(default_big_m(model, box))
    return prop


def _pad(value: float) -> float:
    return (1.0 + M_SLACK) * max(0.0, value) + M_FLOOR


class _Affine:
    """Linear expression ``sum coeffs[j] * var_j + const``."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs=None, const=0.0):
        self.coeffs = dict(coeffs or {})
        self.const = float(const)

    def scaled_add(self, other: "_Affine", a: float) -> None:
        for j, c in other.coeffs.items():
            self.coeffs[j] = self.coeffs.get(j, 0.0) + a * c
        self.const += a * other.const


@dataclass
class AuxEncoding:
    outputs: list  # one _Affine per latent coordinate
    out_lo: np.ndarray
    out_hi: np.ndarray
    relu_vars: list = field(default_factory=list)  # (post var, binary var, layer0 row k)
    cell_lo: np.ndarray | None = None
    cell_hi: np.ndarray | None = None


@dataclass
class GeneratorEncoding:
    problem: MilpProblem
    model: SmileModel
    prop: RelationalProperty
    box: InputBox
    x1: list
    x2: list
    z1: list
    z2: list
    t1: list
    t2: list
    y1: int
    y2: int
    b: int
    gamma: int
    aux: dict  # (copy, which) -> AuxEncoding
    gamma_min: float

    def decode(self, sol: np.ndarray) -> dict:
        return {"x1": sol[self.x1], "x2": sol[self.x2], "z1": sol[self.z1],
                "z2": sol[self.z2], "y1": float(sol[self.y1]), "y2": float(sol[self.y2]),
                "gamma": float(sol[self.gamma])}

    def complete(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray | None:
        """Best full assignment for fixed inputs (latent points at box corners)."""
        box, prop, model = self.box, self.prop, self.model
        x1 = np.clip(np.asarray(x1, dtype=np.float64), box.low, box.high)
        x2 = np.clip(np.asarray(x2, dtype=np.float64), box.low, box.high)
        for i in box.binary:
            x1[i], x2[i] = round(x1[i]), round(x2[i])
        sol = np.zeros(self.problem.num_vars)
        sol[self.x1], sol[self.x2] = x1, x2
        w = model.head.w
        corners = {}
        for copy, x, zidx, tidx in (("1", x1, self.z1, self.t1), ("2", x2, self.z2, self.t2)):
            for which, net in (("low", model.aux_low), ("up", model.aux_up)):
                enc = self.aux[(copy, which)]
                if enc.relu_vars:
                    pre = net.layers[0].W @ x + net.layers[0].b
                    for a_var, s_var, k in enc.relu_vars:
                        sol[a_var] = max(pre[k], 0.0)
                        sol[s_var] = 1.0 if pre[k] > 0.0 else 0.0
            low, up = model.aux_low(x), model.aux_up(x)
            top = np.maximum(low, up)
            corners[copy] = (low, top)
        lo1, top1 = corners["1"]
        lo2, top2 = corners["2"]
        # raise y1 - y2: z1 at the corner maximizing w.z, z2 at the minimizing one
        z1_up = np.where(w >= 0, top1, lo1)
        z2_up = np.where(w >= 0, lo2, top2)
        z1_dn = np.where(w >= 0, lo1, top1)
        z2_dn = np.where(w >= 0, top2, lo2)
        g = model.head
        v_up = g(z1_up) - g(z2_up) - prop.eps_high
        v_dn = prop.eps_low - g(z1_dn) + g(z2_dn)
        if v_up >= v_dn:
            z1, z2, b, gamma = z1_up, z2_up, 0.0, v_up
        else:
            z1, z2, b, gamma = z1_dn, z2_dn, 1.0, v_dn
        if gamma < self.gamma_min:
            return None
        sol[self.z1], sol[self.z2] = z1, z2
        sol[self.t1] = np.where(z1 > lo1, 0.0, 1.0)
        sol[self.t2] = np.where(z2 > lo2, 0.0, 1.0)
        sol[self.y1], sol[self.y2] = g(z1), g(z2)
        sol[self.b] = b
        sol[self.gamma] = gamma
        return sol

    def heuristic(self, lp_x: np.ndarray) -> np.ndarray | None:
        return self.complete(lp_x[self.x1], lp_x[self.x2])


def _encode_aux(p: MilpProblem, net: Mlp, box: InputBox, xvars: list, tag: str) -> AuxEncoding:
    bounds = interval_bounds(net, box)
    cell_lo, cell_hi = split_bounds(net, box)
    out_lo = np.maximum(bounds[-1][0], cell_lo.min(axis=0))
    out_hi = np.minimum(bounds[-1][1], cell_hi.max(axis=0))
    if net.family == "affine":
        layer = net.layers[0]
        outs = [_Affine({xvars[j]: layer.W[i, j] for j in range(net.in_dim)}, layer.b[i])
                for i in range(net.out_dim)]
        return AuxEncoding(outs, out_lo, out_hi, [], cell_lo, cell_hi)
    if net.family != "relu1":
        raise ValueError("only affine or one-hidden-relu auxiliaries can be encoded")
    first, second = net.layers
    pre_lo, pre_hi = bounds[0]
    hidden = []
    relu_vars = []
    for k in range(first.rows):
        pre = _Affine({xvars[j]: first.W[k, j] for j in range(net.in_dim)}, first.b[k])
        L, U = pre_lo[k], pre_hi[k]
        if U <= 0.0:
            hidden.append(_Affine())
        elif L >= 0.0:
            hidden.append(pre)
        else:
            Lp, Up = -_pad(-L), _pad(U)
            a = p.add_var(f"a{tag}_{k}", 0.0, Up)
            s = p.add_var(f"s{tag}_{k}", 0.0, 1.0, binary=True)
            lin = {j: -c for j, c in pre.coeffs.items()}
            p.add_row({a: 1.0, **lin}, GE, pre.const, f"relu_lb{tag}_{k}")
            p.add_row({a: 1.0, **lin, s: -Lp}, LE, pre.const - Lp, f"relu_ub{tag}_{k}")
            p.add_row({a: 1.0, s: -Up}, LE, 0.0, f"relu_on{tag}_{k}")
            hidden.append(_Affine({a: 1.0}))
            relu_vars.append((a, s, k))
    outs = []
    for i in range(second.rows):
        e = _Affine(const=second.b[i])
        for k in range(second.cols):
            if second.W[i, k] != 0.0:
                e.scaled_add(hidden[k], second.W[i, k])
        outs.append(e)
    return AuxEncoding(outs, out_lo, out_hi, relu_vars, cell_lo, cell_hi)


def encode_generator(model: SmileModel, prop: RelationalProperty, box: InputBox,
                     gamma_min: float = GAMMA_MIN) -> GeneratorEncoding:
    """Build the counterexample-search MILP for ``model`` and ``prop`` over ``box``."""
    prop = resolve_property(prop, model, box)
    prop.check_box(box)
    if box.m != model.m:
        raise ValueError("box and model input dimensions differ")
    m, n = model.m, model.n
    p = MilpProblem("counterexample")
    x1 = [p.add_var(f"x1_{i}", box.low[i], box.high[i], i in box.binary) for i in range(m)]
    x2 = [p.add_var(f"x2_{i}", box.low[i], box.high[i], i in box.binary) for i in range(m)]
    for i in range(m):
        if prop.delta_low[i] == prop.delta_high[i]:
            p.add_row({x1[i]: 1.0, x2[i]: -1.0}, EQ, prop.delta_low[i], f"q_{i}")
        else:
            p.add_row({x1[i]: 1.0, x2[i]: -1.0}, GE, prop.delta_low[i], f"q_lo_{i}")
            p.add_row({x1[i]: 1.0, x2[i]: -1.0}, LE, prop.delta_high[i], f"q_hi_{i}")

    aux = {}
    zs, ts = {}, {}
    ylo_all, yhi_all = [], []
    for copy, xv in (("1", x1), ("2", x2)):
        low = _encode_aux(p, model.aux_low, box, xv, f"{copy}l")
        up = _encode_aux(p, model.aux_up, box, xv, f"{copy}u")
        aux[(copy, "low")], aux[(copy, "up")] = low, up
        zc, tc = [], []
        # widest opening up - low and deepest flip low - up, cell by cell
        open_max = (up.cell_hi - low.cell_lo).max(axis=0)
        flip_max = (low.cell_hi - up.cell_lo).max(axis=0)
        top_max = np.maximum(low.cell_hi, up.cell_hi).max(axis=0)
        for i in range(n):
            zlo = low.out_lo[i]
            zhi = min(top_max[i],
                      max(low.out_hi[i], min(up.out_hi[i], low.out_hi[i] + max(open_max[i], 0.0))))
            lo_e, up_e = low.outputs[i], up.outputs[i]
            if open_max[i] <= 0.0:
                # the box never opens: the clip always returns the lower auxiliary
                z = p.add_var(f"z{copy}_{i}", zlo, max(zlo, low.out_hi[i]))
                t = p.add_var(f"t{copy}_{i}", 1.0, 1.0, binary=True)
                row = {z: 1.0}
                for j, c in lo_e.coeffs.items():
                    row[j] = row.get(j, 0.0) - c
                p.add_row(row, EQ, lo_e.const, f"clip_eq{copy}_{i}")
                zc.append(z)
                tc.append(t)
                continue
            z = p.add_var(f"z{copy}_{i}", zlo, zhi)
            t = p.add_var(f"t{copy}_{i}", 0.0, 1.0, binary=True)
            m_open = _pad(open_max[i])
            m_pin = _pad(flip_max[i])
            row = {z: 1.0}
            for j, c in lo_e.coeffs.items():
                row[j] = row.get(j, 0.0) - c
            p.add_row(dict(row), GE, lo_e.const, f"clip_lo{copy}_{i}")
            p.add_row({**row, t: m_open}, LE, lo_e.const + m_open, f"clip_pin{copy}_{i}")
            row_u = {z: 1.0, t: -m_pin}
            for j, c in up_e.coeffs.items():
                row_u[j] = row_u.get(j, 0.0) - c
            p.add_row(row_u, LE, up_e.const, f"clip_up{copy}_{i}")
            zc.append(z)
            tc.append(t)
        zs[copy], ts[copy] = zc, tc

    w, bg = model.head.w, model.head.b
    zlo = np.array([p.lower[j] for j in zs["1"]])
    zhi = np.array([p.upper[j] for j in zs["1"]])
    ylo = float(np.sum(np.minimum(w * zlo, w * zhi)) + bg)
    yhi = float(np.sum(np.maximum(w * zlo, w * zhi)) + bg)
    y1 = p.add_var("y1", ylo, yhi)
    y2 = p.add_var("y2", ylo, yhi)
    for copy, y in (("1", y1), ("2", y2)):
        row = {y: 1.0}
        for i, z in enumerate(zs[copy]):
            row[z] = -w[i]
        p.add_row(row, EQ, bg, f"head{copy}")

    diff_lo, diff_hi = ylo - yhi, yhi - ylo
    gamma_max = max(diff_hi - prop.eps_high, prop.eps_low - diff_lo)
    # a side that cannot be violated by gamma_min fixes the selector
    can_hi = diff_hi - prop.eps_high >= gamma_min
    can_lo = prop.eps_low - diff_lo >= gamma_min
    b = p.add_var("b", 0.0 if can_hi else 1.0, 1.0 if can_lo else 0.0, binary=True)
    gamma = p.add_var("gamma", gamma_min, gamma_max)
    m_b = _pad(gamma_max - (diff_lo - prop.eps_high))
    m_c = _pad(gamma_max - (prop.eps_low - diff_hi))
    p.add_row({gamma: 1.0, y1: -1.0, y2: 1.0, b: -m_b}, LE, -prop.eps_high, "viol_hi")
    p.add_row({gamma: 1.0, y1: 1.0, y2: -1.0, b: m_c}, LE, prop.eps_low + m_c, "viol_lo")
    p.set_objective({gamma: 1.0})
    return GeneratorEncoding(p, model, prop, box, x1, x2, zs["1"], zs["2"], ts["1"], ts["2"],
                             y1, y2, b, gamma, aux, gamma_min)
