"""Three-phase training: pretraining, dual-ascent training, posttraining projection."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .milp.encode import resolve_property
from .milp.generator import LOW, Counterexample, GeneratorResult, generate
from .model import SmileModel, trace_head, trace_pathways
from .property import InputBox, RelationalProperty, violation

log = logging.getLogger(__name__)

AUX_GROUPS = ("auxLow", "auxUp", "head")
ALL_GROUPS = ("backbone", "auxLow", "auxUp", "head")
TELEMETRY_FIELDS = ("phase", "step", "L_acc", "L_box", "L_prop", "lambda_prop",
                    "gen_status", "gamma", "gamma_bar", "wall_ms")


class TrainingAborted(RuntimeError):
    """A gradient or loss became non-finite."""


@dataclass
class TrainConfig:
    loss: str = "mse"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lam_box: float = 1.0
    dual_lr: float = 0.1
    pretrain_epochs: int = 1000
    pretrain_patience: int | None = 10
    train_epochs: int = 100
    batch_size: int = 64
    posttrain_iters: int = 200
    projector_steps: int = 200
    projector_lr: float = 1e-2
    projector_dual_lr: float = 10.0
    projector_margin: float = 0.0
    gen_t0: float = 1.0
    gen_t_max: float = 64.0
    clock: str = "work"
    resolved_tol: float = 1e-8
    regen_cooldown: int = 0
    seed: int = 0
    record_wall_time: bool = True

    def __post_init__(self):
        if self.loss not in ("mse", "bce"):
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("lr", "dual_lr", "projector_lr", "projector_dual_lr", "gen_t0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.projector_margin < 0:
            raise ValueError("projector_margin must be nonnegative")
        if self.lam_box < 0:
            raise ValueError("lam_box must be nonnegative")
        if self.gen_t_max < self.gen_t0:
            raise ValueError("gen_t_max must be at least gen_t0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DualState:
    lam: float = 0.0


@dataclass
class TrainReport:
    model: SmileModel
    viol_bound: float
    certified: bool
    history: list = field(default_factory=list)
    generator_calls: dict = field(default_factory=dict)
    lambda_trace: dict = field(default_factory=dict)
    gammas: list = field(default_factory=list)
    phase_seconds: dict = field(default_factory=dict)
    final_status: str = ""

    def telemetry_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TELEMETRY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.history:
            writer.writerow({k: _fmt(row.get(k)) for k in TELEMETRY_FIELDS})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"violBound": self.viol_bound, "certified": self.certified,
                "finalStatus": self.final_status, "generatorCalls": self.generator_calls,
                "lambdaTrace": self.lambda_trace, "gammas": self.gammas,
                "phaseSeconds": self.phase_seconds}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# ------------------------------------------------------------------ losses

def tape_params(model: SmileModel, groups: Sequence[str] = ALL_GROUPS):
    tape = nc.Tape()
    params = {name: tape.param(name, arr) for name, arr in model.named_arrays(groups).items()}
    fixed = {name: arr for name, arr in model.named_arrays().items() if name not in params}
    return tape, {**fixed, **params}


def supervised_loss(kind: str, y: np.ndarray, pred) -> nc.Var:
    if kind == "mse":
        return nc.mean(nc.square(pred - y))
    return nc.mean(nc.softplus(pred) - nc.mul(pred, y))


def box_penalty(z, z_low, z_up) -> nc.Var:
    """Mean over the batch of summed hinge breaches of ``z_low <= z <= z_up``."""
    breach = nc.hinge(z - z_up) + nc.hinge(z_low - z)
    return nc.mean(nc.sum_rows(breach))


def pretrain_loss(model: SmileModel, params: dict, X, y, lam_box: float, kind: str = "mse"):
    """Accuracy of all four output pathways plus the box-degeneracy penalty."""
    z, z_low, z_up = trace_pathways(model, params, X)
    z_clip = nc.clip(z, z_low, z_up)
    l_f = supervised_loss(kind, y, trace_head(params, z_clip))
    l_low = supervised_loss(kind, y, trace_head(params, z_low))
    l_up = supervised_loss(kind, y, trace_head(params, z_up))
    l_h = supervised_loss(kind, y, trace_head(params, z))
    l_acc = l_f + l_low + l_up + l_h
    l_box = box_penalty(z, z_low, z_up)
    loss = l_acc + lam_box * l_box
    parts = {"L_f": float(l_f.value), "L_low": float(l_low.value), "L_up": float(l_up.value),
             "L_h": float(l_h.value), "L_acc": float(l_acc.value), "L_box": float(l_box.value)}
    return loss, parts


def ce_propagate(model: SmileModel, params: dict, x, pattern) -> nc.Var:
    """Head output at the latent point rebuilt from the current auxiliaries and a face pattern."""
    low = model.aux_low.trace(params, "auxLow", x)
    up = model.aux_up.trace(params, "auxUp", x)
    z = nc.where(np.asarray(pattern) == LOW, low, up)
    return trace_head(params, z)


def ce_propagate_value(model: SmileModel, x, pattern) -> float:
    z = np.where(np.asarray(pattern) == LOW, model.aux_low(x), model.aux_up(x))
    return float(model.head(z))


def prop_loss(model: SmileModel, params: dict, ce: Counterexample,
              margin: float = 0.0) -> nc.Var:
    """Violation of the stored counterexample, with the output range shrunk by ``margin``."""
    y1 = ce_propagate(model, params, ce.x1, ce.pattern1)
    y2 = ce_propagate(model, params, ce.x2, ce.pattern2)
    d = y1 - y2
    return nc.hinge(nc.maximum(ce.prop.eps_low + margin - d, d - ce.prop.eps_high + margin))


def train_loss(model: SmileModel, params: dict, X, y, lam_box: float, lam_prop: float,
               ce: Counterexample | None, kind: str = "mse"):
    """Clipped-pathway accuracy + box penalty + multiplier-weighted counterexample violation."""
    z, z_low, z_up = trace_pathways(model, params, X)
    z_clip = nc.clip(z, z_low, z_up)
    l_acc = supervised_loss(kind, y, trace_head(params, z_clip))
    l_box = box_penalty(z, z_low, z_up)
    loss = l_acc + lam_box * l_box
    l_prop = 0.0
    if ce is not None:
        lp = prop_loss(model, params, ce)
        l_prop = float(lp.value)
        loss = loss + lam_prop * lp
    parts = {"L_acc": float(l_acc.value), "L_box": float(l_box.value), "L_prop": l_prop}
    return loss, parts


def projection_loss(model: SmileModel, params: dict, origin: dict, ce: Counterexample,
                    lam_prop: float, margin: float = 0.0):
    """Squared distance of auxiliary/head weights to ``origin`` plus weighted violation."""
    dist = None
    for name, ref in origin.items():
        term = nc.total(nc.square(params[name] - ref))
        dist = term if dist is None else dist + term
    lp = prop_loss(model, params, ce, margin)
    loss = dist + lam_prop * lp
    return loss, {"L_acc": float(dist.value), "L_prop": float(lp.value)}


def ce_violation(model: SmileModel, ce: Counterexample, margin: float = 0.0) -> float:
    y1 = ce_propagate_value(model, ce.x1, ce.pattern1)
    y2 = ce_propagate_value(model, ce.x2, ce.pattern2)
    d = y1 - y2
    return max(0.0, ce.prop.eps_low + margin - d, d - ce.prop.eps_high + margin)


def resolved(model: SmileModel, ce: Counterexample | None, tol: float = 1e-8) -> bool:
    if ce is None:
        return True
    return ce_violation(model, ce) <= tol


def dual_step(lam: float, l_prop: float, dual_lr: float) -> float:
    if l_prop < 0:
        raise ValueError("violation must be nonnegative")
    return lam + dual_lr * l_prop


# --------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = self.lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        out = {}
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            out[name] = arrays[name] - corr * m / (np.sqrt(v) + self.eps)
        return out


def primal_step(model: SmileModel, tape: nc.Tape, loss: nc.Var, opt: Adam) -> None:
    """One Adam update of every parameter registered on ``tape``."""
    if not math.isfinite(float(loss.value)):
        raise TrainingAborted(f"non-finite loss {float(loss.value)}")
    grads = nc.gradient(tape, loss)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient for {name}")
    arrays = {name: tape.params[name].value for name in grads}
    model.set_arrays(opt.step(arrays, grads))


def projector(model: SmileModel, ce: Counterexample, steps: int = 200, lr: float = 1e-3,
              dual_lr: float = 10.0, tol: float = 1e-8, margin: float = 0.0,
              cfg: TrainConfig | None = None) -> dict:
    """Move auxiliaries and head (never the backbone) until ``ce`` is resolved.

    Dual ascent on ``||theta - theta_orig||^2 + lambda * violation``. With
    ``margin > 0`` the counterexample must end up ``margin`` inside the
    admissible output range.
    """
    if cfg is not None:
        steps, lr, dual_lr, tol, margin = (cfg.projector_steps, cfg.projector_lr,
                                           cfg.projector_dual_lr, cfg.resolved_tol,
                                           cfg.projector_margin)
    origin = {k: v.copy() for k, v in model.named_arrays(AUX_GROUPS).items()}
    opt = Adam(lr) if cfg is None else Adam(lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    lam = 0.0
    lams = [lam]
    used = 0
    for used in range(1, steps + 1):
        tape, params = tape_params(model, AUX_GROUPS)
        loss, parts = projection_loss(model, params, origin, ce, lam, margin)
        primal_step(model, tape, loss, opt)
        lam = dual_step(lam, parts["L_prop"], dual_lr)
        lams.append(lam)
        if ce_violation(model, ce, margin) <= tol:
            break
    return {"steps": used, "lambda": lams, "violation": ce_violation(model, ce)}


# ---------------------------------------------------------------- pipeline

class _Trainer:
    def __init__(self, model, X, y, prop, box, cfg: TrainConfig):
        self.model, self.X, self.y = model, X, y
        self.prop, self.box, self.cfg = prop, box, cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.history: list[dict] = []
        self.gen_calls = {"train": 0, "posttrain": 0}
        self.gammas: list[float] = []
        self.lambdas: list[float] = []
        self.projector_lambdas: list[float] = []
        self.t_start = time.perf_counter()

    def wall_ms(self):
        if not self.cfg.record_wall_time:
            return None
        return round(1000.0 * (time.perf_counter() - self.t_start), 3)

    def row(self, **kw):
        kw.setdefault("wall_ms", self.wall_ms())
        self.history.append(kw)

    def batches(self):
        N = len(self.X)
        order = self.rng.permutation(N)
        bs = self.cfg.batch_size
        for s in range(0, N, bs):
            idx = order[s:s + bs]
            yield self.X[idx], self.y[idx]

    def generate(self, t_max: float, phase: str) -> GeneratorResult:
        res = generate(self.model, self.prop, self.box, self.cfg.gen_t0, t_max, self.cfg.clock)
        self.gen_calls[phase] += 1
        gamma = res.counterexample.gamma if res.counterexample is not None else 0.0
        self.gammas.append(gamma)
        return res

    # -- phases

    def pretrain(self):
        cfg = self.cfg
        opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        best, stale = math.inf, 0
        for epoch in range(cfg.pretrain_epochs):
            sums = {"L_acc": 0.0, "L_box": 0.0, "loss": 0.0}
            count = 0
            for Xb, yb in self.batches():
                tape, params = tape_params(self.model)
                loss, parts = pretrain_loss(self.model, params, Xb, yb, cfg.lam_box, cfg.loss)
                primal_step(self.model, tape, loss, opt)
                k = len(Xb)
                sums["L_acc"] += parts["L_acc"] * k
                sums["L_box"] += parts["L_box"] * k
                sums["loss"] += float(loss.value) * k
                count += k
            mean = {k: v / count for k, v in sums.items()}
            self.row(phase="pretrain", step=epoch, L_acc=mean["L_acc"], L_box=mean["L_box"],
                     L_prop=0.0, lambda_prop=0.0)
            if cfg.pretrain_patience is not None:
                if mean["loss"] < best - 1e-12:
                    best, stale = mean["loss"], 0
                else:
                    stale += 1
                    if stale >= cfg.pretrain_patience:
                        break

    def train(self):
        cfg = self.cfg
        opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        res = self.generate(cfg.gen_t_max, "train")
        self.row(phase="train-gen", step=0, gen_status=res.status.value,
                 gamma=_gamma(res), gamma_bar=res.gamma_bar)
        ce = res.counterexample
        cooldown = cfg.regen_cooldown if ce is None else 0
        lam = 0.0
        self.lambdas = [lam]
        step = 0
        for epoch in range(cfg.train_epochs):
            sums = {"L_acc": 0.0, "L_box": 0.0, "L_prop": 0.0}
            count = 0
            for Xb, yb in self.batches():
                step += 1
                if cooldown > 0:
                    cooldown -= 1
                elif resolved(self.model, ce, cfg.resolved_tol):
                    res = self.generate(cfg.gen_t_max, "train")
                    ce = res.counterexample
                    self.row(phase="train-gen", step=step, gen_status=res.status.value,
                             gamma=_gamma(res), gamma_bar=res.gamma_bar)
                    if ce is None:
                        cooldown = cfg.regen_cooldown
                tape, params = tape_params(self.model)
                loss, parts = train_loss(self.model, params, Xb, yb, cfg.lam_box, lam, ce,
                                         cfg.loss)
                primal_step(self.model, tape, loss, opt)
                lam = dual_step(lam, parts["L_prop"], cfg.dual_lr)
                self.lambdas.append(lam)
                k = len(Xb)
                for key in sums:
                    sums[key] += parts[key] * k
                count += k
            self.row(phase="train", step=epoch, lambda_prop=lam,
                     **{k: v / count for k, v in sums.items()})

    def posttrain(self):
        cfg = self.cfg
        viol_bound = math.inf
        status = ""
        for it in range(cfg.posttrain_iters):
            res = self.generate(math.inf, "posttrain")
            status = res.status.value
            viol_bound = res.gamma_bar
            if res.infeasible:
                self.row(phase="posttrain", step=it, gen_status=status, gamma=0.0,
                         gamma_bar=0.0)
                return 0.0, status
            info = projector(self.model, res.counterexample, cfg=cfg)
            self.projector_lambdas.append(info["lambda"][-1])
            self.row(phase="posttrain", step=it, L_prop=info["violation"],
                     lambda_prop=info["lambda"][-1], gen_status=status,
                     gamma=_gamma(res), gamma_bar=res.gamma_bar)
        return viol_bound, status


def _gamma(res: GeneratorResult) -> float:
    return res.counterexample.gamma if res.counterexample is not None else 0.0


def train(model: SmileModel, X, y, prop: RelationalProperty, box: InputBox,
          cfg: TrainConfig | None = None) -> TrainReport:
    """Run pretraining, training and posttraining; returns weights and a violation bound.

    ``model`` is updated in place. ``viol_bound == 0`` means the final complete
    counterexample search proved that no violating pair exists.
    """
    cfg = cfg or TrainConfig()
    X = nc.as_array(X, "X")
    y = nc.as_array(y, "y").reshape(-1)
    if len(X) == 0:
        raise ValueError("empty dataset")
    if X.shape[1] != model.m or box.m != model.m:
        raise ValueError("data, box and model dimensions disagree")
    prop.check_box(box)
    tr = _Trainer(model, X, y, prop, box, cfg)
    seconds = {}
    t = time.perf_counter()
    tr.pretrain()
    seconds["pretrain"] = time.perf_counter() - t
    t = time.perf_counter()
    tr.train()
    seconds["train"] = time.perf_counter() - t
    backbone_after_train = {k: v.copy() for k, v in model.named_arrays(["backbone"]).items()}
    t = time.perf_counter()
    viol_bound, status = tr.posttrain()
    seconds["posttrain"] = time.perf_counter() - t
    for k, v in model.named_arrays(["backbone"]).items():
        assert np.array_equal(v, backbone_after_train[k]), "posttraining touched the backbone"
    model.meta["property"] = prop.to_dict()
    model.meta["violBound"] = viol_bound
    model.meta["box"] = box.to_dict()
    log.info("training finished: violBound=%s status=%s", viol_bound, status)
    return TrainReport(model, viol_bound, viol_bound == 0.0, tr.history, tr.gen_calls,
                       {"train": tr.lambdas, "posttrain": tr.projector_lambdas},
                       tr.gammas, seconds, status)
