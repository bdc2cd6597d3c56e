import math

import numpy as np
import pytest

from oracles import generator_grid_oracle, random_affine_instance
from smile import LinearHead, Mlp, SmileModel
from smile.milp import Status
from smile.milp.bnb import BranchAndBound, WorkClock
from smile.milp.encode import (GAMMA_MIN, encode_generator, interval_bounds,
                               resolve_property, split_bounds)
from smile.milp.generator import active_pattern, certify, generate
from smile.model import Layer
from smile.property import InputBox, fairness, robustness, sample_q_pairs, violation


def affine(w, b):
    return Mlp([Layer(np.atleast_2d(np.asarray(w, float)), np.atleast_1d(np.asarray(b, float)), "id")])


def hand_model(head_w=1.0):
    return SmileModel(affine([[1.0]], [0.0]), affine([[1.0]], [0.0]), affine([[1.0]], [1.0]),
                      LinearHead(np.array([head_w]), 0.0))


def run_to_end(enc, t0):
    """Resume a fresh search with doubling limits until it finishes."""
    solver = BranchAndBound(enc.problem, enc.heuristic, WorkClock())
    t = t0
    while True:
        out = solver.solve(t)
        if out.status in (Status.OPTIMAL, Status.INFEASIBLE):
            return out
        t *= 2.0


def test_interval_bounds_examples():
    (lo, hi), = interval_bounds(affine([[1.0]], [0.0]), InputBox.unit(1))
    assert lo.tolist() == [0.0] and hi.tolist() == [1.0]
    (lo, hi), = interval_bounds(affine([[1.0, -1.0]], [0.0]), InputBox.unit(2))
    assert lo.tolist() == [-1.0] and hi.tolist() == [1.0]


@pytest.mark.parametrize("seed", range(3))
def test_interval_and_split_bounds_are_sound(seed):
    rng = np.random.default_rng(seed)
    net = Mlp.init([3, 6, 2], rng)
    box = InputBox(-np.ones(3), 2 * np.ones(3))
    X = box.sample(rng, 10_000)
    acts = X
    for (lo, hi), layer in zip(interval_bounds(net, box), net.layers):
        pre = acts @ layer.W.T + layer.b
        assert np.all(pre >= lo - 1e-9) and np.all(pre <= hi + 1e-9)
        acts = np.maximum(pre, 0.0) if layer.act == "relu" else pre
    clo, chi = split_bounds(net, box, 64)
    out = net(X)
    assert np.all(out >= clo.min(axis=0) - 1e-9) and np.all(out <= chi.max(axis=0) + 1e-9)
    # cells are at least as tight as the plain interval
    lo, hi = interval_bounds(net, box)[-1]
    assert np.all(clo.min(axis=0) >= lo - 1e-9) and np.all(chi.max(axis=0) <= hi + 1e-9)


def test_hand_encoding_counts():
    box = InputBox.unit(1)
    enc = encode_generator(hand_model(), robustness(box, 1.0, 0.5), box)
    p = enc.problem
    assert len(p.binaries) == 3
    assert p.num_vars - len(p.binaries) == 7
    assert p.num_rows == 12


def test_hand_instance_optimum():
    box = InputBox.unit(1)
    res = generate(hand_model(), robustness(box, 1.0, 0.5), box)
    ce = res.counterexample
    assert res.status == Status.OPTIMAL
    assert ce.gamma == pytest.approx(1.5, abs=1e-6)
    # either orientation of the extreme pair is optimal
    pair = sorted([(ce.x1[0], ce.z1[0]), (ce.x2[0], ce.z2[0])])
    assert np.allclose(pair, [(0.0, 0.0), (1.0, 2.0)], atol=1e-6)
    assert res.gamma_bar == pytest.approx(1.5, abs=1e-6)


def test_hand_instance_brute_force():
    box = InputBox.unit(1)
    prop = robustness(box, 1.0, 0.5)
    assert generator_grid_oracle(hand_model(), prop, box, 101) == pytest.approx(1.5)


def test_constant_head_is_infeasible():
    box = InputBox.unit(1)
    res = generate(hand_model(head_w=0.0), robustness(box, 1.0, 0.5), box)
    assert res.status == Status.INFEASIBLE and res.infeasible
    assert res.counterexample is None and res.gamma_bar == 0.0


def test_counterexample_satisfies_encoding():
    box = InputBox.unit(1)
    enc = encode_generator(hand_model(), robustness(box, 1.0, 0.5), box)
    res = generate(hand_model(), robustness(box, 1.0, 0.5), box, encoding=enc)
    assert enc.problem.max_violation(res.outcome.incumbent) <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_complete_yields_feasible_assignment(seed):
    rng = np.random.default_rng(seed)
    model, prop, box = random_affine_instance(rng, 2, 2, 20)
    enc = encode_generator(model, prop, box)
    x2 = box.sample(rng, 1)[0]
    x1 = np.clip(x2 + rng.uniform(prop.delta_low, prop.delta_high), box.low, box.high)
    sol = enc.complete(x1, x2)
    rp = resolve_property(prop, model, box)
    if sol is None:
        return
    assert enc.problem.max_violation(sol) <= 1e-6
    assert sol[enc.gamma] >= GAMMA_MIN
    assert sol[enc.gamma] >= violation(rp, model.predict(x1[None])[0], model.predict(x2[None])[0]) - 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_generator_matches_grid_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    m = 1 + seed % 2
    per_axis = 101 if m == 1 else 11
    model, prop, box = random_affine_instance(rng, m, 1 + seed % 3, per_axis)
    rp = resolve_property(prop, model, box)
    expected = generator_grid_oracle(model, rp, box, per_axis)
    enc = encode_generator(model, prop, box)
    out = run_to_end(enc, 1e-4)
    if out.status == Status.INFEASIBLE:
        assert expected < GAMMA_MIN + 1e-5
    else:
        assert out.incumbent_objective == pytest.approx(expected, abs=1e-5)
    for _, bound, _ in out.snapshots:
        # violations are nonnegative, so an empty region bounds them by zero
        assert max(bound, 0.0) >= expected - 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_doubling_schedule_and_timeout(seed):
    model = SmileModel.init(3, 4, (4,), aux_hidden=4, seed=seed)
    box = InputBox.unit(3)
    opt = certify(model, robustness(box, 0.3, 0.0), box).counterexample.gamma
    # pad epsilon so that only a sliver of the input space still violates
    res = generate(model, robustness(box, 0.3, opt - 1e-3), box, t0=1e-6, t_max=4e-6)
    assert res.status == Status.UNKNOWN_TIMEOUT
    assert res.limits == [1e-6, 2e-6, 4e-6] and res.calls == 3
    assert math.isfinite(res.gamma_bar) and res.gamma_bar >= 1e-3 - 1e-6


def test_timeout_bound_dominates_optimum():
    rng = np.random.default_rng(3)
    model, prop, box = random_affine_instance(rng, 2, 3, 11)
    rp = resolve_property(prop, model, box)
    expected = generator_grid_oracle(model, rp, box, 11)
    res = generate(model, prop, box, t0=1e-7, t_max=1e-7)
    assert res.gamma_bar >= expected - 1e-6


def test_generate_validates_limits():
    box = InputBox.unit(1)
    with pytest.raises(ValueError):
        generate(hand_model(), robustness(box, 1.0, 0.5), box, t0=0.0)
    with pytest.raises(ValueError):
        generate(hand_model(), robustness(box, 1.0, 0.5), box, t0=2.0, t_max=1.0)


def test_active_pattern_ties_go_low():
    z = np.array([0.0, 1.0, 0.5])
    assert active_pattern(z, np.zeros(3), np.ones(3)).tolist() == [0, 1, 0]


def test_vertex_property_of_counterexamples():
    rng = np.random.default_rng(11)
    for _ in range(5):
        model, prop, box = random_affine_instance(rng, 2, 2, 11)
        model.head.w = np.sign(model.head.w) * np.maximum(np.abs(model.head.w), 0.3)
        res = certify(model, prop, box)
        ce = res.counterexample
        if ce is None:
            continue
        for x, z in ((ce.x1, ce.z1), (ce.x2, ce.z2)):
            lo, up = model.aux_low(x), model.aux_up(x)
            top = np.maximum(lo, up)
            assert np.all(np.minimum(np.abs(z - lo), np.abs(z - top)) <= 1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_infeasible_means_no_sampled_violation(seed):
    rng = np.random.default_rng(seed)
    model = SmileModel.init(2, 2, (4,), aux_hidden=3, seed=seed)
    box = InputBox.unit(2)
    # a generous epsilon usually certifies; use the dual bound when it does not
    res = certify(model, fairness(box, [0], 0.0), box)
    eps = res.gamma_bar + 1e-3 if not res.infeasible else 0.0
    prop = fairness(box, [0], eps)
    res = certify(model, prop, box)
    assert res.infeasible
    x1, x2 = sample_q_pairs(prop, box, rng, 100_000)
    n = model.n
    bits = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    worst = 0.0
    lo1, up1 = model.aux_low(x1), model.aux_up(x1)
    lo2, up2 = model.aux_low(x2), model.aux_up(x2)
    for b1 in bits:
        y1 = model.head(np.where(b1, np.maximum(lo1, up1), lo1))
        for b2 in bits:
            y2 = model.head(np.where(b2, np.maximum(lo2, up2), lo2))
            worst = max(worst, float(np.max(violation(prop, y1, y2))))
    assert worst <= 1e-6
