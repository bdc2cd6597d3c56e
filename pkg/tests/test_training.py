import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import smile.training as training
from gradsuite import OBJECTIVES, all_close, objective_check
from smile import LinearHead, Mlp, SmileModel
from smile import numcore as nc
from smile.bench.data import gen_monotonic
from smile.milp.generator import Counterexample, LOW, UP, generate
from smile.model import Layer
from smile.property import InputBox, monotonicity, robustness, sample_q_pairs, violation
from smile.training import (Adam, TrainConfig, TrainingAborted, ce_propagate,
                            ce_propagate_value, dual_step, pretrain_loss, primal_step,
                            projector, resolved, tape_params, train, train_loss)


def affine(w, b):
    return Mlp([Layer(np.atleast_2d(np.asarray(w, float)), np.atleast_1d(np.asarray(b, float)), "id")])


def hand_model(low_b=0.0, up_b=1.0, head_w=1.0):
    return SmileModel(affine([[1.0]], [0.0]), affine([[1.0]], [low_b]), affine([[1.0]], [up_b]),
                      LinearHead(np.array([head_w]), 0.0))


def hand_ce(model=None):
    box = InputBox.unit(1)
    return generate(model or hand_model(), robustness(box, 1.0, 0.5), box).counterexample


# ------------------------------------------------------------------ losses

def test_pretrain_loss_zero_for_perfect_model():
    model = hand_model(low_b=-1.0, up_b=1.0)
    X = np.linspace(-1, 1, 7)[:, None]
    tape, params = tape_params(model)
    loss, parts = pretrain_loss(model, params, X, X[:, 0], 1.0)
    # auxiliaries are offset, so only the clipped and backbone pathways are exact
    assert parts["L_f"] == 0.0 and parts["L_h"] == 0.0 and parts["L_box"] == 0.0
    exact = SmileModel(affine([[1.0]], [0.0]), affine([[1.0]], [0.0]), affine([[1.0]], [0.0]),
                       LinearHead(np.array([1.0]), 0.0))
    tape, params = tape_params(exact)
    loss, _ = pretrain_loss(exact, params, X, X[:, 0], 1.0)
    assert float(loss.value) == 0.0


def test_pretrain_box_breach_arithmetic():
    # auxLow = 1, backbone = 0, auxUp = 2: the lower bound is breached by one
    model = SmileModel(affine([[0.0]], [0.0]), affine([[0.0]], [1.0]), affine([[0.0]], [2.0]),
                       LinearHead(np.array([1.0]), 0.0))
    tape, params = tape_params(model)
    loss, parts = pretrain_loss(model, params, np.zeros((3, 1)), np.zeros(3), 1.0)
    assert parts["L_box"] == pytest.approx(1.0)
    assert float(loss.value) - parts["L_acc"] == pytest.approx(1.0)


def test_bce_loss_value():
    y = np.array([0.0, 1.0])
    pred = np.array([0.0, 2.0])
    expected = np.mean(np.log1p(np.exp(pred)) - pred * y)
    assert float(training.supervised_loss("bce", y, pred).value) == pytest.approx(expected)


def test_train_loss_without_counterexample():
    model = SmileModel.init(2, 3, (4,), seed=0)
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(5, 2)), rng.normal(size=5)
    tape, params = tape_params(model)
    loss, parts = train_loss(model, params, X, y, 0.7, 3.0, None)
    assert float(loss.value) == pytest.approx(parts["L_acc"] + 0.7 * parts["L_box"])
    assert parts["L_acc"] == pytest.approx(np.mean((model.predict(X) - y) ** 2))


def test_zero_multiplier_ignores_counterexample():
    model = hand_model()
    ce = hand_ce(model)
    X, y = np.array([[0.3]]), np.array([0.1])
    tape, params = tape_params(model)
    with_ce, parts = train_loss(model, params, X, y, 1.0, 0.0, ce)
    tape, params = tape_params(model)
    without, _ = train_loss(model, params, X, y, 1.0, 0.0, None)
    assert float(with_ce.value) == float(without.value)
    assert parts["L_prop"] == pytest.approx(1.5)


def test_prop_loss_tracks_current_auxiliaries():
    ce = hand_ce()
    for shift in (0.0, 0.2, -0.3):
        model = hand_model(up_b=1.0 + shift)
        tape, params = tape_params(model)
        lp = float(training.prop_loss(model, params, ce).value)
        # one copy sits on auxUp, the other on auxLow
        y_up = (ce.x1 if ce.pattern1[0] == UP else ce.x2)[0] + 1.0 + shift
        y_low = (ce.x2 if ce.pattern1[0] == UP else ce.x1)[0]
        assert lp == pytest.approx(max(0.0, abs(y_up - y_low) - 0.5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_train_loss_nonnegative(seed, lam_box):
    model = SmileModel.init(2, 3, (4,), aux_hidden=2, seed=seed)
    rng = np.random.default_rng(seed)
    tape, params = tape_params(model)
    loss, _ = train_loss(model, params, rng.normal(size=(6, 2)), rng.normal(size=6), lam_box,
                         0.0, None)
    assert float(loss.value) >= 0.0


@pytest.mark.parametrize("objective", OBJECTIVES)
@pytest.mark.parametrize("seed", range(4))
def test_objective_gradients(objective, seed):
    pairs = objective_check(objective, seed)
    assert all_close(pairs), pairs


# ---------------------------------------------------------- counterexamples

def test_ce_propagate_examples():
    model = SmileModel(affine(np.eye(2), [0.0, 0.0]), affine([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0]),
                       affine([[1.0, 2.0], [3.0, 4.0]], [0.5, -0.5]),
                       LinearHead(np.array([1.0, 1.0]), 0.25))
    x = np.array([1.0, -1.0])
    assert ce_propagate_value(model, x, [LOW, LOW]) == pytest.approx(0.25)
    assert ce_propagate_value(model, x, [UP, UP]) == pytest.approx(float(model.head(model.aux_up(x))))
    tape, params = tape_params(model)
    g = nc.gradient(tape, ce_propagate(model, params, x, [LOW, LOW]))
    assert not np.any(g["auxUp.0.W"]) and not np.any(g["auxUp.0.b"])


def test_resolved_examples():
    model = hand_model()
    assert resolved(model, None)
    ce = hand_ce(model)
    assert ce.gamma == pytest.approx(1.5)
    assert not resolved(model, ce)


def test_dual_step_examples():
    assert dual_step(0.4, 0.0, 0.1) == 0.4
    assert dual_step(0.0, 2.0, 0.1) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        dual_step(0.0, -1.0, 0.1)


# ----------------------------------------------------------------- optimizer

def test_adam_zero_gradient_keeps_weights():
    opt = Adam(0.1)
    w = np.array([1.0, -2.0])
    assert np.array_equal(opt.step({"w": w}, {"w": np.zeros(2)})["w"], w)


def test_adam_quadratic_bowl():
    target = np.array([3.0, -1.0, 0.5])
    w = np.zeros(3)
    opt = Adam(0.1)
    for _ in range(200):
        tape = nc.Tape()
        v = tape.param("w", w)
        loss = nc.total(nc.square(v - target))
        w = opt.step({"w": w}, nc.gradient(tape, loss))["w"]
    assert np.allclose(w, target, atol=1e-2)


@pytest.mark.parametrize("seed", range(3))
def test_first_step_descends(seed):
    model = SmileModel.init(2, 3, (5,), aux_hidden=3, seed=seed)
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(16, 2)), rng.normal(size=16)
    tape, params = tape_params(model)
    before, _ = pretrain_loss(model, params, X, y, 1.0)
    primal_step(model, tape, before, Adam(1e-4))
    tape, params = tape_params(model)
    after, _ = pretrain_loss(model, params, X, y, 1.0)
    assert float(after.value) < float(before.value)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    model = SmileModel.init(1, 2, (2,), seed=0)
    tape, params = tape_params(model)
    loss, _ = pretrain_loss(model, params, np.zeros((1, 1)), np.array([1e200]), 1.0)
    with pytest.raises(TrainingAborted):
        primal_step(model, tape, loss, Adam())


# ----------------------------------------------------------------- projector

def test_projector_resolves_hand_instance():
    model = hand_model()
    ce = hand_ce(model)
    backbone = {k: v.copy() for k, v in model.named_arrays(["backbone"]).items()}
    info = projector(model, ce, steps=2000, lr=1e-2, dual_lr=10.0, tol=1e-9)
    assert training.ce_violation(model, ce) <= 1e-6
    assert resolved(model, ce, 1e-8)
    assert np.all(np.diff(info["lambda"]) >= 0.0)
    for k, v in model.named_arrays(["backbone"]).items():
        assert np.array_equal(v, backbone[k])


def test_projector_leaves_satisfied_counterexample_alone():
    model = hand_model()
    ce = hand_ce(model)
    # a wide output tolerance makes the stored pair harmless
    ce.prop = robustness(InputBox.unit(1), 1.0, 5.0)
    before = {k: v.copy() for k, v in model.named_arrays().items()}
    projector(model, ce, steps=50)
    for k, v in model.named_arrays().items():
        assert np.allclose(v, before[k], atol=1e-12)


# ------------------------------------------------------------------ pipeline

def _constant_head_model():
    model = SmileModel.init(1, 2, (4,), seed=0)
    model.head.w[:] = 0.0
    return model


FAST = dict(pretrain_epochs=2, train_epochs=2, batch_size=16, posttrain_iters=5)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lam_box=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    cfg = TrainConfig(seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_constant_head_certifies_on_first_call():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(40, 1))
    model = _constant_head_model()
    box = InputBox.unit(1)
    # with lr tiny the head stays (numerically) zero through training
    cfg = TrainConfig(**{**FAST, "pretrain_epochs": 0, "train_epochs": 0})
    report = train(model, X, np.zeros(40), robustness(box, 0.5, 0.1), box, cfg)
    assert report.viol_bound == 0.0 and report.certified
    assert report.generator_calls["posttrain"] == 1


def test_empty_and_mismatched_data_rejected():
    box = InputBox.unit(1)
    prop = robustness(box, 0.5, 0.1)
    with pytest.raises(ValueError):
        train(_constant_head_model(), np.zeros((0, 1)), np.zeros(0), prop, box)
    with pytest.raises(ValueError):
        train(_constant_head_model(), np.zeros((3, 2)), np.zeros(3), prop, box)


def test_generator_only_called_when_resolved(monkeypatch):
    held = {"ce": None, "model": None}
    real = training.generate

    def spy(model, *args, **kwargs):
        assert held["ce"] is None or resolved(model, held["ce"], 1e-8)
        res = real(model, *args, **kwargs)
        held["ce"] = res.counterexample
        return res

    monkeypatch.setattr(training, "generate", spy)
    ds = gen_monotonic(2.0, 0.6, 200, seed=0)
    model = SmileModel.init(1, 4, (8,), seed=0)
    cfg = TrainConfig(**{**FAST, "train_epochs": 3})
    # posttraining deliberately calls the generator after every projection
    monkeypatch.setattr(training._Trainer, "posttrain", lambda self: (1.0, "skipped"))
    report = train(model, ds.X, ds.y, monotonicity(ds.box, [0]), ds.box, cfg)
    assert report.generator_calls["train"] >= 1


def test_small_run_certifies_and_is_sound():
    ds = gen_monotonic(2.0, 0.4, 300, seed=1)
    model = SmileModel.init(1, 4, (16,), aux_hidden=4, seed=1)
    cfg = TrainConfig(lr=3e-3, pretrain_epochs=30, pretrain_patience=None, train_epochs=3,
                      batch_size=32, seed=1)
    prop = monotonicity(ds.box, [0])
    report = train(model, ds.X, ds.y, prop, ds.box, cfg)
    assert report.viol_bound == 0.0
    lam = report.lambda_trace["train"]
    assert np.all(np.diff(lam) >= 0.0)
    x1, x2 = sample_q_pairs(prop, ds.box, np.random.default_rng(0), 100_000)
    assert np.max(model.predict(x1) - model.predict(x2)) <= 1e-6
    assert model.meta["violBound"] == 0.0
    csv_text = report.telemetry_csv()
    assert csv_text.splitlines()[0] == ",".join(training.TELEMETRY_FIELDS)
    assert {"pretrain", "train", "train-gen", "posttrain"} <= {r["phase"] for r in report.history}
    doc = report.to_dict()
    assert doc["violBound"] == 0.0 and json.loads(json.dumps(doc)) == doc


def test_pretraining_leaves_boxes_nondegenerate():
    ds = gen_monotonic(2.0, 0.6, 2000, seed=0)
    tr, te = ds.split(1600)
    model = SmileModel.init(1, 8, (32, 32), aux_hidden=8, seed=0)
    cfg = TrainConfig(lr=3e-3, pretrain_epochs=200, pretrain_patience=10)
    training._Trainer(model, tr.X, tr.y, monotonicity(ds.box, [0]), ds.box, cfg).pretrain()
    tape, params = tape_params(model)
    _, parts = pretrain_loss(model, params, te.X, te.y, 1.0)
    assert parts["L_box"] < 1e-3


@pytest.mark.xfail(reason="auxiliary pathways stay several times less accurate than the "
                          "backbone at this scale", strict=False)
def test_pretraining_balances_pathways():
    ds = gen_monotonic(2.0, 0.6, 2000, seed=0)
    tr, te = ds.split(1600)
    model = SmileModel.init(1, 8, (32, 32), aux_hidden=8, seed=0)
    cfg = TrainConfig(lr=3e-3, pretrain_epochs=200, pretrain_patience=10)
    training._Trainer(model, tr.X, tr.y, monotonicity(ds.box, [0]), ds.box, cfg).pretrain()
    tape, params = tape_params(model)
    _, parts = pretrain_loss(model, params, te.X, te.y, 1.0)
    losses = [parts[k] for k in ("L_f", "L_low", "L_up", "L_h")]
    assert max(losses) <= 2.0 * min(losses)
    assert parts["L_box"] < 1e-3
