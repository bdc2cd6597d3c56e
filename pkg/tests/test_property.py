import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smile.property import (InputBox, RelationalProperty, fairness, from_spec, load_spec,
                            monotonicity, pair_satisfies_q, robustness, sample_q_pairs,
                            violation)


def test_box_validation():
    with pytest.raises(ValueError):
        InputBox([1.0], [0.0])
    with pytest.raises(ValueError):
        InputBox([0.0, 0.0], [1.0, 2.0], frozenset({1}))
    box = InputBox.unit(3, binary=[2])
    assert box.m == 3 and box.binary == frozenset({2})


def test_box_sample_respects_bounds_and_binaries():
    box = InputBox([-1.0, 0.0], [2.0, 1.0], frozenset({1}))
    X = box.sample(np.random.default_rng(0), 500)
    assert box.contains(X).all()
    assert set(np.unique(X[:, 1])) <= {0.0, 1.0}


def test_box_round_trip():
    box = InputBox([-1.0, 0.0], [2.0, 1.0], frozenset({1}))
    back = InputBox.from_dict(box.to_dict())
    assert np.array_equal(back.low, box.low) and back.binary == box.binary


def test_robustness_encoding():
    p = robustness(InputBox.unit(2), 0.1, 0.5)
    assert np.allclose(p.delta_low, -0.1) and np.allclose(p.delta_high, 0.1)
    assert (p.eps_low, p.eps_high) == (-0.5, 0.5)


def test_fairness_encoding():
    box = InputBox([0.0, 0.0, -2.0], [1.0, 1.0, 2.0], frozenset({1}))
    p = fairness(box, [1], 0.2)
    assert np.array_equal(p.delta_low, [0.0, -1.0, 0.0])
    assert np.array_equal(p.delta_high, [0.0, 1.0, 0.0])


def test_monotonicity_encoding_and_big_m():
    box = InputBox([-2.0, 0.0], [2.0, 1.0])
    p = monotonicity(box, [0], big_m=10.0)
    assert np.array_equal(p.delta_low, [-4.0, 0.0]) and np.array_equal(p.delta_high, [0.0, 0.0])
    assert (p.eps_low, p.eps_high) == (-10.0, 0.0)
    q = monotonicity(box, [0], "nonincreasing", big_m=10.0)
    assert np.array_equal(q.delta_low, p.delta_low)
    assert (q.eps_low, q.eps_high) == (0.0, 10.0)
    auto = monotonicity(box, [0])
    assert auto.auto_big_m
    assert auto.with_big_m(3.0).eps_low == -3.0 and not auto.with_big_m(3.0).auto_big_m


def test_invalid_properties():
    with pytest.raises(ValueError):
        RelationalProperty([1.0], [0.0], -1.0, 1.0)
    with pytest.raises(ValueError):
        RelationalProperty([0.0], [1.0], 1.0, -1.0)
    with pytest.raises(ValueError):
        robustness(InputBox.unit(1), -0.1, 1.0)
    with pytest.raises(ValueError):
        fairness(InputBox.unit(2), [], 1.0)
    # input predicate unsatisfiable within the box
    with pytest.raises(ValueError):
        RelationalProperty([2.0], [3.0], -1.0, 1.0).check_box(InputBox.unit(1))


def test_violation_examples():
    p = robustness(InputBox.unit(1), 0.1, 0.5)
    assert violation(p, 1.0, 0.8) == 0.0
    assert violation(p, 1.0, 0.0) == pytest.approx(0.5)
    assert violation(p, 0.0, 1.0) == pytest.approx(0.5)
    assert np.allclose(violation(p, np.array([1.0, 0.0]), np.array([0.0, 0.0])), [0.5, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["robustness", "fairness", "monotonicity"]))
def test_sampled_pairs_satisfy_input_predicate(seed, kind):
    box = InputBox([-1.0, 0.0, 0.0], [1.0, 1.0, 2.0], frozenset({1}))
    p = {"robustness": lambda: robustness(box, 0.3, 1.0),
         "fairness": lambda: fairness(box, [1], 1.0),
         "monotonicity": lambda: monotonicity(box, [0, 2], big_m=5.0)}[kind]()
    x1, x2 = sample_q_pairs(p, box, np.random.default_rng(seed), 200)
    assert box.contains(x1).all() and box.contains(x2).all()
    assert all(pair_satisfies_q(p, box, a, b) for a, b in zip(x1, x2))


def test_from_spec_and_load_spec(tmp_path):
    box = InputBox.unit(2)
    assert from_spec({"kind": "robustness", "delta": 0.1, "eps": 1.0}, box).kind == "robustness"
    assert from_spec({"kind": "fairness", "protected": [0], "eps": 1.0}, box).kind == "fairness"
    mono = from_spec({"kind": "monotonicity", "protected": [1]}, box)
    assert mono.auto_big_m
    custom = from_spec({"kind": "custom", "delta_low": [0, 0], "delta_high": [0, 1],
                        "eps_low": -1, "eps_high": 1}, box)
    assert custom.eps_high == 1.0
    with pytest.raises(ValueError):
        from_spec({"kind": "nope"}, box)
    path = tmp_path / "p.json"
    path.write_text('{"kind": "robustness", "delta": 0.1, "eps": 1.0}')
    assert load_spec(path)["delta"] == 0.1
    path.write_text("[]")
    with pytest.raises(ValueError):
        load_spec(path)


def test_property_to_dict_round_trip():
    box = InputBox.unit(2)
    for p in (robustness(box, 0.1, 1.0), fairness(box, [1], 0.3), monotonicity(box, [0])):
        q = from_spec(p.to_dict(), box)
        assert np.array_equal(q.delta_low, p.delta_low) and q.eps_high == p.eps_high
