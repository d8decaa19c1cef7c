import dataclasses

import numpy as np
import pytest

from bstepdca.dc_expr import DCPair, affine, pos, square
from bstepdca.problem import (
    ProblemLoadError,
    X0Spec,
    line_search_admissible,
    load_problem,
    problem_from_dict,
    problem_to_dict,
    save_problem,
    validate,
)
from helpers import random_instance, tiny_scalar_instance, two_node_instance


def test_hand_built_instances_are_valid():
    for build in (tiny_scalar_instance, two_node_instance):
        spec, base, _, _ = build()
        assert validate(spec, base) == []


def test_arity_mismatch_reported():
    spec, base, _, _ = tiny_scalar_instance()
    bad = dataclasses.replace(spec, running_cost=DCPair(square(pos(affine([1.0, 0.0, 0.0]))), square(pos(affine([1.0, 0.0, 0.0])))))
    assert any("arity" in p for p in validate(bad, base))


def test_row_both_penalized_and_in_base_set_reported():
    spec, base, _, _ = tiny_scalar_instance()
    b2 = dataclasses.replace(base, linear_dynamics={0: affine([0.0, 1.0])})
    assert any("both" in p for p in validate(spec, b2))


def test_missing_dynamics_row_reported():
    spec, base, _, _ = tiny_scalar_instance()
    assert any("neither" in p for p in validate(dataclasses.replace(spec, dynamics=(None,)), base))


def test_box_bounds_checked():
    spec, base, _, _ = tiny_scalar_instance()
    b2 = dataclasses.replace(base, control_box=(np.array([1.0]), np.array([0.0])))
    assert validate(spec, b2)


def test_line_search_admissible_only_without_box():
    assert line_search_admissible(X0Spec(fixed_initial=np.zeros(1)))
    assert not line_search_admissible(X0Spec(control_box=(np.zeros(1), np.ones(1))))


@pytest.mark.parametrize("seed", range(10))
def test_json_round_trip(seed, tmp_path):
    rng = np.random.default_rng(seed)
    spec, base, _, N = random_instance(rng)
    path = tmp_path / "p.json"
    save_problem(spec, base, path)
    spec2, base2 = load_problem(path)
    assert problem_to_dict(spec2, base2) == problem_to_dict(spec, base)
    X = rng.normal(size=(N, spec.n + spec.m))
    np.testing.assert_array_equal(spec2.running_cost.values(X), spec.running_cost.values(X))
    if base.fixed_initial is not None:
        np.testing.assert_array_equal(np.isnan(base2.fixed_initial), np.isnan(base.fixed_initial))


def test_malformed_document_rejected(tmp_path):
    with pytest.raises(ProblemLoadError):
        problem_from_dict({"n": 1})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ProblemLoadError):
        load_problem(p)
