import json

import numpy as np
import pytest

from hedonic_ot import (BilinearSurplus, DiscreteMeasure, InstanceSpec, Problem, SolverSettings, SurplusOracle,
                        ValidationError, VariableCapExceeded, generate_instance, graph_check, marginal,
                        solve_mk_entropic, solve_mk_exact, spacelike_diagnostic, swap_monotonicity_check)
from hedonic_ot.mmot import Coupling, objective, surplus_tensor
from conftest import best_pairing, brute_force_lp, dirac_problem, uniform_problem


def quad(m, n=1):
    return SurplusOracle.builtin("quadratic", m, n)


def test_dirac_marginals_single_entry():
    pts = [[0.5, 1.0], [1.0, -1.0], [0.0, 0.0]]
    oracle = SurplusOracle.builtin("brenier", 3, 2)
    gamma = solve_mk_exact(dirac_problem(pts, oracle))
    assert len(gamma) == 1 and gamma.mass[0] == 1.0
    assert gamma.objective == pytest.approx(objective(gamma, oracle))


def test_two_point_monotone_matching():
    gamma = solve_mk_exact(uniform_problem([[0.0, 1.0], [0.0, 1.0]], quad(2)))
    assert gamma.as_dict_of_masses() == pytest.approx({(0, 0): 0.5, (1, 1): 0.5})


def test_eight_variable_polytope_against_vertex_enumeration():
    prob = uniform_problem([[0.0, 1.0]] * 3, quad(3))
    gamma = solve_mk_exact(prob)
    best, _, _ = brute_force_lp([mu.weights for mu in prob.marginals], surplus_tensor(prob))
    assert gamma.objective == pytest.approx(best, abs=1e-10)


def test_sorted_four_atom_monotone_against_all_pairings():
    pts = np.arange(4.0)[:, None]
    prob = uniform_problem([pts] * 3, quad(3))
    gamma = solve_mk_exact(prob)
    assert graph_check(gamma).is_graph
    assert sorted(gamma.as_dict_of_masses()) == [(k, k, k) for k in range(4)]
    value, s, t = best_pairing([pts] * 3, quad(3))
    assert s == t == (0, 1, 2, 3)
    assert gamma.objective == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_pivot_rules_agree(seed):
    prob = generate_instance(InstanceSpec(m=3, n=2, atoms=4, weights="random", seed=seed, oracle="brenier"))
    a = solve_mk_exact(prob, pivot="bland")
    b = solve_mk_exact(prob, pivot="dantzig")
    assert a.objective == pytest.approx(b.objective, abs=1e-10)
    assert a.meta["pivot_rule"] == "bland" and b.meta["pivot_rule"] == "dantzig"


def test_feasibility_and_marginals(rng):
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=5, weights="random", seed=4))
    gamma = solve_mk_exact(prob)
    for i, mu in enumerate(prob.marginals):
        np.testing.assert_allclose(marginal(gamma, i).weights, mu.weights, atol=1e-9)
    assert gamma.max_marginal_violation() <= 1e-9
    assert gamma.mass.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        marginal(gamma, 3)


def test_marginal_examples():
    d = DiscreteMeasure.dirac([2.0])
    g = Coupling([[0, 0]], [1.0], [d, d])
    assert marginal(g, 1).points.tolist() == [[2.0]]
    u = DiscreteMeasure.uniform([[0.0], [1.0]])
    prod = Coupling([[0, 0], [0, 1], [1, 0], [1, 1]], [0.25] * 4, [u, u])
    assert marginal(prod, 0).weights.tolist() == [0.5, 0.5]
    assert not graph_check(prod).is_graph
    assert graph_check(prod).per_atom[0]["tuples"] == 2


def test_variable_cap():
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=30), settings=SolverSettings())
    with pytest.raises(VariableCapExceeded, match="variable cap exceeded"):
        solve_mk_exact(prob)
    small = generate_instance(InstanceSpec(m=2, n=1, atoms=3), settings=SolverSettings(variable_cap=8))
    with pytest.raises(VariableCapExceeded):
        solve_mk_entropic(small)


def test_bilinear_surplus_accepted_by_lp():
    mu = DiscreteMeasure.uniform([[0.0, 0.0], [1.0, 1.0]])
    gamma = solve_mk_exact(Problem([mu, mu, mu], BilinearSurplus([[1.0, 1.0], [0.0, 1.0]])))
    best, _, _ = brute_force_lp([mu.weights] * 3, surplus_tensor(Problem([mu] * 3, BilinearSurplus(
        [[1.0, 1.0], [0.0, 1.0]]))))
    assert gamma.objective == pytest.approx(best, abs=1e-10)


def test_coupling_serialisation():
    gamma = solve_mk_exact(uniform_problem([[0.0, 1.0], [0.0, 1.0]], quad(2)))
    d = json.loads(json.dumps(gamma.to_dict()))
    assert {tuple(e["idx"]) for e in d["entries"]} == {(0, 0), (1, 1)}
    assert "phase1_pivots" in d["meta"] and d["objective"] == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------- entropic

def test_entropic_large_eps_is_product():
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=3, weights="random", seed=1))
    gamma = solve_mk_entropic(prob, eps=1e3)
    dense = np.zeros(prob.sizes)
    dense[tuple(gamma.idx.T)] = gamma.mass
    w = [mu.weights for mu in prob.marginals]
    product = np.einsum("i,j,k->ijk", *w)
    assert np.abs(dense - product).max() <= 1e-3
    assert not gamma.meta["log_domain"]


def test_entropic_monotone_in_eps():
    prob = generate_instance(InstanceSpec(m=3, n=2, atoms=4, weights="random", seed=2, oracle="brenier"))
    exact = solve_mk_exact(prob).objective
    values = [solve_mk_entropic(prob, eps=e).meta["unregularized_objective"] for e in (1e-1, 1e-2, 1e-3)]
    assert values[0] <= values[1] + 1e-9 <= values[2] + 2e-9
    assert values[2] <= exact + 1e-9
    assert abs(values[2] - exact) <= 0.02 * abs(exact)


def test_entropic_log_domain_small_eps():
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=5, seed=3))
    gamma = solve_mk_entropic(prob, eps=1e-4)
    assert gamma.meta["log_domain"]
    assert max(gamma.meta["marginal_violation"]) <= 1e-8
    assert np.isfinite(gamma.meta["regularized_objective"])
    assert abs(gamma.meta["unregularized_objective"] - solve_mk_exact(prob).objective) <= 1e-3


def test_entropic_validation():
    prob = generate_instance(InstanceSpec(m=2, n=1, atoms=2))
    with pytest.raises(ValidationError):
        solve_mk_entropic(prob, eps=-1.0)


# ---------------------------------------------------------------- diagnostics

def test_swap_check_on_exact_solution():
    prob = generate_instance(InstanceSpec(m=3, n=2, atoms=4, weights="random", seed=9, oracle="brenier"))
    rep = swap_monotonicity_check(solve_mk_exact(prob), prob.oracle)
    assert rep.n_violations == 0 and rep.pairs_checked > 0


def test_swap_check_finds_anti_monotone_violation():
    u = DiscreteMeasure.uniform([[0.0], [1.0]])
    anti = Coupling([[0, 1], [1, 0]], [0.5, 0.5], [u, u])
    rep = swap_monotonicity_check(anti, quad(2), i=1)
    assert rep.n_violations == 1
    # b(0,1) + b(1,0) = -1/2 - 1/2; swapped pair gives 0 + 0
    assert rep.violations[0]["gain"] == pytest.approx(1.0)


def test_swap_check_single_entry_is_vacuous():
    d = DiscreteMeasure.dirac([0.0])
    assert swap_monotonicity_check(Coupling([[0, 0]], [1.0], [d, d]), quad(2)).n_violations == 0


def _chain(k, anti):
    u = DiscreteMeasure.uniform(np.arange(float(k))[:, None])
    idx = [[a, k - 1 - a if anti else a] for a in range(k)]
    return Coupling(idx, np.full(k, 1 / k), [u, u])


def test_spacelike_monotone_and_anti_monotone():
    mono = spacelike_diagnostic(_chain(10, False), quad(2))
    assert mono.pairs > 0 and mono.fraction_nonnegative == 1.0 and mono.worst >= 0
    anti = spacelike_diagnostic(_chain(10, True), quad(2))
    assert anti.worst < 0 and anti.fraction_nonnegative == 0.0
    assert "heuristic" in anti.label
    assert anti.delta == pytest.approx(0.2 * 9)


def test_spacelike_single_entry_empty():
    d = DiscreteMeasure.dirac([0.0])
    rep = spacelike_diagnostic(Coupling([[0, 0]], [1.0], [d, d]), quad(2))
    assert rep.pairs == 0


def test_graph_check_permutation():
    u = DiscreteMeasure.uniform([[0.0], [1.0], [2.0]])
    rep = graph_check(Coupling([[0, 2], [1, 0], [2, 1]], [1 / 3] * 3, [u, u]))
    assert rep.is_graph
    assert all(p["dominant_share"] == 1.0 for p in rep.per_atom)


def test_stalled_scaling_hands_over_to_log_domain():
    # uniform weights on a degenerate instance: plain proportional fitting crawls at eps=1e-2
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=5, seed=0))
    gamma = solve_mk_entropic(prob, eps=1e-2)
    assert gamma.meta["scaling_fallback"] and gamma.meta["log_domain"]
    assert max(gamma.meta["marginal_violation"]) <= 1e-8
    assert gamma.meta["unregularized_objective"] <= solve_mk_exact(prob).objective + 1e-12


@pytest.mark.parametrize("pivot", ["bland", "dantzig"])
def test_degenerate_basics_carry_no_round_off_mass(pivot):
    # equal weights in 1D with quadratic preferences: the optimum is the sorted permutation,
    # reached by Bland only after >100 degenerate pivots
    prob = generate_instance(InstanceSpec(m=3, n=1, atoms=5, seed=21))
    gamma = solve_mk_exact(prob, pivot=pivot)
    assert len(gamma) == 5 and gamma.meta["refined"]
    np.testing.assert_allclose(gamma.mass, 0.2, rtol=0, atol=1e-15)
    order = [np.argsort(mu.points[:, 0]) for mu in prob.marginals]
    expected = {tuple(int(o[k]) for o in order) for k in range(5)}
    assert set(gamma.as_dict_of_masses()) == expected
