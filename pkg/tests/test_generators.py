import itertools
import json

import numpy as np
import pytest

from branchlab.bnb import solve
from branchlab.generators import FAMILIES, PRESETS, GenSpec, barabasi_albert, generate
from branchlab.lp import solve_lp
from branchlab.milp import from_dense, to_json_dict
from branchlab.policies import MostFractionalPolicy, PseudocostPolicy


@pytest.mark.parametrize("family,expect", [("setcover", (1000, 500)), ("cauction", (500, 100))])
def test_small_presets(family, expect):
    inst = generate(GenSpec(family, "small"))
    assert (inst.n_vars, inst.n_cons) == expect
    assert len(inst.int_vars) == inst.n_vars
    assert np.all(inst.l == 0) and np.all(inst.u == 1)


def test_facilities_preset():
    inst = generate(GenSpec("facilities", "small"))
    assert inst.n_vars == 50 + 50 * 50 and list(inst.int_vars) == list(range(50))


def test_indset_preset():
    inst = generate(GenSpec("indset", "small"))
    assert inst.n_vars == 500


def test_preset_table():
    assert PRESETS["setcover"]["large"] == (1000, 2000)
    assert PRESETS["cauction"]["medium"] == (1000, 200)
    assert PRESETS["facilities"]["large"] == (150, 150)
    assert PRESETS["indset"]["medium"] == (1000,)


@pytest.mark.parametrize("family", FAMILIES)
def test_deterministic_bytes(family):
    dims = {"setcover": (40, 20), "cauction": (30, 10), "facilities": (4, 5), "indset": (25,)}[family]
    a = json.dumps(to_json_dict(generate(GenSpec(family, "custom", 7, dims))))
    b = json.dumps(to_json_dict(generate(GenSpec(family, "custom", 7, dims))))
    c = json.dumps(to_json_dict(generate(GenSpec(family, "custom", 8, dims))))
    assert a == b and a != c


def test_spec_validation():
    with pytest.raises(ValueError):
        GenSpec("tsp")
    with pytest.raises(ValueError):
        GenSpec("setcover", "huge")
    with pytest.raises(ValueError):
        GenSpec("setcover", "custom")


def test_setcover_structure():
    for seed in range(5):
        inst = generate(GenSpec("setcover", "custom", seed, (30, 40)))
        A = inst.dense_A()
        assert np.all((A != 0).sum(axis=1) >= 2)
        assert set(np.unique(A)) <= {0.0, -1.0} and np.all(inst.b == -1)
        assert np.all((inst.c >= 1) & (inst.c <= 100) & (inst.c == np.round(inst.c)))
        ones = np.ones(inst.n_vars)
        assert inst.check_feasible(ones)
        assert solve_lp(inst).objective <= inst.objective(ones) + 1e-9


def test_setcover_density():
    inst = generate(GenSpec("setcover", "small"))
    assert inst.nnz / (inst.n_vars * inst.n_cons) == pytest.approx(0.05, rel=0.01)


def test_cauction_zero_feasible_and_bound():
    for seed in range(5):
        inst = generate(GenSpec("cauction", "custom", seed, (10, 6)))
        zero = np.zeros(inst.n_vars)
        assert inst.check_feasible(zero) and inst.objective(zero) == 0.0
        lp = solve_lp(inst)
        stats, _ = solve(inst, PseudocostPolicy())
        # minimization form: the LP bound sits below the best integral objective
        assert lp.objective <= stats.incumbent_objective + 1e-9
        assert stats.optimality_proven


def test_cauction_bundles():
    inst = generate(GenSpec("cauction", "custom", 3, (200, 30)))
    sizes = (inst.dense_A() != 0).sum(axis=0)
    assert sizes.min() >= 1 and sizes.max() <= 30
    assert 2.5 < sizes.mean() < 5.5
    assert np.all(inst.c < 0)


def test_facilities_vs_enumeration():
    for seed in range(3):
        inst = generate(GenSpec("facilities", "custom", seed, (3, 3)))
        F = 3
        best = np.inf
        for open_set in itertools.product([0.0, 1.0], repeat=F):
            l, u = inst.l.copy(), inst.u.copy()
            l[:F] = u[:F] = open_set
            lp = solve_lp(from_dense(inst.c, inst.dense_A(), inst.b, l, u))
            if lp.optimal:
                best = min(best, lp.objective)
        stats, _ = solve(inst, MostFractionalPolicy())
        assert stats.incumbent_objective == pytest.approx(best, rel=1e-9, abs=1e-7)


def test_facilities_all_open_feasible():
    inst = generate(GenSpec("facilities", "custom", 1, (5, 8)))
    F, C = 5, 8
    A, b = inst.dense_A(), inst.b
    cap = -A[2 * C:, :F].diagonal()
    demand = A[2 * C, F:F + C]
    assert cap.sum() >= demand.sum()
    x = np.zeros(inst.n_vars)
    x[:F] = 1.0
    x[F:] = np.tile(cap / cap.sum(), (C, 1)).T.ravel()  # each customer split by capacity share
    assert inst.check_feasible(x)


def test_indset_matches_brute_force():
    for seed in range(3):
        inst = generate(GenSpec("indset", "custom", seed, (10,), {"affinity": 2}))
        edges = barabasi_albert(10, 2, np.random.default_rng(seed))
        assert inst.n_cons == len(edges)
        best = 0
        for mask in range(1 << 10):
            if all(not (mask >> u & 1 and mask >> v & 1) for u, v in edges):
                best = max(best, bin(mask).count("1"))
        stats, _ = solve(inst, PseudocostPolicy())
        assert stats.incumbent_objective == -best


def test_barabasi_albert_degrees():
    edges = barabasi_albert(50, 4, np.random.default_rng(0))
    assert len(edges) == 10 + 4 * 45 and all(u < v for u, v in edges)
    assert len(set(edges)) == len(edges)
