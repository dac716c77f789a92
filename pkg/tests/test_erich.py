import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import stbp.erich as erich
from checks import app, independent_problems, itype, problem
from stbp.datagen import build_named_case, generate_tiny_case
from stbp.erich import (
    ErichConfig,
    erich_stages,
    solve_erich,
    sort_applications,
    sort_catalog,
    stage2_pack_reserved,
    stage3_reserved_to_ondemand,
    stage4_pack_preemptible,
)
from stbp.io import dumps, solution_to_dict
from stbp.model import DemandDistribution, Market, UnsolvableError, chance_feasible, portfolio_cost, validate
from stbp.oracle import brute_force_optimum
from stbp.packing import Packing


def test_sort_applications_examples():
    assert sort_applications([]) == []
    a, b, c = app("a", 2, 5, 1, 1), app("b", 0, 5, 1, 0.5), app("c", 0, 5, 1, 2)
    assert [x.id for x in sort_applications([a, b, c])] == ["c", "b", "a"]


def test_sort_applications_ties_by_id_then_stable():
    same = [app("b", 0, 1, 1, 1), app("a", 0, 1, 1, 1)]
    assert [x.id for x in sort_applications(same)] == ["a", "b"]
    # fully equal keys keep their input order
    twins = [app("x", 0, 1, 1, 1), app("x", 0, 1, 2, 1)]
    assert [x.demand_mean for x in sort_applications(twins)] == [1, 2]


def test_sort_catalog_examples():
    t1, t2, t3 = itype("t1", "on-demand", 10, 2), itype("t2", "on-demand", 10, 3), itype("t3", "on-demand", 4, 1)
    assert [t.id for t in sort_catalog([t1, t2, t3])] == ["t1", "t3", "t2"]
    assert sort_catalog([t1]) == [t1]
    small, big = itype("s", "on-demand", 5, 1), itype("b", "on-demand", 10, 2)
    assert [t.id for t in sort_catalog([small, big])] == ["b", "s"]


# -- stage 2 ---------------------------------------------------------------------


def test_stage2_extends_new_host_to_min_term():
    a = app("a", 0, 4, 3, 1)
    r = itype("R", "reserved", 10, 2, 5)
    prob = problem([a], [r], horizon=6)
    pack = stage2_pack_reserved([a], [r], Packing(prob))
    [host] = pack.hosts.values()
    assert (host.start, host.end) == (0, 5)
    assert pack.cost() == 10
    assert validate(pack.to_portfolio(), prob) == []


def test_stage2_shares_a_host_when_the_sum_fits():
    # 6 + 1.645 * sqrt(2) = 8.33 <= 10
    a, b = app("a", 0, 4, 3, 1), app("b", 0, 4, 3, 1)
    r = itype("R", "reserved", 10, 2, 1)
    prob = problem([a, b], [r])
    pack = stage2_pack_reserved([a, b], [r], Packing(prob))
    assert len(pack.hosts) == 1


def test_stage2_unsolvable_without_fitting_type():
    big = app("big", 0, 2, 12)
    r = itype("R", "reserved", 10, 1, 1)
    prob = problem([big], [r, itype("O", "on-demand", 20, 5)])
    with pytest.raises(UnsolvableError) as err:
        stage2_pack_reserved([big], [r], Packing(prob))
    assert err.value.app_id == "big"


def test_stage2_falls_back_to_on_demand():
    big = app("big", 0, 2, 12)
    r, o = itype("R", "reserved", 10, 1, 1), itype("O", "on-demand", 20, 5)
    pack = stage2_pack_reserved([big], [r], Packing(problem([big], [r, o])), fallback=[o])
    assert [h.itype.id for h in pack.hosts.values()] == ["O"]


# -- stage 3 ---------------------------------------------------------------------


def _stage3_case(od_price):
    a = app("a", 0, 2, 3)
    r, o = itype("R", "reserved", 10, 1, 10), itype("O", "on-demand", 10, od_price)
    prob = problem([a], [r, o], horizon=10)
    pack = stage2_pack_reserved([a], [r], Packing(prob))
    assert pack.cost() == 10
    return stage3_reserved_to_ondemand(pack, [o])


def test_stage3_drops_costly_reserved_host():
    pack = _stage3_case(2.0)
    assert [h.itype.id for h in pack.hosts.values()] == ["O"]
    assert pack.cost() == 4


def test_stage3_keeps_reserved_on_equal_cost():
    pack = _stage3_case(5.0)
    assert [h.itype.id for h in pack.hosts.values()] == ["R"]


def test_stage3_without_reserved_hosts_is_identity():
    a = app("a", 0, 2, 3)
    o = itype("O", "on-demand", 10, 1)
    prob = problem([a], [o])
    pack = stage2_pack_reserved([a], [], Packing(prob), fallback=[o])
    before = pack.to_portfolio()
    assert stage3_reserved_to_ondemand(pack, [o]).to_portfolio() == before


# -- stage 4 ---------------------------------------------------------------------


def test_stage4_uses_idle_reserved_capacity():
    fixed = app("f", 0, 6, 2)
    flex = app("p", 0, 6, 2, preemptible=True)
    r, s = itype("R", "reserved", 10, 1, 6), itype("S", "spot", 10, 0.1)
    prob = problem([fixed, flex], [r, s])
    pack = stage2_pack_reserved([fixed], [r], Packing(prob))
    pack = stage4_pack_preemptible([flex], [s], pack)
    assert len(pack.hosts) == 1
    assert validate(pack.to_portfolio(), prob) == []


def test_stage4_opens_one_spot_host_per_gap():
    fixed = app("f", 2, 4, 8)
    flex = app("p", 0, 6, 2, preemptible=True)
    o, s = itype("O", "on-demand", 10, 1), itype("S", "spot", 10, 0.1)
    prob = problem([fixed, flex], [o, s])
    pack = stage2_pack_reserved([fixed], [], Packing(prob), fallback=[o])
    # the only existing host covers [2, 4) and still has room at q = 0.95 (10 >= 8 + 2)
    pack = stage4_pack_preemptible([flex], [s], pack)
    spans = sorted((h.start, h.end) for h in pack.hosts.values() if h.itype.market is Market.SPOT)
    assert spans == [(0, 2), (4, 6)]
    assert validate(pack.to_portfolio(), prob) == []


def test_stage4_empty_set_is_identity(small_problem):
    pack = stage2_pack_reserved([], [], Packing(small_problem))
    assert stage4_pack_preemptible([], [], pack).hosts == {}


def test_stage4_never_opens_where_an_existing_host_fits(monkeypatch):
    original = erich._open_first_fitting
    misses = []

    def spy(pack, a, catalog, t0, t1):
        # stage 2 placements are whole-lifespan and checked elsewhere
        for host in pack.hosts.values() if a.preemptible else ():
            for t in range(max(t0, host.start), min(t1, host.end)):
                k = t - host.start
                d = DemandDistribution(host.mean[k] + a.demand_mean, host.var[k] + a.variance)
                if chance_feasible(d, host.itype.capacity, pack.problem.q_min):
                    misses.append((a.id, host.id, t))
        return original(pack, a, catalog, t0, t1)

    monkeypatch.setattr(erich, "_open_first_fitting", spy)
    for seed in range(3):
        solve_erich(build_named_case("case_2", seed))
    assert misses == []


# -- whole solver ------------------------------------------------------------------


def test_empty_problem():
    prob = problem([], [itype("O", "on-demand", 1, 1)], horizon=3)
    pf = solve_erich(prob)
    assert pf.instances == () and portfolio_cost(pf, prob.type_index) == 0


def test_q_min_override():
    a, b = app("a", 0, 2, 4, 1), app("b", 0, 2, 4, 1)
    prob = problem([a, b], [itype("O", "on-demand", 10, 1)], q_min=0.99)
    assert len(solve_erich(prob).instances) == 2
    assert len(solve_erich(prob, ErichConfig(q_min=0.5)).instances) == 1
    with pytest.raises(ValueError):
        ErichConfig(q_min=2)


def test_tiny_instance_against_optimum():
    prob = generate_tiny_case(3, max_apps=3, max_types=3, horizon=6)
    pf = solve_erich(prob)
    assert validate(pf, prob) == []
    _, best = brute_force_optimum(prob)
    assert portfolio_cost(pf, prob.type_index) >= best - 1e-9


def test_deterministic_solution_bytes():
    prob = build_named_case("case_1", 4)
    a, b = solve_erich(prob), solve_erich(prob)
    assert a == b
    assert dumps(solution_to_dict(a, prob, "erich")) == dumps(solution_to_dict(b, prob, "erich"))


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), q=st.sampled_from([0.5, 0.8, 0.95, 0.99]))
def test_valid_and_stage3_monotone_on_random_tiny_cases(seed, q):
    prob = generate_tiny_case(seed, q_min=q)
    pack, trace = erich_stages(prob)
    pf = trace.portfolios["stage4"]
    assert validate(pf, prob) == []
    assert independent_problems(pf, prob) == []
    assert trace.costs["stage3"] <= trace.costs["stage2"]
    for (a, t), inst in pf.assignments.items():
        itp = prob.type_index[pf.instance_index[inst].type_ref]
        assert prob.app_index[a].preemptible or itp.market is not Market.SPOT


@pytest.mark.parametrize("case", ["case_1", "case_2", "case_3", "case_4"])
def test_valid_on_generated_cases(case):
    prob = build_named_case(case, 11)
    pf = solve_erich(prob)
    assert validate(pf, prob) == []
    assert independent_problems(pf, prob) == []
    doc = json.loads(dumps(solution_to_dict(pf, prob, "erich")))
    assert float(doc["total_cost"]) == pytest.approx(portfolio_cost(pf, prob.type_index), abs=1e-6)


def test_preemptible_without_spot_takes_cheapest_billed_fallback():
    # on-demand costs 2.487 * 5; the reserved type bills 1.414 * max(2, 5)
    prob = problem([app("a0", 2, 7, 2.939, 0.837, preemptible=True)],
                   [itype("t0", "reserved", 5.511, 1.414, 2), itype("t1", "on-demand", 7.753, 2.487)])
    pf = solve_erich(prob)
    assert [i.type_ref for i in pf.instances] == ["t0"]
    assert portfolio_cost(pf, prob.type_index) == pytest.approx(7.07)
