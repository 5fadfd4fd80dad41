import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptsync.graph import (DiGraph, GraphError, JointWindow, SwitchingSchedule,
                             check_assumption3, check_assumption4, from_edge_list,
                             h_matrix, laplacian, parse_edge, sigma_at, union_graph)
from oracles import nx_laplacian, nx_reaches_all


@st.composite
def digraphs(draw, max_nodes=7):
    n = draw(st.integers(1, max_nodes))
    pairs = [(j, i) for j in range(n) for i in range(n) if i != j]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs))) if pairs else set()
    return DiGraph(n, frozenset(edges))


def g(n, *edges):
    return DiGraph(n, frozenset(edges))


# -- laplacian / h_matrix ------------------------------------------------------

def test_laplacian_empty_graph_is_zero():
    assert np.array_equal(laplacian(g(3)), np.zeros((3, 3)))


def test_laplacian_hand_example():
    L = laplacian(g(3, (0, 1), (2, 1), (1, 2)))
    assert np.array_equal(L, [[0, 0, 0], [-1, 2, -1], [0, -1, 1]])


def test_h_matrix_hand_example():
    assert np.array_equal(h_matrix(g(3, (0, 1), (2, 1), (1, 2))), [[2, -1], [-1, 1]])


def test_h_matrix_empty_and_star():
    assert np.array_equal(h_matrix(g(3)), np.zeros((2, 2)))
    assert np.array_equal(h_matrix(g(4, (0, 1), (0, 2), (0, 3))), np.eye(3))


def test_edges_into_leader_are_ignored():
    assert np.array_equal(laplacian(g(2, (1, 0))), np.zeros((2, 2)))


@settings(max_examples=1000)
@given(digraphs())
def test_laplacian_row_sums_zero(graph):
    assert np.all(laplacian(graph).sum(axis=1) == 0.0)


@given(digraphs())
def test_laplacian_matches_networkx(graph):
    assert np.array_equal(laplacian(graph), nx_laplacian(graph))


@given(digraphs())
def test_h_matrix_is_laplacian_minor(graph):
    assert np.array_equal(h_matrix(graph), laplacian(graph)[1:, 1:])


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 3)], [(-1, 1)]])
def test_invalid_edges_rejected(edges):
    with pytest.raises(GraphError):
        DiGraph(3, frozenset(edges))


def test_parse_edge():
    assert parse_edge("2 -> 1") == (2, 1)
    with pytest.raises(GraphError):
        parse_edge("2 - 1")
    assert from_edge_list(3, ["0 -> 1", "1->2"]).edges == {(0, 1), (1, 2)}


# -- switching -----------------------------------------------------------------

@pytest.fixture
def two_step():
    return SwitchingSchedule((g(3, (0, 1)), g(3, (1, 2))), ((0.0, 1), (5.0, 2)), dwell=1.0)


@pytest.mark.parametrize("t,expected", [(0.0, 1), (5.0, 2), (4.999, 1), (100.0, 2)])
def test_sigma_at(two_step, t, expected):
    assert sigma_at(two_step, t) == expected


def test_sigma_at_negative_time(two_step):
    with pytest.raises(ValueError):
        sigma_at(two_step, -0.1)


def test_periodic_schedule_wraps():
    s = SwitchingSchedule.periodic([g(2), g(2, (0, 1))], [(1, 1.0), (2, 2.0)])
    assert [sigma_at(s, t) for t in (0, 0.5, 1, 2.9, 3, 4, 6)] == [1, 1, 2, 2, 1, 2, 1]


def test_dwell_violation_rejected():
    with pytest.raises(GraphError, match="dwell"):
        SwitchingSchedule((g(2), g(2)), ((0.0, 1), (0.5, 2)), dwell=1.0)


def test_union_alternating():
    s = SwitchingSchedule.periodic([g(3, (0, 1)), g(3, (1, 2))], [(1, 1.0), (2, 1.0)])
    assert union_graph(s, 0.0, 10.0).edges == {(0, 1), (1, 2)}


def test_union_inside_one_interval(two_step):
    assert union_graph(two_step, 1.0, 2.0) == two_step.graphs[0]


def test_union_of_empty_graphs():
    s = SwitchingSchedule.periodic([g(3), g(3)], [(1, 1.0), (2, 1.0)])
    assert union_graph(s, 0.0, 5.0).edges == frozenset()


def test_union_bad_window(two_step):
    with pytest.raises(ValueError):
        union_graph(two_step, 3.0, 3.0)


@st.composite
def periodic_schedules(draw, N=3):
    k = draw(st.integers(1, 4))
    graphs = [draw(digraphs_on(N + 1)) for _ in range(k)]
    durations = [draw(st.sampled_from([1.0, 1.5, 2.0])) for _ in range(k)]
    return SwitchingSchedule.periodic(graphs, list(zip(range(1, k + 1), durations)), dwell=1.0)


@st.composite
def digraphs_on(draw, n):
    pairs = [(j, i) for j in range(n) for i in range(1, n) if i != j]
    return DiGraph(n, frozenset(draw(st.sets(st.sampled_from(pairs)))))


@given(periodic_schedules(), st.floats(0, 10), st.floats(0.01, 5), st.floats(0.01, 5))
def test_union_is_additive_over_splits(s, a, d1, d2):
    b, c = a + d1, a + d1 + d2
    assert union_graph(s, a, c).edges == union_graph(s, a, b).edges | union_graph(s, b, c).edges


# -- assumption checks -------------------------------------------------------------

def test_assumption3_chain_cycle_true():
    s = SwitchingSchedule.periodic([g(4, (0, 1)), g(4, (1, 2)), g(4, (2, 3))],
                                   [(1, 1.0), (2, 1.0), (3, 1.0)])
    ok, rep = check_assumption3(s, JointWindow.cycle(s))
    assert ok and rep.holds


def test_assumption3_unreachable_node_named():
    s = SwitchingSchedule.periodic([g(4, (0, 1)), g(4, (1, 2))], [(1, 1.0), (2, 1.0)])
    ok, rep = check_assumption3(s, JointWindow.cycle(s))
    assert not ok
    assert rep.unreachable == (3,)
    assert "3" in rep.message


def test_assumption3_static_tree():
    s = SwitchingSchedule.static(g(4, (0, 1), (1, 2), (1, 3)))
    assert check_assumption3(s, JointWindow.default(s))[0]


def test_assumption3_window_too_long():
    s = SwitchingSchedule.periodic([g(2, (0, 1))], [(1, 2.0)])
    ok, rep = check_assumption3(s, JointWindow(1.0, (0, 1)))
    assert not ok and "nu" in rep.message


@given(periodic_schedules(N=4), st.permutations([1, 2, 3, 4]))
def test_assumption3_invariant_under_relabeling(s, perm):
    relabel = {0: 0, **{k + 1: p for k, p in enumerate(perm)}}
    graphs = [DiGraph(5, frozenset((relabel[j], relabel[i]) for j, i in gr.edges))
              for gr in s.graphs]
    s2 = SwitchingSchedule(tuple(graphs), s.intervals, s.dwell, s.period)
    assert check_assumption3(s, JointWindow.cycle(s))[0] == \
        check_assumption3(s2, JointWindow.cycle(s2))[0]


@given(periodic_schedules())
def test_assumption3_matches_networkx_reachability(s):
    union = union_graph(s, 0.0, s.period)
    assert check_assumption3(s, JointWindow.cycle(s))[0] == nx_reaches_all(union)


def test_assumption4_examples():
    assert check_assumption4(SwitchingSchedule.static(g(3, (1, 2), (2, 1), (0, 1))))
    assert not check_assumption4(SwitchingSchedule.static(g(3, (1, 2))))
    assert check_assumption4(SwitchingSchedule.static(g(3, (0, 1), (0, 2))))


@given(periodic_schedules())
def test_assumption4_gives_symmetric_follower_block(s):
    if check_assumption4(s):
        for gr in s.graphs:
            H = h_matrix(gr)
            off = H - np.diag(np.diag(H))
            assert np.array_equal(off, off.T)
