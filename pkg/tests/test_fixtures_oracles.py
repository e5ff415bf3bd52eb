import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbsp.dynamics import WQParams, simulate, state_space_for_step
from cbsp.fixtures import balanced_flows, grid_fixture, net1_like_fixture, write_bundle
from cbsp.hydraulics import validate_mass_balance
from cbsp.network import NodeKind, read_inp
from cbsp.oracles import OracleBudgetError, oracle_exhaustive_placement, oracle_simulate


def test_fixtures_are_balanced(three_node, net1, grid):
    for fx in (three_node, net1, grid):
        for prof in fx.profiles:
            assert validate_mass_balance(fx.topology, prof, 1e-9).passed


def test_three_node_regimes(three_node):
    snaps = three_node.profile.snapshots
    for k in three_node.notes["drain_steps"]:
        assert snaps[k].flow["P1"] < 0 and snaps[k].flow["PU1"] == 0.0
    for k in three_node.notes["fill_steps"]:
        assert snaps[k].flow["PU1"] > 0 and snaps[k].flow["P1"] > 0
    tank = three_node.topology.node("TK1").tank
    assert tank.area == pytest.approx(100.0, rel=1e-5)
    assert tank.init_volume == pytest.approx(1000.0, rel=1e-5)


def test_net1_cases_differ(net1):
    signs = set()
    for prof in net1.profiles:
        signs.add(tuple(np.sign(s.flow["P110"]) for s in prof.snapshots))
        assert all(v > 0 for s in prof.snapshots for v in s.volume.values())
    assert len(signs) == 4
    with pytest.raises(ValueError):
        net1_like_fixture(7)


def test_net1_state_count(net1_case3):
    fx = net1_case3
    params = WQParams(fx.dt_wq, max_segments=fx.max_segments)
    sizes = [state_space_for_step(fx.topology, fx.profile, k, params).n_x for k in range(fx.profile.n_steps)]
    assert 200 <= min(sizes) and max(sizes) <= 400


def test_grid_size(grid):
    params = WQParams(grid.dt_wq, max_segments=grid.max_segments)
    n_x = state_space_for_step(grid.topology, grid.profile, 0, params).n_x
    assert 900 <= n_x <= 1100
    assert len(grid.pool) == 30


def test_balanced_flows_errors():
    fx = grid_fixture(2, 2, n_hours=2)
    with pytest.raises(ValueError, match="touches"):
        balanced_flows(fx.topology, {"J0_0": 1.0}, {})
    with pytest.raises(ValueError, match="not balanced"):
        balanced_flows(fx.topology, {"J0_0": 1.0}, {"PU0": 0.0, "GT": 0.0})
    f = balanced_flows(fx.topology, {"J0_0": -1.0}, {"PU0": 2.0, "GT": 1.0})
    assert f["PU0"] == 2.0


def test_bundle_round_trip(tmp_path, net1_case3):
    cfg = write_bundle(net1_case3, tmp_path, n_s=2)
    topo = read_inp(tmp_path / f"{net1_case3.name}.inp")
    assert topo.node_ids == net1_case3.topology.node_ids
    assert '"n_s": 2' in cfg.read_text()


@pytest.mark.parametrize("step", [2, 8])
def test_oracle_matches_simulate(three_node, step):
    fx = three_node
    params = WQParams(fx.dt_wq)
    init = {"R1": 1.0, "J1": 0.4, "TK1": 0.7, "P1": 0.3}
    ref = oracle_simulate(fx.topology, fx.profile, fx.dt_wq, init, {"TK1": 0.01}, n_steps=step + 1)
    got = simulate(fx.topology, fx.profile, params, init, {"TK1": 0.01}, n_steps=step + 1)
    space = state_space_for_step(fx.topology, fx.profile, step, params)
    for i, label in enumerate(space.index.labels):
        np.testing.assert_allclose(got[step][:, i], ref[step][label], rtol=1e-12, atol=1e-14)


def test_oracle_matches_simulate_net1(net1_case3):
    fx = net1_case3
    params = WQParams(fx.dt_wq, max_segments=fx.max_segments)
    init = {n.id: 1.0 for n in fx.topology.nodes}
    ref = oracle_simulate(fx.topology, fx.profile, fx.dt_wq, init, {"J10": 0.05}, n_steps=3, max_segments=fx.max_segments)
    got = simulate(fx.topology, fx.profile, params, init, {"J10": 0.05}, n_steps=3)
    space = state_space_for_step(fx.topology, fx.profile, 2, params)
    for i, label in enumerate(space.index.labels):
        np.testing.assert_allclose(got[2][:, i], ref[2][label], rtol=1e-10, atol=1e-13)


def test_oracle_zero_in_zero_out(three_node):
    out = oracle_simulate(three_node.topology, three_node.profile, three_node.dt_wq, n_steps=3)
    assert all(np.all(v == 0.0) for step in out for v in step.values())


@given(c=st.floats(0.1, 5.0))
def test_reservoir_held(three_node, c):
    out = oracle_simulate(three_node.topology, three_node.profile, three_node.dt_wq, {"R1": c}, n_steps=1)
    assert np.all(out[0]["R1"] == c)


def test_exhaustive_unique_when_pool_equals_n_s():
    A = np.diag([0.5, 0.2])
    cols = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
    for kind in ("trace", "logdet"):
        winner, best, values = oracle_exhaustive_placement(A, cols, 2, 3, kind)
        assert winner == ("a", "b") and list(values) == [("a", "b")]
    winner, best, _ = oracle_exhaustive_placement(A, cols, 1, 3, "trace")
    assert winner == ("a",)
    assert best == pytest.approx(1 + 0.25 + 0.0625)
    with pytest.raises(OracleBudgetError):
        oracle_exhaustive_placement(A, {str(i): cols["a"] for i in range(40)}, 20, 2, "trace")
