import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from iegds import netmodel
from iegds.netmodel import (
    CaseKnobs,
    NetworkParseError,
    NetworkSchemaError,
    NetworkValidationError,
    generate_case,
    is_spanning_tree,
    load_bundled,
    load_network,
    network_from_dict,
    network_to_dict,
)

from conftest import toy_dict


def test_minimal_file_round_trip(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps(toy_dict(H=3)))
    net = load_network(p)
    assert net.n_agents == 2 and net.H == 3
    assert network_to_dict(network_from_dict(network_to_dict(net))) == network_to_dict(net)


def test_reversed_theta_bounds_names_bus(tmp_path):
    d = toy_dict()
    d["buses"].append(dict(d["buses"][1], id=3, theta_min=0.2, theta_max=-0.2))
    d["lines"].append({"from": 2, "to": 3, "B": 1.0, "G": 1.0})
    d["prosumers"].append(dict(d["prosumers"][1], bus_id=3, gas_node_id=None, dg_kind="none", p_dg_max=0.0))
    with pytest.raises(NetworkValidationError, match="bus 3"):
        network_from_dict(d)


def test_bundled_case_has_33_buses_and_tree_gas_graph():
    net = load_bundled()
    assert net.n_agents == 33 and net.n_gas == 20
    assert len(net.pipes) == 19 and netmodel.gas_graph_is_tree(net)


def test_parse_and_schema_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(NetworkParseError):
        load_network(bad)
    d = toy_dict()
    del d["market"]
    with pytest.raises(NetworkSchemaError, match="market"):
        network_from_dict(d)
    d = toy_dict()
    d["buses"][0]["colour"] = "red"
    with pytest.raises(NetworkSchemaError):
        network_from_dict(d)
    with pytest.raises(OSError):
        load_network(tmp_path / "missing.json")


@pytest.mark.parametrize(
    "path,value,needle",
    [
        (("gas_nodes", 1, "psi_min"), 5.0, "psi_min"),
        (("pipes", 0, "c_f"), 0.0, "c_f"),
        (("market", "sigma_e_max"), -1.0, "sigma_e"),
        (("prosumers", 1, "p_dg_max"), 0.0, "p_dg_min"),
        (("gas_nodes", 0, "is_source"), False, "source"),
    ],
)
def test_invariant_violations(path, value, needle):
    d = toy_dict()
    obj = d
    for k in path[:-1]:
        obj = obj[k]
    obj[path[-1]] = value
    with pytest.raises(NetworkValidationError, match=needle):
        network_from_dict(d)


def test_gas_node_without_owner_is_rejected():
    d = toy_dict()
    d["prosumers"][0]["gas_node_id"] = None
    with pytest.raises(NetworkValidationError, match="not owned"):
        network_from_dict(d)


def test_spanning_tree_examples():
    assert is_spanning_tree(3, [(0, 1), (1, 2)])
    assert not is_spanning_tree(3, [(0, 1), (1, 2), (0, 2)])
    with pytest.raises(ValueError):
        is_spanning_tree(3, [(0, 1)])


def _has_cycle(n, edges):
    # union-find cycle detection, independent of edge counting
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return True
        parent[ra] = rb
    return False


def test_spanning_tree_matches_cycle_oracle_on_all_small_connected_graphs():
    """Every connected graph with up to 8 nodes.

    The atlas lists all graphs up to 7 nodes; each connected 8-node graph has a
    non-cut vertex whose removal leaves a connected 7-node graph, so attaching a
    new vertex to every nonempty subset of a connected 7-node graph covers them.
    """
    checked = 0
    seven = []
    for g in nx.graph_atlas_g()[1:]:
        if not nx.is_connected(g):
            continue
        n, edges = g.number_of_nodes(), list(g.edges())
        assert is_spanning_tree(n, edges) == (not _has_cycle(n, edges))
        checked += 1
        if n == 7:
            seven.append(edges)
    for edges in seven:
        for mask in range(1, 128):
            extra = [(7, v) for v in range(7) if mask >> v & 1]
            e = edges + extra
            assert is_spanning_tree(8, e) == (not _has_cycle(8, e))
            checked += 1
    assert checked > 100_000


def test_generate_case_deterministic_and_varied():
    t = load_bundled()
    a = json.dumps(network_to_dict(generate_case(t, 1)))
    b = json.dumps(network_to_dict(generate_case(t, 1)))
    c = json.dumps(network_to_dict(generate_case(t, 2)))
    assert a == b and a != c


def test_generate_case_rejects_pigeonhole():
    t = load_bundled()
    with pytest.raises(ValueError):
        generate_case(t, 1, CaseKnobs(n_gas_dg=(20, 20), n_other_dg=(20, 20)))
    with pytest.raises(ValueError):
        generate_case(t, 1, CaseKnobs(n_storage=(40, 40)))
    with pytest.raises(ValueError, match="unknown knob"):
        CaseKnobs.from_dict({"n_dg": [1, 2]})


@given(st.integers(0, 2**32 - 1))
def test_generate_case_only_touches_knob_fields(seed):
    t = netmodel.resample_horizon(load_bundled(), 6)
    g = generate_case(t, seed)
    netmodel.validate(g)
    netmodel.validate(g)
    a, b = network_to_dict(t), network_to_dict(g)
    assert a["horizon"] == b["horizon"]
    assert a["lines"] == b["lines"]
    assert a["pipes"] == b["pipes"]
    assert a["buses"] == b["buses"]
    assert a["market"] == b["market"]
    for ga, gb in zip(a["gas_nodes"], b["gas_nodes"]):
        ratio = np.array(gb["d_g"]) / np.array(ga["d_g"])
        assert np.allclose(ratio, ratio[0]) and 0.7 <= ratio[0] <= 1.3


def test_resample_horizon_keeps_energy_scale():
    t = load_bundled()
    r = netmodel.resample_horizon(t, 6)
    assert r.H == 6 and r.horizon.T_s == pytest.approx(4 * t.horizon.T_s)
    with pytest.raises(ValueError):
        netmodel.resample_horizon(t, 7)


def test_bundled_file_matches_builder():
    from iegds.cases import build_case33_20

    assert network_to_dict(build_case33_20()) == network_to_dict(load_bundled())


def test_network_is_immutable(toy):
    with pytest.raises(Exception):
        toy.buses[0].d_e[0] = 3.0
    with pytest.raises(Exception):
        toy.horizon.H = 4
