import copy

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def toy_dict(H=1, storage=False):
    """Two buses, two gas nodes, one line, one pipe; bus 2 has a gas-fueled unit."""
    return copy.deepcopy(
        {
            "format": "iegds-v1",
            "name": "toy",
            "horizon": {"H": H, "T_s": 1.0},
            "buses": [
                {"id": 1, "theta_min": 0.0, "theta_max": 0.0, "v_min": 0.95, "v_max": 1.05,
                 "d_e": [0.0] * H, "has_transmission_tie": True, "p_et_max": None},
                {"id": 2, "theta_min": -0.5, "theta_max": 0.5, "v_min": 0.95, "v_max": 1.05,
                 "d_e": [1.5] * H, "has_transmission_tie": False, "p_et_max": None},
            ],
            "lines": [{"from": 1, "to": 2, "B": 40.0, "G": 10.0}],
            "gas_nodes": [
                {"id": 1, "psi_min": 1.0, "psi_max": 4.0, "d_g": [0.0] * H, "is_source": True},
                {"id": 2, "psi_min": 1.0, "psi_max": 4.0, "d_g": [0.5] * H, "is_source": False},
            ],
            "pipes": [{"from": 1, "to": 2, "c_f": 1.0, "phi_max": 5.0}],
            "prosumers": [
                {"bus_id": 1, "gas_node_id": 1, "dg_kind": "none", "p_dg_min": 0.0, "p_dg_max": 0.0,
                 "q_ngu": 0.0, "l_ngu": 0.0, "eta_gu": 1.0,
                 "storage": None if not storage else {
                     "e_cap": 4.0, "eta_st": 0.99, "eta_ch": 0.95, "eta_dh": 0.95, "x_min": 0.1,
                     "x_max": 0.9, "x_init": 0.5, "p_ch_max": 1.0, "p_dh_max": 1.0,
                     "Q_st": [[1.0 if i == j else 0.0 for j in range(H)] for i in range(H)]}},
                {"bus_id": 2, "gas_node_id": 2, "dg_kind": "gas_fueled", "p_dg_min": 0.0, "p_dg_max": 1.0,
                 "q_ngu": 0.0, "l_ngu": 0.0, "eta_gu": 2.0, "storage": None},
            ],
            "market": {"q_e": [0.02] * H, "l_e": [2.0] * H, "q_g": [0.01] * H, "l_g": [0.5] * H,
                       "sigma_e_min": 0.0, "sigma_e_max": 50.0, "sigma_g_min": 0.0, "sigma_g_max": 50.0},
        }
    )


@pytest.fixture
def toy():
    from iegds.netmodel import network_from_dict

    return network_from_dict(toy_dict())


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
