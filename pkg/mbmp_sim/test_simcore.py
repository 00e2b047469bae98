import json

import pytest

from mbmp_sim.bandwidth import MacTimingConfig, flow_bandwidth
from mbmp_sim.geometry import ArenaConfig, RadioConfig, Topology
from mbmp_sim.protocol import ProtocolVariant
from mbmp_sim.scenario import build, is_sweep_file, load_scenario, parse_scenario
from mbmp_sim.simcore import (
    U_MAX,
    FlowStatus,
    Simulator,
    apply_fluid_contention,
    build_load_map,
    per_hop_delay,
    run,
)

W = 930_467.72  # 133 pkt/s of 512 B
MBMP_VARIANTS = ["mbmp-multihop", "mbmp-power", "mbmp-cs"]

_cache = {}


@pytest.fixture
def three_flows(bundled):
    """One three_flows report per variant, shared across the module."""
    def get(variant):
        if variant not in _cache:
            _cache[variant] = run(bundled("three_flows"), variant).report
        return _cache[variant]
    return get


def _sample(report, t, node):
    for row in report.bandwidth:
        if row["t_us"] == t * 1_000_000 and row["node"] == node:
            return row
    raise KeyError((t, node))


# ----------------- fluid channel -----------------
def test_single_flow_is_not_degraded():
    topo = Topology([(0, 0), (200, 0)], RadioConfig(), ArenaConfig())
    factors = apply_fluid_contention(build_load_map(topo, [(1, 0, 500_000)]))
    assert factors == {1: 1.0}


def test_symmetric_overload_degrades_both_flows_equally():
    topo = Topology([(0, 0), (200, 0)], RadioConfig(), ArenaConfig())
    factors = apply_fluid_contention(build_load_map(topo, [(1, 0, 1.5e6), (2, 1, 1.5e6)]))
    assert factors[1] == pytest.approx(factors[2])
    assert factors[1] == pytest.approx((2 / 3) ** 0.5, rel=1e-6)


def test_three_flows_middle_flow_is_squeezed(bundled):
    built = build(bundled("three_flows"))
    a, c, e = (built.topology.node_id(x) for x in "ACE")
    w = flow_bandwidth(MacTimingConfig(), built.flows[0])
    factors = apply_fluid_contention(
        build_load_map(built.topology, [(1, a, w), (2, c, w), (3, e, w)]))
    assert factors[1] == 1.0 and factors[3] == 1.0
    assert factors[2] == pytest.approx(0.7747, abs=1e-3)


def test_background_load_counts_only_at_its_node():
    topo = Topology([(0, 0), (200, 0)], RadioConfig(), ArenaConfig())
    load_map = build_load_map(topo, [], background=[1e6, 0.0])
    assert list(load_map.loads()) == [1e6, 0.0]


def test_per_hop_delay_grows_with_utilization():
    base = 3.498e-3
    assert per_hop_delay(base, 0.0) == pytest.approx(base)
    assert per_hop_delay(base, 0.5) == pytest.approx(2 * base)
    assert per_hop_delay(base, 1.0) == pytest.approx(base / (1 - U_MAX))
    assert per_hop_delay(base, 3.0) == per_hop_delay(base, 1.0)


# ----------------- three_flows channel -----------------
@pytest.mark.parametrize("t,node,expected", [
    (39, "A", 2e6 - W), (39, "C", 2e6 - W), (39, "E", 2e6),
    (79, "A", 2e6 - 2 * W), (79, "C", 2e6 - 2 * W), (79, "E", 2e6 - W),
    (120, "A", 2e6 - 1.77467 * W), (120, "C", 0.0), (120, "E", 2e6 - 1.77467 * W),
])
def test_three_flows_local_bandwidth_under_dsr(three_flows, t, node, expected):
    row = _sample(three_flows("dsr"), t, node)
    assert row["local_truth_bps"] == pytest.approx(expected, abs=5_000)
    assert row["local_estimate_bps"] == pytest.approx(row["local_truth_bps"], rel=0.02, abs=5_000)


def test_three_flows_dsr_falsely_admits_the_third_flow(three_flows):
    report = three_flows("dsr")
    assert report.flow(3).status == "finished"
    assert report.flow(3).false_admission
    assert report.flow(2).steady_ratio < 0.95
    assert report.n_f < 0


def test_three_flows_local_only_admits_and_squeezes(three_flows):
    report = three_flows("local-only")
    assert report.flow(3).admitted_at_us is not None
    assert report.flow(2).steady_ratio <= 0.85
    assert report.n_f < 0


@pytest.mark.parametrize("variant", MBMP_VARIANTS)
def test_three_flows_mbmp_rejects_the_third_flow(three_flows, variant):
    report = three_flows(variant)
    assert report.flow(3).status == "rejected"
    assert report.flow(1).steady_ratio >= 0.99
    assert report.flow(2).steady_ratio >= 0.99
    assert abs(report.n_f) <= 1_000
    assert report.false_admissions == 0


def test_three_flows_sensing_variant_sends_no_admission_requests(three_flows):
    report = three_flows("mbmp-cs")
    assert report.control_messages.get("AdmissionRequest", 0) == 0


def test_three_flows_mbmp_delay_below_dsr(three_flows):
    assert three_flows("mbmp-multihop").avg_per_hop_delay_us < three_flows("dsr").avg_per_hop_delay_us


def test_three_flows_dsr_overload_triggers_rediscovery(bundled):
    result = run(bundled("three_flows"), "dsr", trace=True)
    retries = result.trace.where("overload_rediscovery", flow=2)
    assert 1 <= len(retries) <= 3
    assert result.trace.where("overload_rediscovery", flow=1) == []


# ----------------- engine properties -----------------
def test_runs_are_deterministic(bundled):
    a = run(bundled("three_flows"), "mbmp-multihop", trace=True)
    b = run(bundled("three_flows"), "mbmp-multihop", trace=True)
    assert a.trace.lines() == b.trace.lines()
    assert a.report.window_frame().to_csv(index=False) == b.report.window_frame().to_csv(index=False)


def test_empty_flow_list(bundled):
    scenario = bundled("walkthrough").model_copy(update={"flows": []})
    report = run(scenario, "mbmp-multihop").report
    assert report.total_throughput == 0
    assert report.total_control_messages == 0
    assert report.n_f == 0
    assert report.flows == []


def test_infeasible_flow_is_rejected_at_the_source(bundled):
    data = bundled("walkthrough").model_dump(mode="json")
    data["flows"][0].update(rate=2000, packet_size=1500)
    report = run(parse_scenario(data), "mbmp-multihop").report
    assert report.flow(1).status == "rejected"
    assert report.flow(1).reason == "infeasible"


def _shifted_three_flows(bundled, dx):
    data = bundled("three_flows").model_dump(mode="json")
    data["arena"] = {"width": 2100, "height": 1000}
    for node in data["nodes"]:
        node["x"] += dx
        node["label"] += "2"
    for flow in data["flows"]:
        flow["flow_id"] += 3
        flow["src"] += "2"
        flow["dst"] += "2"
    data["monitor"] = []
    return data


def test_disjoint_scenarios_add_up(bundled):
    first = bundled("three_flows").model_dump(mode="json")
    first["monitor"] = []
    second = _shifted_three_flows(bundled, 1300)
    joint = dict(second, nodes=first["nodes"] + second["nodes"],
                 flows=first["flows"] + second["flows"])

    a = run(parse_scenario(first), "local-only").report
    b = run(parse_scenario(second), "local-only").report
    ab = run(parse_scenario(joint), "local-only").report
    merged = a.merge(b)

    assert ab.total_throughput == merged.total_throughput
    assert ab.control_messages == merged.control_messages
    assert ab.admitted == merged.admitted
    assert abs(ab.n_f - merged.n_f) <= 1


def test_no_reservation_survives_a_run(bundled):
    for name in ("three_flows", "walkthrough", "walkthrough_reject"):
        sim = Simulator(bundled(name), "mbmp-multihop")
        sim.run()
        assert all(not agent.reservations for agent in sim.protocol.agents)


def test_flows_end_in_a_terminal_state(three_flows):
    for variant in [v.value for v in ProtocolVariant]:
        for flow in three_flows(variant).flows:
            assert flow.status in {s.value for s in (FlowStatus.FINISHED, FlowStatus.REJECTED,
                                                      FlowStatus.BROKEN)}


def test_throughput_never_exceeds_demand(three_flows):
    for variant in [v.value for v in ProtocolVariant]:
        for flow in three_flows(variant).flows:
            assert flow.steady_bps <= flow.offered_bps + 1


@pytest.mark.parametrize("variant", ["mbmp-multihop", "mbmp-cs", "local-only"])
def test_every_bundled_trace_is_valid_json(scenario_dir, tmp_path, variant):
    for path in sorted(scenario_dir.glob("*.json")):
        if is_sweep_file(path):
            continue
        out = tmp_path / f"{path.stem}.jsonl"
        run(load_scenario(path), variant, trace=True).trace.write(out)
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert all(isinstance(r["t_us"], int) for r in records)


@pytest.mark.parametrize("variant", MBMP_VARIANTS)
def test_fixed_pairs_admitted_traffic_keeps_delay_low(bundled, variant):
    report = run(bundled("fixed_pairs"), variant).report
    assert any(f.status == "finished" for f in report.flows)
    assert 0 < report.avg_per_hop_delay_us <= 70_000
