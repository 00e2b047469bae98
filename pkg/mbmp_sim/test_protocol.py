import pytest

from mbmp_sim.protocol import ProtocolConfig, ProtocolVariant
from mbmp_sim.scenario import parse_scenario
from mbmp_sim.simcore import FlowStatus, Simulator, run

W = 139_920  # 20 pkt/s of 512 B


def _labels(records):
    return [chr(ord("A") + r["node"]) for r in records]


# ----------------- variants -----------------
@pytest.mark.parametrize("name,variant", [
    ("mbmp-multihop", ProtocolVariant.MBMP_MULTIHOP),
    ("swan", ProtocolVariant.LOCAL_ONLY),
    ("power", ProtocolVariant.MBMP_POWER),
    ("CS", ProtocolVariant.MBMP_CS),
    ("dsr", ProtocolVariant.DSR),
])
def test_variant_names(name, variant):
    assert ProtocolVariant.parse(name) is variant


def test_unknown_variant():
    with pytest.raises(ValueError):
        ProtocolVariant.parse("aodv")


def test_admission_timeout_must_be_positive():
    with pytest.raises(ValueError):
        ProtocolConfig(admission_timeout=0)


# ----------------- four-node walkthrough -----------------
def test_walkthrough_admission_trace(bundled):
    result = run(bundled("walkthrough"), "mbmp-multihop", trace=True)
    trace = result.trace

    partial = trace.where("partial_admission", flow=1)
    assert _labels(partial) == ["A", "B", "C", "D"]
    assert [r["n_ct"] for r in partial] == [1, 2, 3, 2]
    assert all(r["passed"] for r in partial)

    full = trace.where("full_admission", flow=1)
    assert _labels(full) == ["C", "B", "A"]
    assert [r["n_ct"] for r in full] == [3, 3, 3]

    requests = trace.where("admission_request", flow=1)
    assert _labels(requests) == ["C", "B", "A"]
    assert all(r["mode"] == "multihop" for r in requests)
    assert trace.where("admission_check", passed=False) == []

    admitted = trace.where("admitted", flow=1)
    assert len(admitted) == 1
    assert admitted[0]["route"] == [0, 1, 2, 3]
    assert result.report.flow(1).status == "finished"
    assert result.report.flow(1).steady_ratio == pytest.approx(1.0)


def test_walkthrough_consumed_bandwidth_is_a_multiple_of_w(bundled):
    result = run(bundled("walkthrough"), "mbmp-multihop", trace=True)
    for r in result.trace.where("full_admission"):
        assert r["bc"] == pytest.approx(r["n_ct"] * W, abs=2)


def test_walkthrough_rejected_by_loaded_source(bundled):
    result = run(bundled("walkthrough_reject"), "mbmp-multihop", trace=True)
    trace = result.trace

    at_a = trace.where("admission_check", node=0, passed=False)
    assert len(at_a) == 1
    assert at_a[0]["n_ct"] == 3
    assert at_a[0]["originator"] == 2
    assert at_a[0]["bc"] == pytest.approx(3 * W, abs=2)

    # the reject walks back A -> B -> C
    rejects = trace.where("send", kind="AdmissionReject")
    assert _labels(rejects) == ["A", "B"]
    verdict = trace.where("cneighborhood_check", node=2, passed=False)
    assert len(verdict) == 1 and verdict[0]["rejected_by"] == 1

    failure = trace.where("admission_failure", node=2)
    assert failure and failure[0]["to"] == 3
    assert trace.where("admitted") == []
    assert result.report.flow(1).status == "rejected"
    assert result.report.flow(1).reason == "admission"


def test_power_variant_reaches_the_same_decisions(bundled):
    for name in ("walkthrough", "walkthrough_reject"):
        multihop = run(bundled(name), "mbmp-multihop").report
        power = run(bundled(name), "mbmp-power").report
        assert [f.status for f in multihop.flows] == [f.status for f in power.flows]


def test_power_sends_one_request_per_check(bundled):
    multihop = run(bundled("walkthrough"), "mbmp-multihop").report
    power = run(bundled("walkthrough"), "mbmp-power").report
    assert power.control_messages["AdmissionRequest"] == 3
    assert multihop.control_messages["AdmissionRequest"] > 3


def test_sensing_variant_never_queries(bundled):
    result = run(bundled("walkthrough"), "mbmp-cs", trace=True)
    assert result.trace.where("send", kind="AdmissionRequest") == []
    assert all(r["mode"] == "sensed" for r in result.trace.where("cneighborhood_check"))
    assert result.report.flow(1).status == "finished"


def test_dsr_reserves_nothing(bundled):
    result = run(bundled("walkthrough_reject"), "dsr", trace=True)
    assert result.trace.where("soft_reserve") == []
    assert result.report.flow(1).status == "finished"


# ----------------- backup routes -----------------
DIAMOND = {
    "name": "diamond",
    "cneighbor": {"k_cs": 1},
    "nodes": [
        {"label": "S", "x": 100, "y": 500},
        {"label": "X", "x": 300, "y": 600},
        {"label": "Y", "x": 300, "y": 400},
        {"label": "D", "x": 500, "y": 500},
        {"label": "Z", "x": 300, "y": 800, "background_load": 1_950_000},
    ],
    "flows": [{"flow_id": 1, "src": "S", "dst": "D", "rate": 20, "packet_size": 512}],
    "duration": 5,
    "steady_window": 2,
    "seed": 1,
}


def test_destination_falls_back_to_a_cached_route():
    result = run(parse_scenario(DIAMOND), "mbmp-multihop", trace=True)
    trace = result.trace
    s, x, y, d, z = range(5)

    assert trace.where("cache_backup", node=d, route=[s, y, d])
    assert trace.where("admission_check", node=z, passed=False, originator=x)
    assert trace.where("admission_failure", node=x, to=d)
    assert trace.where("backup_reply", node=d, route=[s, y, d])
    assert result.report.flow(1).status == "finished"
    assert result.report.flow(1).route == ["S", "Y", "D"]


# ----------------- route maintenance -----------------
def test_broken_route_triggers_one_rediscovery(bundled):
    sim = Simulator(bundled("walkthrough"), "mbmp-multihop", trace=True)
    sim.run_until(2.0)
    assert sim.flows[1].status is FlowStatus.ADMITTED

    positions = sim.topology.positions.copy()
    positions[2] = (500, 900)
    sim.relocate(sim.topology.moved(positions))

    assert len(sim.trace.where("route_break", flow=1)) == 2
    sim.run_until(2.1)
    assert len(sim.trace.where("rediscovery", flow=1)) == 1
    assert all(1 not in agent.reservations for agent in sim.protocol.agents)

    result = sim.run()
    assert len(result.trace.where("rediscovery", flow=1)) == 1
    flow = result.report.flow(1)
    assert flow.status == "broken"
    assert flow.reason == "rediscovery-timeout"
    assert flow.route_retries == 1


def test_break_at_the_source_stops_further_reports(bundled):
    sim = Simulator(bundled("walkthrough"), "mbmp-multihop", trace=True)
    sim.run_until(2.0)

    # B drifts off: A-B and B-C both break, A notices first
    positions = sim.topology.positions.copy()
    positions[1] = (300, 900)
    sim.relocate(sim.topology.moved(positions))

    breaks = sim.trace.where("route_break", flow=1)
    assert _labels(breaks) == ["A"]
    assert len(sim.trace.where("rediscovery", flow=1)) == 1
    assert len(sim.trace.where("flow_start", flow=1, attempt=1)) == 1

    result = sim.run()
    flow = result.report.flow(1)
    assert flow.status == "broken"
    assert flow.reason == "rediscovery-timeout"
    assert flow.route_retries == 1


def test_admission_keeps_a_headroom_free(bundled):
    scenario = bundled("walkthrough_reject")
    data = scenario.model_dump(mode="json")
    # A alone would still fit 3 W, but not with the default headroom on top
    data["nodes"][0]["background_load"] = 2_000_000 - 3 * W - 50_000
    loose = parse_scenario({**data, "protocol": {**data["protocol"], "admission_headroom": 0.0}})
    assert run(loose, "mbmp-multihop").report.flow(1).status == "finished"
    assert run(parse_scenario(data), "mbmp-multihop").report.flow(1).status == "rejected"


def test_admission_headroom_is_a_fraction():
    with pytest.raises(ValueError):
        ProtocolConfig(admission_headroom=1.0)
