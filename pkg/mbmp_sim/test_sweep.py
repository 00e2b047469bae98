import pytest

from mbmp_sim.scenario import SweepSpec, load_sweep
from mbmp_sim.sweep import run_point, run_sweep, summarize, sweep_columns, sweep_workers

MBMP = ["mbmp-multihop", "mbmp-power", "mbmp-cs"]


def _spec(**overrides):
    data = {
        "scenario": {
            "name": "density",
            "mobility": {"enabled": True, "min_speed": 1, "max_speed": 5, "pause_time": 10,
                         "tick": 0.5},
            "placement": {"kind": "uniform", "count": 20},
            "traffic": {"count": 12, "rate_min": 10, "rate_max": 50, "size_min": 100,
                        "size_max": 1000, "start_min": 2},
            "duration": 40,
        },
        "values": [20],
        "replicates": 1,
        "variants": ["dsr"],
        "base_seed": 100,
    }
    data.update(overrides)
    return SweepSpec.model_validate(data)


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("MBMP_SIM_THREADS", "3")
    assert sweep_workers() == 3
    monkeypatch.setenv("MBMP_SIM_THREADS", "many")
    assert sweep_workers(default=2) == 2


def test_failed_point_becomes_a_row():
    spec = _spec()
    row = run_point(spec, "not-a-variant", 20, 0, 100)
    assert row["status"] == "failed"
    assert row["error"]


def test_rows_keep_job_order():
    spec = _spec(values=[10, 15], replicates=2, variants=["local-only", "dsr"],
                 duration=10)
    frame = run_sweep(spec, workers=1)
    assert list(frame.columns) == sweep_columns("node_count")
    assert list(frame.columns[:2]) == ["variant", "node_count"]
    assert list(zip(frame["variant"], frame["node_count"], frame["replicate"])) == [
        ("local-only", 10, 0), ("local-only", 10, 1), ("local-only", 15, 0), ("local-only", 15, 1),
        ("dsr", 10, 0), ("dsr", 10, 1), ("dsr", 15, 0), ("dsr", 15, 1),
    ]
    assert list(frame["seed"]) == [100, 101] * 4


def test_worker_pool_matches_inline_run():
    spec = _spec(values=[10], replicates=2, variants=["mbmp-cs", "dsr"], duration=10)
    inline = run_sweep(spec, workers=1)
    pooled = run_sweep(spec, workers=2)
    assert inline.equals(pooled)


def test_flow_count_sweep_names_its_column():
    spec = _spec(parameter="flow_count", values=[2], duration=10)
    frame = run_sweep(spec, workers=1)
    assert "flow_count" in frame.columns and "node_count" not in frame.columns
    assert summarize(frame).columns[1] == "flow_count"


@pytest.mark.slow
def test_density_sweep_properties(scenario_dir):
    spec = load_sweep(scenario_dir / "density_sweep.json").model_copy(
        update={"values": [20, 40, 60, 80, 100], "duration": 100,
                "variants": MBMP + ["local-only", "dsr"]})
    frame = run_sweep(spec, workers=sweep_workers())
    assert (frame["status"] == "ok").all()
    means = summarize(frame).set_index(["variant", "node_count"])

    for n in spec.values:
        point = means.xs(n, level="node_count")
        local, dsr = point.loc["local-only"], point.loc["dsr"]
        for variant in MBMP:
            mbmp = point.loc[variant]
            assert mbmp["n_f"] >= local["n_f"], (variant, n)
            assert mbmp["n_f"] >= dsr["n_f"], (variant, n)
            assert abs(mbmp["n_f"]) <= 0.02 * mbmp["offered_load"], (variant, n)
            assert mbmp["total_throughput"] >= local["total_throughput"], (variant, n)
            assert mbmp["avg_per_hop_delay_us"] <= local["avg_per_hop_delay_us"], (variant, n)
            assert mbmp["avg_per_hop_delay_us"] <= dsr["avg_per_hop_delay_us"], (variant, n)

    dense = means.xs(max(spec.values), level="node_count")["control_messages"]
    assert dense["dsr"] >= dense["mbmp-multihop"] >= dense["mbmp-power"] >= dense["mbmp-cs"]
