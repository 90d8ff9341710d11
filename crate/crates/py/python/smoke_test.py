"""Exercise the bindings end to end: pure helpers, a hand-built system,
and a tiny sweep. Run after `maturin develop` (or installing the wheel)."""

import tiersim_py as ts


def helpers():
    assert ts.percentile(list(range(1, 101)), 99.0) == 99
    assert ts.percentile([1, 2, 3, 4], 50.0) == 2
    try:
        ts.percentile([], 50.0)
    except ValueError:
        pass
    else:
        raise AssertionError("empty sample set must raise")
    assert [ts.mq_level(f) for f in (0, 1, 2, 7, 8)] == [0, 0, 1, 2, 3]
    assert ts.rebalance_quotas([3.0, 1.0], 100, 1000, 0) == [700, 300]


def lru_by_hand():
    sim = ts.Simulation(3, policy="swap", device="flash")
    ctx = sim.add_context()
    sim.start()
    pages, stall = sim.allocate(ctx, 3)
    assert stall == 0
    assert sim.access(*pages[0]) == 0
    # A fourth page needs a frame: the least recent page (1) is dirty and
    # is written back first, 200 us latency plus 4 us of transfer.
    more, stall = sim.allocate(ctx, 1)
    assert stall == 204, stall
    assert sim.tier(*pages[1]) == "inflight-write"
    sim.run_until(sim.now + stall)
    assert sim.tier(*pages[1]) == "flash"
    assert sim.tier(*more[0]) == "dram"
    # Faulting page 1 back evicts page 2, also dirty: write then read.
    assert sim.access(*pages[1]) == 204 + 84
    assert sim.tier(*pages[2]) == "flash"
    assert sim.counters()["demand_faults"] == 1
    sim.check_invariants()


def tiny_sweep():
    settings = {
        "policy": "both",
        "containers": "1,2",
        "duration_s": 1.5,
        "warmup_s": 0.5,
        "scale": 16384,
        "dram_pages": 4096,
        "critical.working_set_pages": 256,
        "critical.cold_pages": 512,
    }
    rows = ts.run_sweep(settings)
    assert [(r["policy"], r["containers"]) for r in rows] == [
        ("swap", 1), ("swap", 2), ("dmx", 1), ("dmx", 2)]
    assert all(r["tps"] > 0 for r in rows)
    assert ts.sweep_csv(settings) == ts.sweep_csv(settings)
    echo = ts.resolve_config(settings)
    assert "policy = both" in echo
    try:
        ts.resolve_config({"no.such.key": 1})
    except ValueError as e:
        assert "no.such.key" in str(e)
    else:
        raise AssertionError("unknown key must raise")


if __name__ == "__main__":
    helpers()
    lru_by_hand()
    tiny_sweep()
    print("python smoke test passed")
