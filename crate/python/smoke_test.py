"""Smoke test for the pyprefixsim extension.

Build it first, e.g. `maturin develop -m crates/py/Cargo.toml`, or
`cargo build -p prefixsim-py --release` and put target/release/libpyprefixsim.so
on PYTHONPATH as pyprefixsim.so. Runs under pytest or as a script.
"""

import math
import random

import pyprefixsim as ps

SMALL = {"preset": "balanced", "num_sessions": 40, "seed": 3}


def test_policies():
    assert "saecache" in ps.policies()
    assert "lru" in ps.policies()


def test_simulate_dict_report():
    cfg = dict(SMALL, sim={"policy": "saecache", "capacity": {"fraction": 0.1}})
    r = ps.simulate(cfg)
    assert r["policy"] == "saecache"
    assert 0.0 < r["overall_hit_ratio"] < 1.0
    assert r["num_requests"] == len(r["requests"])
    assert ps.simulate(cfg) == r


def test_generated_trace_replays_identically():
    text = ps.generate(SMALL)
    assert text.count("\n") > 40
    cfg = {"sim": {"policy": "lru", "capacity": {"fraction": 0.2}}}
    a = ps.simulate(cfg, trace_jsonl=text)
    b = ps.simulate(dict(SMALL, **cfg))
    assert a["overall_hit_ratio"] == b["overall_hit_ratio"]


def test_sweep_rows():
    rows = ps.sweep(["policy=lru,lfu,saecache"], SMALL)
    assert [r["policy"] for r in rows] == ["lru", "lfu", "saecache"]
    assert all(r["error"] is None for r in rows)


def test_lognormal_helpers():
    rng = random.Random(0)
    xs = [rng.lognormvariate(2.0, 0.8) for _ in range(20000)]
    mu, sigma = ps.fit_lognormal(xs)
    assert abs(mu - 2.0) < 0.03 and abs(sigma - 0.8) < 0.03
    assert math.isclose(ps.survival(math.exp(2.0), 2.0, 0.8), 0.5, rel_tol=1e-9)


def test_bad_config_raises():
    for bad in ({"preset": "nope"}, {"sim": {"polcy": "lru"}}):
        try:
            ps.simulate(bad)
        except ValueError:
            continue
        raise AssertionError(f"{bad} should be rejected")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok  {name}")
