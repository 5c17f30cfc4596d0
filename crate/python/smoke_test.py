"""Smoke test for the pyuwtrust extension module.

Build the module first:

    cargo build --release -p pyuwtrust --features extension-module
    cp target/release/libpyuwtrust.so python/pyuwtrust.so

then run `python3 python/smoke_test.py` from the repository root.
"""

import csv
import math
import pathlib
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import pyuwtrust  # noqa: E402

MODEL = HERE.parent / "crates" / "core" / "models" / "scorer.bin"


def small_scenario():
    cfg = pyuwtrust.ScenarioConfig()
    cfg.n_agents = 20
    cfg.n_auvs = 4
    cfg.mission_duration_s = 1800.0
    cfg.warmup_intervals = 2
    cfg.adversary_fraction = 0.2
    cfg.validate()
    return cfg


def check_config():
    cfg = small_scenario()
    back = pyuwtrust.ScenarioConfig.from_toml(cfg.to_toml())
    assert back.to_dict() == cfg.to_dict()
    assert cfg.intervals() == 60
    try:
        cfg.mode = "nonsense"
    except ValueError:
        pass
    else:
        raise AssertionError("bad mode accepted")


def check_simulate():
    cfg = small_scenario()
    a = pyuwtrust.simulate(cfg, 3, mode="Bayesian")
    b = pyuwtrust.simulate(cfg, 3, mode="Bayesian")
    assert a == b, "same seed must reproduce"
    assert len(a["rows"]) == cfg.intervals()
    stats = a["stats"]
    assert 0.0 <= stats["accuracy"] <= 1.0
    assert 0.0 <= stats["pdr"] <= 1.0
    norms = pyuwtrust.calibration(cfg)
    assert norms["norm_volume"] > 0


def check_scorer():
    scorer = pyuwtrust.Scorer.load(str(MODEL))
    assert 1_000_000 <= scorer.param_count <= 1_400_000
    quiet = scorer.score([[0.2, 30.0, 10.0, 0.0, 1.0, 0.1, 0.0]] * 20)
    assert 0.0 <= quiet <= 1.0 and math.isfinite(quiet)
    try:
        scorer.score([[1.0, 2.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("short feature row accepted")
    return scorer


def check_experiment(scorer):
    cfg = small_scenario()
    with tempfile.TemporaryDirectory() as d:
        out = pathlib.Path(d)
        agg = pyuwtrust.experiment(cfg, str(out), runs=2, modes=list(pyuwtrust.MODES), model=scorer)
        assert set(agg["modes"]) == set(pyuwtrust.MODES)
        rows = pyuwtrust.report(str(out), str(out / "report.csv"))
        with open(out / "report.csv", newline="") as f:
            table = list(csv.DictReader(f))
        assert len(table) == rows == 3 * cfg.intervals()
        assert "accuracy_std" in table[0]

        ledger = next((out / "ledgers").glob("bayesian_*.jsonl"))
        ok, blocks = pyuwtrust.verify_ledger(str(ledger))
        assert ok, "fresh ledger must verify"
        if blocks:
            data = bytearray(ledger.read_bytes())
            data[10] ^= 0x01
            ledger.write_bytes(bytes(data))
            assert pyuwtrust.verify_ledger(str(ledger)) == (False, 0)


def main():
    check_config()
    check_simulate()
    scorer = check_scorer()
    check_experiment(scorer)
    print("pyuwtrust smoke test passed")


if __name__ == "__main__":
    main()
