"""Smoke test for the `perp` extension module.

Uses an installed `perp` if importable; otherwise loads the library built by
`cargo build --release -p perp-py`.
"""

import importlib
import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load_module():
    try:
        return importlib.import_module("perp")
    except ImportError:
        pass
    for name in ("libperp.so", "libperp.dylib", "perp.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            suffix = ".pyd" if name.endswith(".dll") else ".so"
            tmp = pathlib.Path(tempfile.mkdtemp()) / f"perp{suffix}"
            shutil.copy(built, tmp)
            spec = importlib.util.spec_from_file_location("perp", tmp)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("perp module not found: run `cargo build --release -p perp-py` or `maturin develop`")


def main():
    perp = load_module()

    v_eq = perp.equilibrium_speed()
    assert 8.9 <= v_eq <= 9.0, v_eq

    env = perp.RingEnv(seed=0)
    env.warmup(600)
    speeds = env.speeds
    assert len(speeds) == 40 and min(speeds) >= 0.0
    obs = env.observe()
    assert all(0.0 <= x <= 1.0 for x in obs), obs
    before = env.step_count
    assert env.step(8.0) is False
    assert env.step_count == before + 1

    again = perp.RingEnv(seed=0)
    again.warmup(600)
    assert again.speeds == speeds, "same seed must reproduce the ring"

    assert perp.reward_perp(10.0, 8.0) == 8.0
    assert perp.reward_perp(8.0, 8.0) == 8.0
    assert perp.reward_perp(6.0, 8.0) == 4.0
    assert perp.advise(2.0588, -6.0) == 0.0
    assert perp.advise(35.0, 6.0) == 35.0
    assert perp.driver_act(2.0, -5.0, seed=1) >= 0.0

    report = perp.evaluate("idm", episodes=2, seed=3)
    assert report["episodes"] == 2 and report["collisions"] == 0
    assert 0.0 < report["avg_speed"] < v_eq, report

    empty = perp.evaluate("osl", episodes=0)
    assert empty["avg_speed"] is None and empty["episodes"] == 0

    try:
        perp.Pcp.load("does/not/exist.json")
    except (FileNotFoundError, ValueError):
        pass
    else:
        raise AssertionError("loading a missing checkpoint must fail")

    assert "[pcp]" in perp.default_config()
    print(f"perp smoke test ok: v_eq={v_eq:.4f} idm_avg={report['avg_speed']:.3f}")
    assert math.isfinite(report["avg_std"])


if __name__ == "__main__":
    main()
