"""Smoke test for the extension module.

Build first:  cargo build --release -p kdvlab-py --features extension-module
Run:          python python/smoke_test.py [path/to/libkdvlab_py.so]
"""

import importlib.machinery
import importlib.util
import math
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load(lib=None):
    lib = Path(lib) if lib else ROOT / "target" / "release" / "libkdvlab_py.so"
    loader = importlib.machinery.ExtensionFileLoader("kdvlab_py", str(lib))
    spec = importlib.util.spec_from_file_location("kdvlab_py", lib, loader=loader)
    mod = importlib.util.module_from_spec(spec)
    loader.exec_module(mod)
    return mod


def check_constants(k):
    v, delta = k.constants("cold")
    assert v == 1.0 and abs(delta - 0.5) < 1e-15
    assert abs(k.acoustic_determinant(math.sqrt(2.0), "warm")) < 1e-14
    try:
        k.constants("lukewarm")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")


def check_soliton(k):
    n0 = k.soliton_profile(256, 40.0, "cold")
    times, states = k.kdv(n0, 40.0, "cold", 1.0, 2e-3, 100)
    assert len(times) == 6 and abs(times[-1] - 1.0) < 1e-12
    exact = k.soliton_profile(256, 40.0, "cold", t=1.0)
    err = max(abs(a - b) for a, b in zip(states[-1], exact))
    assert err < 1e-6, err


def check_symbol(k):
    lp, lm, rec = k.symbol(0.3, -0.2, 0.1, 1.5, 0.05)
    assert lp != lm and rec < 1e-10


def check_sweep(k):
    cfg = """
preset = "cold"
tau = 0.1
eps = [0.2, 0.1]
[grid]
n_points = 128
length = 40.0
"""
    rows = k.sweep(cfg)
    assert [r[0] for r in rows] == [0.2, 0.1]
    assert all(r[1] == "ok" and math.isfinite(r[2]) for r in rows), rows
    try:
        k.sweep("tau = -1.0\n")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")


def check_missing_file(k):
    with tempfile.TemporaryDirectory() as d:
        try:
            k.read_trajectory(str(Path(d) / "none.traj"))
        except RuntimeError:
            return
    raise AssertionError("missing file accepted")


def main():
    k = load(sys.argv[1] if len(sys.argv) > 1 else None)
    for check in (check_constants, check_soliton, check_symbol, check_sweep, check_missing_file):
        check(k)
        print("ok", check.__name__)


if __name__ == "__main__":
    main()
