"""Compiled versus plain-Python slot loop.

Each backend runs in its own interpreter because the switch is read at
import time.  Prints slots per second for every scenario and checks that
both backends produce the same trace.

    python3 benchmarks/bench_kernel.py [--slots 20000]
"""

import argparse
import json
import os
import subprocess
import sys

SCENARIOS = {
    "uncoded_fin_T8": dict(T=8, W=2, s=4, N=8, lam=0.9, pbd=0.5, mode="UNCODED_FIN"),
    "coded_fin_T8": dict(T=8, W=2, s=4, N=8, lam=0.9, pbd=0.5, mode="CODED_FIN"),
    "coded_exact_T8": dict(T=8, W=2, s=4, N=8, lam=0.9, pbd=0.5, mode="CODED_FIN", exact_rank=True),
    "coded_fin_T100": dict(T=100, W=2, s=4, N=16, lam=0.9, pbd=0.5, mode="CODED_FIN"),
}

WORKER = """
import hashlib, json, sys, time
from pmpsched._jit import backend
from pmpsched.sim import ScenarioConfig, SimState
kw, slots = json.loads(sys.argv[1]), int(sys.argv[2])
cfg = ScenarioConfig(**kw)
SimState(cfg, 0).run_slots(50)  # compile / warm caches
state = SimState(cfg, 0)
draws = state.streams.draw(slots, cfg.lam, state.layout.R)
t0 = time.perf_counter()
trace = state.run(*draws)
dt = time.perf_counter() - t0
print(json.dumps({"backend": backend(), "seconds": dt, "digest": hashlib.sha256(trace.tobytes()).hexdigest()}))
"""


def run(kw, slots, disable):
    env = dict(os.environ, PMPSCHED_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, json.dumps(kw), str(slots)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=20000)
    args = ap.parse_args()
    print(f"{'scenario':<16} {'numba slots/s':>14} {'python slots/s':>15} {'speedup':>8}  same trace")
    for name, kw in SCENARIOS.items():
        fast = run(kw, args.slots, False)
        slow = run(kw, args.slots, True)
        a = args.slots / fast["seconds"]
        b = args.slots / slow["seconds"]
        print(f"{name:<16} {a:>14,.0f} {b:>15,.0f} {a / b:>7.0f}x  {fast['digest'] == slow['digest']}")


if __name__ == "__main__":
    main()
