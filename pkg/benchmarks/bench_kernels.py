"""Compare the numba kernels with the plain-Python fallback.

Each path runs in its own interpreter because ``ADVDRIVE_NUMBA`` is read at
import time. Usage: ``python3 benchmarks/bench_kernels.py [--steps N]``.
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from advdrive import _jit
from advdrive.env import EpisodeConfig, HighwayEnv, observe

steps = int(sys.argv[1])
env = HighwayEnv(EpisodeConfig(rule_vehicle_count=20, adversary_control="agent"))
env.reset(seed=0)
env.step({k: 1 for k in env.agent_ids})  # compile / warm caches outside the timed loop

t0 = time.perf_counter()
done = 0
seed = 1
while done < steps:
    if env.over:
        env.reset(seed=seed)
        seed += 1
    env.step({k: 1 for k in env.agent_ids})
    done += 1
step_time = (time.perf_counter() - t0) / steps

t0 = time.perf_counter()
for _ in range(steps):
    observe(env.world, 0)
obs_time = (time.perf_counter() - t0) / steps
print(json.dumps({"numba": _jit.USE_NUMBA, "env_step_ms": 1e3 * step_time, "observe_us": 1e6 * obs_time}))
"""


def measure(flag: str, steps: int) -> dict:
    env = dict(os.environ, ADVDRIVE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(steps)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=200, help="decision steps per path (15 physics substeps each)")
    args = parser.parse_args()
    fast = measure("1", args.steps)
    slow = measure("0", args.steps)
    print(f"{'path':<10}{'env step (ms)':>16}{'observe (us)':>16}")
    for name, r in (("numba", fast), ("python", slow)):
        print(f"{name:<10}{r['env_step_ms']:>16.3f}{r['observe_us']:>16.1f}")
    print(f"speed-up: env step x{slow['env_step_ms'] / fast['env_step_ms']:.1f}, "
          f"observe x{slow['observe_us'] / fast['observe_us']:.1f}")


if __name__ == "__main__":
    main()
