"""Time the hot kernels on the numba and pure-numpy backends.

Each backend runs in its own interpreter because the backend is fixed at
import time (``BILINKOOP_NUMBA``). Compilation happens in an untimed warm-up.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import bilinkoop
from bilinkoop import basis, mpc, plant
from bilinkoop.basis import build_basis, lift_batch

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)


def best(fn, n=1):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        times.append((time.perf_counter() - t0) / n)
    return min(times)


out = {"backend": bilinkoop.BACKEND}
b = build_basis("bilinear", 6, 3, 3)
X, U = rng.normal(size=(12000, 6)), rng.normal(size=(12000, 3))
out["lift 12000 x 336"] = best(lambda: lift_batch(b, X, U))

coeffs = plant.ArmParameters()._coefficients()
th, dth = rng.uniform(-1, 1, (60, 3)), np.zeros((60, 3))
tau = rng.uniform(-1, 1, (60, 3))
out["rk4 60 arms x 0.05 s"] = best(lambda: plant._rk4_batch(th, dth, tau, 5e-4, 100, *coeffs))
out["rk4 1 arm x 0.05 s"] = best(lambda: plant._rk4_batch(th[:1], dth[:1], tau[:1], 5e-4, 100,
                                                          *coeffs), n=20)

nb = build_basis("nonlinear", 6, 3, 3)
Crows = 0.02 * rng.normal(size=(6, nb.M))
x0, Us = rng.normal(size=6), rng.normal(size=(10, 3))
out["nmpc rollout+sens (rho 3)"] = best(
    lambda: mpc._nmpc_rollout(Crows, nb.exponents, x0, Us, True), n=50)

P = rng.normal(size=(11, 2, 84))
B, z0, R = rng.normal(size=(84, 3)), rng.normal(size=84), rng.normal(size=(10, 2))
out["condensed QP (10 x 3)"] = best(lambda: mpc._condensed(P, B, z0, R, 1.0, 1e-3), n=200)

exc = plant.ExcitationConfig(torque_amplitude=2.0, init_angle_range=np.pi)
out["collect 12000 snapshots"] = best(lambda: plant.collect_snapshots(excitation=exc, K=12000))
print(json.dumps(out))
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, BILINKOOP_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def fmt(sec: float) -> str:
    return f"{sec * 1e3:10.3f} ms" if sec >= 1e-3 else f"{sec * 1e6:10.1f} us"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run("1", args.repeat), run("0", args.repeat)
    print(f"{'kernel':30s} {'numba':>13s} {'numpy':>13s} {'speedup':>8s}")
    for k in fast:
        if k == "backend":
            continue
        print(f"{k:30s} {fmt(fast[k])} {fmt(slow[k])} {slow[k] / fast[k]:7.1f}x")
    if fast["backend"] != "numba":
        print("note: numba unavailable, both columns used the numpy path")


if __name__ == "__main__":
    main()
