#!/usr/bin/env python3
"""Smoke test for the annulus_py extension module.

Loads the cdylib straight out of the cargo target directory (building it
first if needed), then exercises the kernel layer, one test function,
and the JSON task harness.
"""

import importlib.util
import json
import math
import pathlib
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]


def find_library():
    for profile in ("release", "debug"):
        path = ROOT / "target" / profile / "libannulus_py.so"
        if path.exists():
            return path
    return None


lib = find_library()
if lib is None:
    subprocess.run(["cargo", "build", "-p", "annulus-py"], cwd=ROOT, check=True)
    lib = find_library()
if lib is None:
    sys.exit("cargo build did not produce libannulus_py.so")

spec = importlib.util.spec_from_file_location("annulus_py", lib)
annulus_py = importlib.util.module_from_spec(spec)
spec.loader.exec_module(annulus_py)

a = annulus_py.Annulus()
assert abs(a.q - 0.25) < 1e-15
assert abs(a.sqrt_q - 0.5) < 1e-15
assert a.contains(0.5 + 0.0j)
assert not a.contains(1.5 + 0.0j)

# reciprocal identity: k(z, w) k(z, -w) C' = 1 at weight 1
z, w = 0.52 + 0.11j, -0.33 + 0.41j
gap = abs(a.kernel(z, w) * a.kernel(z, -w) * a.c_prime - 1.0)
assert gap < 1e-8, gap

# both evaluation routes agree in the interior
assert abs(a.kernel(z, w, method="series") - a.kernel(z, w, method="theta")) < 1e-10

# the Gram matrix of a single point is the real diagonal value
g = a.gram([z])
assert abs(g[0][0].imag) < 1e-12 and g[0][0].real > 0.0

# zeta basis: |zeta_0| = 1/sqrt(2) at weight 1 independent of z
assert abs(abs(a.basis_zeta(0, z)) - 1.0 / math.sqrt(2.0)) < 1e-12

# test function: unimodular on both circles, zeros inside, psi(1) = 1
gamma = complex(math.cos(0.7), math.sin(0.7))
psi = a.test_function(gamma)
assert abs(psi(1.0 + 0.0j) - 1.0) < 1e-9
for k in range(8):
    for radius in (1.0, a.q):
        zb = radius * complex(math.cos(k), math.sin(k))
        assert abs(abs(psi(zb)) - 1.0) < 1e-6
zeros = psi.zeros()
assert len(zeros) == 2
for zero in zeros:
    assert a.contains(zero)
    assert abs(psi(zero)) < 1e-8

# harness: kernel audit passes and embeds the sample grid
report = json.loads(annulus_py.run_task(json.dumps({"task": "kernel-check", "seed": 1})))
assert report["status"] == "pass", report["status"]
assert len(report["artifacts"]["kernel_grid"]) == 400

# harness: a small feasible interpolation problem
pick = json.loads(
    annulus_py.run_task(
        json.dumps(
            {
                "task": "pick",
                "nodes": [{"re": 0.5, "im": 0.0}],
                "targets": [{"re": 0.3, "im": 0.0}],
                "num_atoms": 8,
            }
        )
    )
)
assert pick["status"] == "pass", pick["status"]
assert pick["solver"]["num_atoms"] >= 8

print("annulus_py smoke test passed:", annulus_py.version())
