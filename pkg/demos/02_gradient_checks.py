"""Spot-check reverse-mode gradients against central differences.

A quick tour of the verification suite: a handful of primitive ops, every
network block, and the full two-branch objective for one seed. The full
ten-seed run is ``esihdr gradcheck``.
"""
from esihdr.verify import check_branches, check_modules, check_primitives

seed = 0
picked = {"op:conv2d", "op:softmax", "op:layer_norm", "op:ssim", "op:window_attention"}
results = [r for r in check_primitives(seed) if r.name in picked]
results += check_modules(seed, samples=40)
results += check_branches(seed, samples=30)

for r in results:
    status = "ok  " if r.passed else "FAIL"
    print(f"{status} {r.name:22s} max rel err {r.max_error:.2e}  ({r.seconds:.1f}s)")
print("all passed" if all(r.passed for r in results) else "some checks failed")
