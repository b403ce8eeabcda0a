"""From a bracketed LDR stack to network inputs.

Renders a synthetic scene with a moving patch, then walks through the
gamma path, the enhancement-stop image and the mu-law tone curve, and
writes everything under ``demo_out/preprocessing``.
"""
import os

import numpy as np

from esihdr import io
from esihdr.imaging import enhancement_stop, gamma_correct, mu_law, pack_input
from esihdr.synth import synth_scene

OUT = os.path.join("demo_out", "preprocessing")

scene = synth_scene(seed=7, motion_px=4)
stack = scene.stack
io.write_scene(OUT, scene)
print(f"scene written to {OUT}/ ({stack.shape[0]}x{stack.shape[1]}, "
      f"t = {[im.exposure_time for im in stack.images]})")

# each exposure mapped back to linear radiance; where it did not clip it
# matches the scene radiance up to 8-bit quantization
for k, im in enumerate(stack.images):
    hdr = gamma_correct(im).pixels
    ok = (im.pixels > 0.02) & (im.pixels < 1.0)
    err = np.abs(hdr - scene.radiance[k])[ok].max()
    print(f"frame {k}: clipped or near-black {1 - ok.all(axis=2).mean():6.1%}, "
          f"max radiance error where valid {err:.4f}")

print(f"pixels covered by the moving patch: {scene.motion_mask.mean():.1%}")

# the ESI marks saturated, colourful regions of the reference exposure
esi = enhancement_stop(stack.reference).values
io.write_png(os.path.join(OUT, "esi.png"), esi)
print(f"ESI range [{esi.min():.3f}, {esi.max():.3f}], mean {esi.mean():.3f}")

x2 = pack_input(stack.reference).data
print(f"packed reference input: {x2.shape} (LDR channels then gamma-corrected channels)")

# mu-law compresses the highlights before the loss and the PSNR-mu metric
for h in (0.0, 0.01, 0.1, 0.5, 1.0):
    print(f"  T({h:<4}) = {float(mu_law(np.array(h))):.4f}")
io.write_png(os.path.join(OUT, "gt_tonemapped.png"), mu_law(scene.ground_truth.pixels))
