"""How the perturbation mask is built, one layer at a time.

Texture first: high-frequency content is the absolute residual against a
Gaussian blur, and pixels whose residual clears gamma count as textured.
Then the hair region from the face annotation, and finally their AND,
which is where the off-manifold attack is allowed to write. Saves a sheet
of the intermediate layers into demos/out/.
"""

from pathlib import Path

import numpy as np

from dualcloak import (
    AnnotationParser,
    BlurParams,
    combine_masks,
    comparison_grid,
    gaussian_blur,
    hair_mask,
    parse_face,
    high_freq,
    save_image,
    texture_mask,
)
from dualcloak.synth import make_dataset

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

ds = make_dataset(1, 1, 64, seed=20260817, sample_offset=2100)
img, ann = ds.images[0], ds.annotations[0]

blur = BlurParams()  # 19x19 kernel, sigma 5
residual = high_freq(img, blur)
print(f"blur {blur.kernel_size}x{blur.kernel_size} sigma {blur.sigma}: "
      f"residual range [{residual.min():.4f}, {residual.max():.4f}]")

tex = texture_mask(img, params=blur)  # residual > 0.003 after the blur
hair = hair_mask(parse_face(AnnotationParser(ann), img))
mask = combine_masks(tex, hair)
total = mask.size
print(f"textured pixels: {int(tex.sum())}/{total}")
print(f"hair pixels:     {int(hair.sum())}/{total}")
print(f"attack surface:  {int(mask.sum())}/{total} (texture AND hair)")

# Promote the scalar layers to image panels for the sheet.
def panel(layer):
    return np.repeat(np.clip(layer, 0.0, 1.0)[..., None], 3, axis=2)


sheet = comparison_grid([
    ("input", [img]),
    ("blurred", [gaussian_blur(img, blur)]),
    ("high-frequency residual", [panel(residual / max(residual.max(), 1e-9))]),
    ("texture mask", [panel(tex)]),
    ("hair mask", [panel(hair)]),
    ("combined mask", [panel(mask)]),
])
save_image(sheet, OUT / "mask_anatomy.png")
print("wrote", OUT / "mask_anatomy.png")
