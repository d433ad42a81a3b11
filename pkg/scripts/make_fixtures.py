"""Generate the golden ingestion fixtures committed under fixtures/.

Run once; tests compare decode+preprocess output against the stored dumps
bit-exactly, so regenerate only when the ingestion contract changes.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from m2unet import data, engine  # noqa: E402

ROOT = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def main():
    os.makedirs(ROOT, exist_ok=True)
    rng = np.random.default_rng(20240601)
    # 8x8 color image exercising the full value range, incl. exact 0 and 255
    img = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    img[0, 0] = (0, 0, 0)
    img[7, 7] = (255, 255, 255)
    mask = (rng.random((8, 8)) > 0.5).astype(np.uint8) * 255

    data.encode_image(os.path.join(ROOT, "sample_image.ppm"), img)
    data.encode_image(os.path.join(ROOT, "sample_mask.pgm"), mask)

    sample = data.preprocess(img, mask[:, :, None], 32, sample_id="golden")
    engine.save_tensor_text(os.path.join(ROOT, "golden_image_32.txt"), sample.image)
    engine.save_tensor_text(os.path.join(ROOT, "golden_mask_32.txt"), sample.mask)
    print("fixtures written to", os.path.abspath(ROOT))


if __name__ == "__main__":
    main()
