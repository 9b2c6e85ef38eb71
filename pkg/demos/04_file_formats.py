"""
Tensor and image files
======================

Round-trip arrays through AGT1 and images through binary PGM/PPM.
"""

import tempfile
from pathlib import Path

import numpy as np

from agos.data import load_agt, load_image, read_pnm, save_agt, write_pnm

tmp = Path(tempfile.mkdtemp())
rng = np.random.default_rng(3)

arr = rng.standard_normal((2, 3, 4)).astype(np.float32)
save_agt(tmp / "a.agt", arr)
raw = (tmp / "a.agt").read_bytes()
print("AGT1 header bytes:", raw[:6], "total", len(raw))
print("lossless:", load_agt(tmp / "a.agt").tobytes() == arr.tobytes())

# 8-bit colour and 16-bit grey.
rgb = rng.integers(0, 256, size=(4, 5, 3))
write_pnm(tmp / "c.ppm", rgb)
grey = rng.integers(0, 65536, size=(4, 5))
write_pnm(tmp / "g.pgm", grey, maxval=65535)
print("PPM lossless:", np.array_equal(read_pnm(tmp / "c.ppm")[0], rgb))
print("PGM 16-bit lossless:", np.array_equal(read_pnm(tmp / "g.pgm")[0][..., 0], grey))

# Loaders scale PNM pixels into [0, 1].
(tmp / "tiny.pgm").write_bytes(b"P5\n# hand written\n2 2\n255\n" + bytes([0, 255, 128, 64]))
print(load_image(tmp / "tiny.pgm")[..., 0])
