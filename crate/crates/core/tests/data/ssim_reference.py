# Regenerates ssim_reference.txt with scikit-image (Gaussian window, sigma 1.5,
# population covariance, data range 1). The image generator is mirrored in
# tests/acceptance.rs.
import numpy as np
from skimage.metrics import structural_similarity
M = (1 << 64) - 1
def stream(seed):
    x = seed & M
    while True:
        x ^= x >> 12; x ^= (x << 25) & M; x ^= x >> 27
        yield (((x * 0x2545F4914F6CDD1D) & M) >> 11) / float(1 << 53)
W, H = 24, 20
out = []
for k in range(50):
    g = stream(((k + 1) * 0x9E3779B97F4A7C15) & M)
    n = W * H * 3
    x = np.array([next(g) for _ in range(n)])
    v = np.array([next(g) for _ in range(n)])
    a = k / 50.0
    y = a * x + (1.0 - a) * v
    s = structural_similarity(x.reshape(H, W, 3), y.reshape(H, W, 3), gaussian_weights=True, sigma=1.5,
                              use_sample_covariance=False, data_range=1.0, channel_axis=2)
    out.append(repr(float(s)))
print(",\n".join(out))
