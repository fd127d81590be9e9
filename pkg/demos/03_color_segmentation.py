"""
Color segmentation and the informativeness test
===============================================

Foreground and background HSV histograms turn each pixel into a
foreground probability. When the thresholded mask has a plausible size the
color map is trusted; otherwise it is flattened to uniform.
"""

import numpy as np

from dptrack.evaluation import SyntheticSpec, make_synthetic_sequence
from dptrack.segmentation import color_probability, initial_model, segment

seq = make_synthetic_sequence(SyntheticSpec(n_frames=2), seed=1)
frame, (x, y, w, h) = seq.image(0), seq.groundtruth[0]
model = initial_model(frame, (x, y, w, h))

# search a window twice the box size around the target
window = (x - w / 2, y - h / 2, 2 * w, 2 * h)
res = segment(seq.image(1), window, model, prev_size=w * h)
print("foreground pixels %d vs previous box area %d -> alpha_col %.1f" % (res.fg_count, w * h, res.alpha_col))

# inside the box the posterior is high, outside it is low
rows, cols = res.posterior.shape
inner = res.posterior[rows // 4 : 3 * rows // 4, cols // 4 : 3 * cols // 4]
print("mean posterior inside box %.2f, whole window %.2f" % (inner.mean(), res.posterior.mean()))

# with alpha_col = 0.1 the color map keeps most of its contrast
prob = color_probability(res.posterior, res.alpha_col)
print("color map range: %.2f .. %.2f" % (prob.min(), prob.max()))

# a frame flooded with the target's color makes the mask implausibly large
flooded = np.tile(frame[int(y + h / 2), int(x + w / 2)], (frame.shape[0], frame.shape[1], 1))
bad = segment(flooded, window, model, prev_size=w * h)
print("flooded frame: foreground %d px -> alpha_col %.1f (color ignored)" % (bad.fg_count, bad.alpha_col))
