"""
Finding a patch again with a kernelized correlation filter
==========================================================

A filter is trained on one window of an image. Evaluated on a window
displaced by a few pixels, its response peaks at the displacement.
"""

import cv2
import numpy as np

from dptrack.correlation_filter import gaussian_labels, label_sigma, respond, response_stats, train
from dptrack.features import extract_features

rng = np.random.default_rng(0)
image = cv2.GaussianBlur((rng.random((200, 240, 3)) * 255).astype(np.uint8), (7, 7), 2.0)

target = (120.0, 100.0)  # center of the object, (x, y)
window = (64, 64)
cell = 4

patch = extract_features(image, target, window, cell)
print("feature grid (rows, cols, channels):", patch.channels.shape)

sigma = label_sigma((32, 32), cell)
filt = train(patch, gaussian_labels(*patch.shape, sigma))

# look again from a window centered 9 px left and 6 px below the target
origin = (111.0, 106.0)
response = respond(filt, extract_features(image, origin, window, cell))
stats = response_stats(response, origin, cell)
print("estimated target center:", np.round(stats.peak_pos, 1), "true:", target)
print("peak value %.3f, response spread %.1f px^2" % (stats.peak_value, stats.weighted_variance))

# a window over unrelated texture gives a weak, spread-out response
far = response_stats(respond(filt, extract_features(image, (40.0, 40.0), window, cell)), (40.0, 40.0), cell)
print("elsewhere: peak value %.3f, spread %.1f px^2" % (far.peak_value, far.weighted_variance))
