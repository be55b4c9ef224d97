"""Fit the anatomical prior and evaluate the box-constraint loss.

The prior stores, per keypoint, the extremes of body-normalized coordinates
seen in training. Placed into a target image's bounding rectangle those
extremes become admissible boxes; predictions outside pay a hinge penalty.
Training ground truth scores exactly zero against its own image's box.
"""

import numpy as np

from phenokey import (
    acr_gradient,
    acr_loss,
    box_for_image,
    fit_prior,
    generate_population,
    visible_bbox,
)
from phenokey.synth import TEMPLATES

train_set = generate_population(TEMPLATES["deep_bodied"], n=200, seed=5)
prior = fit_prior(train_set)

print(f"prior fitted on {prior.training_set_size} fish; normalized extents per keypoint:")
for j in (1, 5, 11, 22):
    w = prior.maxs[j - 1] - prior.mins[j - 1]
    print(f"  K-{j:<3} x' in [{prior.mins[j-1,0]:.3f}, {prior.maxs[j-1,0]:.3f}]"
          f"  y' in [{prior.mins[j-1,1]:.3f}, {prior.maxs[j-1,1]:.3f}]"
          f"  (box {w[0]:.3f} x {w[1]:.3f})")

losses = []
for rec in train_set:
    box = box_for_image(prior, visible_bbox(rec.keypoints))
    losses.append(acr_loss(rec.keypoints, box))
print("\nmax ACR loss over all training ground truths:", max(losses), "(exactly 0)")

# push one keypoint far outside its box and look at loss and gradient
rec = train_set.records[0]
box = box_for_image(prior, visible_bbox(rec.keypoints))
displaced = rec.keypoints.xy.copy()
displaced[10] += (250.0, -120.0)  # K-11 anterior eye, way off
print("loss after displacing K-11:", round(acr_loss(displaced, box), 2), "px")
g = acr_gradient(displaced, box)
print("gradient rows with active hinges:", np.flatnonzero((g != 0).any(axis=1)) + 1)
