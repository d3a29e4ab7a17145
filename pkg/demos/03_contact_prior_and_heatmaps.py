"""
Contact-point prior and heatmap evaluation
==========================================

Trains the image-conditioned prior for a short budget on synthetic disk
scenes, predicts contact points on a held-out scene, and scores predicted
vs. ground-truth contact heatmaps with SIM and NSS.
"""

import numpy as np

from handprior.contact_eval import image_to_heatmap_coords, nss, render_heatmap, sim
from handprior.prior_model import (PriorModelConfig, predict_contacts_and_pose,
                                   train_prior)
from handprior.synth import (SynthPoseSpec, generate_pose_corpus,
                             generate_prior_dataset)

corpus = generate_pose_corpus(SynthPoseSpec(corpus_size=200, seed=1))
samples = generate_prior_dataset(300, corpus.poses, seed=1)
train, hold = samples[:280], samples[280:]

config = PriorModelConfig(embedding_dim=64, image_size=128,
                          hand_head_mode="regression",
                          iterations=600, learning_rate=3e-4, seed=0)
result = train_prior(train, config)
print(f"trained {config.iterations} iterations, "
      f"final total loss {result.log[-1].loss_total:.3f}")

scene = hold[0]
points, _, pose = predict_contacts_and_pose(result.model, scene.image)
for name, p, t in zip(("thumb", "index"), points, scene.contact_points):
    err = np.hypot(p.x - t.x, p.y - t.y)
    print(f"{name}: predicted ({p.x:.1f}, {p.y:.1f}), "
          f"true ({t.x:.1f}, {t.y:.1f}), error {err:.1f}px")

# heatmap-space comparison on the 32x32 evaluation grid; SIM compares against
# the Gaussian-rendered ground truth, NSS against a binary fixation map (a
# dense Gaussian would make every cell a "fixation" and zero out NSS)
h, w = scene.image.shape[:2]
gt_cells = [image_to_heatmap_coords(p, w, h) for p in scene.contact_points]
gt_map = render_heatmap(gt_cells)
pred_map = render_heatmap([image_to_heatmap_coords(p, w, h) for p in points])
fixations = np.zeros_like(gt_map)
for p in gt_cells:
    fixations[int(round(p.y)), int(round(p.x))] = 1.0
print(f"\nSIM  = {sim(gt_map, pred_map):.3f}  (1.0 is a perfect match)")
print(f"NSS  = {nss(pred_map, fixations):.3f}  (higher is better)")
