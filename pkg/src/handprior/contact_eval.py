"""Contact-prediction evaluation: Gaussian heatmaps, SIM/NSS metrics, and the
conditional-VAE prediction head trained on frozen encoder features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import Point2D

HEATMAP_SIZE = 32
GAUSSIAN_SIGMA = 3.0


class ShapeMismatch(ValueError):
    pass


def render_heatmap(
    points,
    sigma: float = GAUSSIAN_SIGMA,
    height: int = HEATMAP_SIZE,
    width: int = HEATMAP_SIZE,
) -> np.ndarray:
    """Sum of unnormalized isotropic Gaussians evaluated at cell centers.

    Points use heatmap coordinates; off-grid points contribute their in-grid
    tails. Multiple points accumulate additively.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    hm = np.zeros((height, width), dtype=np.float64)
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    for p in points:
        dx2 = (cx - p.x) ** 2
        dy2 = (cy - p.y) ** 2
        hm += np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma**2))
    return hm


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(f"heatmap shapes differ: {a.shape} vs {b.shape}")
    return a, b


def sim(m: np.ndarray, m_hat: np.ndarray) -> float:
    """Affordance map similarity: sum of cell-wise minima of the two
    mass-normalized maps. Returns 0 if either map has zero total mass."""
    m, m_hat = _check_pair(m, m_hat)
    n_m = m.sum()
    n_hat = m_hat.sum()
    if n_m == 0.0 or n_hat == 0.0:
        return 0.0
    return float(np.minimum(m / n_m, m_hat / n_hat).sum())


def nss(m: np.ndarray, m_hat: np.ndarray) -> float:
    """Normalized scanpath saliency: sum of the standardized predicted map
    over cells where the ground-truth map is positive.

    Standardization uses the population mean/std over all cells. Returns 0
    when the predicted map has zero variance or the fixation set is empty.
    """
    m, m_hat = _check_pair(m, m_hat)
    fix = m_hat > 0
    if not fix.any():
        return 0.0
    # extended precision keeps the sums accurate enough to agree with an
    # exact-summation reference at 1e-12
    me = m.astype(np.longdouble)
    mu = me.mean()
    sd = np.sqrt(((me - mu) ** 2).mean())
    if sd == 0.0:
        return 0.0
    return float(((me - mu)[fix] / sd).sum())


def image_to_heatmap_coords(
    point: Point2D, image_width: float, image_height: float,
    width: int = HEATMAP_SIZE, height: int = HEATMAP_SIZE,
) -> Point2D:
    """Linear scaling from image pixels to heatmap cells."""
    return Point2D(point.x * width / image_width, point.y * height / image_height)


@dataclass
class CvaeConfig:
    feature_dim: int
    latent_dim: int = 32
    hidden_dim: int = 128
    kl_weight: float = 1.0
    num_predictions: int = 5
    iterations: int = 3000
    eval_every: int = 150
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.num_predictions < 1:
            raise ValueError("num_predictions must be >= 1")


class CvaeHead(nn.Module):
    """Conditional VAE regressing a 2D contact point from a frozen feature
    vector. Encoder sees (feature, point); decoder sees (feature, latent)."""

    def __init__(self, config: CvaeConfig):
        super().__init__()
        self.config = config
        d, h, z = config.feature_dim, config.hidden_dim, config.latent_dim
        self.encoder = nn.Sequential(nn.Linear(d + 2, h), nn.ReLU(), nn.Linear(h, 2 * z))
        self.decoder = nn.Sequential(nn.Linear(d + z, h), nn.ReLU(), nn.Linear(h, 2))

    def posterior(self, features: torch.Tensor, points: torch.Tensor):
        stats = self.encoder(torch.cat([features, points], dim=-1))
        mu, logvar = stats.chunk(2, dim=-1)
        return mu, logvar

    def loss(self, features: torch.Tensor, points: torch.Tensor):
        mu, logvar = self.posterior(features, points)
        z = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar)
        recon = self.decoder(torch.cat([features, z], dim=-1))
        recon_loss = F.mse_loss(recon, points)
        kl = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=-1).mean()
        return recon_loss + self.config.kl_weight * kl, recon_loss, kl

    @torch.no_grad()
    def sample(self, features: torch.Tensor, n: int, generator=None) -> torch.Tensor:
        """(batch, n, 2) sampled contact points from the latent prior."""
        b = features.shape[0]
        z = torch.randn(b, n, self.config.latent_dim, generator=generator)
        feat = features[:, None, :].expand(b, n, -1)
        return self.decoder(torch.cat([feat, z], dim=-1))


@dataclass
class CvaeTrainResult:
    head: CvaeHead
    best_sim: float
    best_iteration: int
    eval_history: list = field(default_factory=list)


def select_best_checkpoint(scores: list[float]) -> int:
    """Index of the maximal score; first occurrence wins on ties."""
    if not scores:
        raise ValueError("no evaluation scores")
    return int(np.argmax(scores))


def _eval_sim_nss(head, features, points, generator):
    n = head.config.num_predictions
    preds = head.sample(features, n, generator=generator).numpy()
    sims, nsss = [], []
    for i in range(features.shape[0]):
        pred_pts = [Point2D(float(x), float(y)) for x, y in preds[i]]
        gt_pt = Point2D(float(points[i, 0]), float(points[i, 1]))
        m = render_heatmap(pred_pts)
        m_hat = render_heatmap([gt_pt])
        sims.append(sim(m, m_hat))
        nsss.append(nss(m, m_hat))
    return float(np.mean(sims)), float(np.mean(nsss))


def train_cvae(features: np.ndarray, points: np.ndarray, config: CvaeConfig,
               holdout_fraction: float = 0.2) -> CvaeTrainResult:
    """Train the cVAE head, evaluating SIM/NSS on a held-out split every
    `eval_every` iterations and returning the checkpoint with the best SIM.

    `features` is (n, d) frozen-encoder features; `points` is (n, 2) ground
    truth in heatmap coordinates.
    """
    if len(features) == 0:
        raise ValueError("empty dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    n = len(features)
    order = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n))) if n > 1 else 0
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    if len(train_idx) == 0:
        train_idx = order
    feats_t = torch.as_tensor(features, dtype=torch.float32)
    pts_t = torch.as_tensor(points, dtype=torch.float32)

    head = CvaeHead(config)
    opt = torch.optim.AdamW(head.parameters(), lr=config.learning_rate)
    best_state, history = None, []
    for step in range(1, config.iterations + 1):
        batch = torch.as_tensor(
            rng.choice(train_idx, size=min(config.batch_size, len(train_idx)), replace=True)
        )
        loss, _, _ = head.loss(feats_t[batch], pts_t[batch])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % config.eval_every == 0 and len(hold_idx) > 0:
            gen = torch.Generator().manual_seed(config.seed + step)
            s, _ = _eval_sim_nss(head, feats_t[hold_idx], pts_t[hold_idx], gen)
            history.append((step, s))
            if best_state is None or s > max(h[1] for h in history[:-1]):
                best_state = {k: v.clone() for k, v in head.state_dict().items()}
    if best_state is not None:
        head.load_state_dict(best_state)
        best_i = select_best_checkpoint([h[1] for h in history])
        best_step, best_sim = history[best_i]
    else:
        best_step, best_sim = config.iterations, float("nan")
    return CvaeTrainResult(head=head, best_sim=best_sim,
                           best_iteration=best_step, eval_history=history)


@dataclass
class EvalRecord:
    sample_id: str
    sim: float
    nss: float


def evaluate_head(head: CvaeHead, features: np.ndarray, points: np.ndarray,
                  sample_ids=None, seed: int = 0):
    """Per-sample SIM/NSS for cVAE predictions vs ground truth, plus means.

    Returns (records, mean_sim, mean_nss).

    SIM compares the predicted heatmap against the Gaussian-rendered ground
    truth.  NSS uses a binary fixation map instead: the dense Gaussian render
    is positive at every cell, which would make the fixation set the whole
    grid and force NSS to zero regardless of the predictions."""
    feats_t = torch.as_tensor(features, dtype=torch.float32)
    n = head.config.num_predictions
    gen = torch.Generator().manual_seed(seed)
    preds = head.sample(feats_t, n, generator=gen).numpy()
    records = []
    for i in range(len(features)):
        pred_pts = [Point2D(float(x), float(y)) for x, y in preds[i]]
        gt = Point2D(float(points[i][0]), float(points[i][1]))
        m = render_heatmap(pred_pts)
        m_hat = render_heatmap([gt])
        fixations = np.zeros_like(m_hat)
        gy = min(max(int(round(gt.y)), 0), fixations.shape[0] - 1)
        gx = min(max(int(round(gt.x)), 0), fixations.shape[1] - 1)
        fixations[gy, gx] = 1.0
        sid = sample_ids[i] if sample_ids is not None else str(i)
        records.append(EvalRecord(sid, sim(m, m_hat), nss(m, fixations)))
    mean_sim = float(np.mean([r.sim for r in records])) if records else 0.0
    mean_nss = float(np.mean([r.nss for r in records])) if records else 0.0
    return records, mean_sim, mean_nss
