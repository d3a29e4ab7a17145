"""Multi-codebook hand pose tokenizer.

An MLP encoder maps the 63 pose coordinates to a latent split across N heads;
each head selects an entry from its own codebook via scaled dot-product
scores (soft attention during training, hard argmax at inference), and an MLP
decoder reconstructs the pose from the concatenated selected codes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .extraction import HandPose

NUM_CODEBOOKS = 8
CODEBOOK_SIZE = 1024


class TokenOutOfRange(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


@dataclass
class TokenizerConfig:
    num_codebooks: int = NUM_CODEBOOKS
    codebook_size: int = CODEBOOK_SIZE
    code_dim: int = 16
    hidden_dim: int = 256
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0


class TokenizerModel(nn.Module):
    def __init__(self, config: TokenizerConfig):
        super().__init__()
        self.config = config
        n, c, d = config.num_codebooks, config.codebook_size, config.code_dim
        latent = n * d
        self.encoder = nn.Sequential(
            nn.Linear(63, config.hidden_dim), nn.ReLU(),
            nn.Linear(config.hidden_dim, latent),
        )
        self.decoder = nn.Sequential(
            nn.Linear(latent, config.hidden_dim), nn.ReLU(),
            nn.Linear(config.hidden_dim, 63),
        )
        self.codebooks = nn.Parameter(torch.randn(n, c, d) * 0.1)

    def head_scores(self, poses: torch.Tensor) -> torch.Tensor:
        """(batch, N, C) assignment scores per head."""
        n, d = self.config.num_codebooks, self.config.code_dim
        q = self.encoder(poses).view(-1, n, d)
        return torch.einsum("bnd,ncd->bnc", q, self.codebooks) / d**0.5

    def forward(self, poses: torch.Tensor, hard: bool = False):
        """Reconstruction plus per-head token indices.

        Training (hard=False) quantizes with a straight-through estimator:
        the forward value is the argmax code while the gradient passes
        through the attention-weighted soft assignment, so codebooks receive
        gradients. Inference (hard=True) is plain argmax selection."""
        scores = self.head_scores(poses)
        idx = scores.argmax(dim=-1)
        if hard:
            codes = self._gather(idx)
        else:
            attn = F.softmax(scores, dim=-1)
            soft = torch.einsum("bnc,ncd->bnd", attn, self.codebooks)
            codes = soft + (self._gather(idx) - soft).detach()
        recon = self.decoder(codes.reshape(codes.shape[0], -1))
        return recon, idx

    def _gather(self, idx: torch.Tensor) -> torch.Tensor:
        n = self.config.num_codebooks
        heads = torch.arange(n)
        return self.codebooks[heads[None, :], idx]


def _pose_tensor(pose: HandPose) -> torch.Tensor:
    flat = pose.flat()
    if not np.isfinite(flat).all():
        raise NonFiniteInput("pose contains non-finite values")
    return torch.as_tensor(flat, dtype=torch.float32)[None, :]


@torch.no_grad()
def tokenize(model: TokenizerModel, pose: HandPose) -> list[int]:
    """Hard per-head argmax token assignment; deterministic."""
    scores = model.head_scores(_pose_tensor(pose))
    return [int(t) for t in scores.argmax(dim=-1)[0]]


@torch.no_grad()
def detokenize(model: TokenizerModel, tokens) -> HandPose:
    tokens = list(tokens)
    n, c = model.config.num_codebooks, model.config.codebook_size
    if len(tokens) != n or any(not (0 <= int(t) < c) for t in tokens):
        raise TokenOutOfRange(f"tokens must be {n} ints in [0, {c})")
    idx = torch.as_tensor([int(t) for t in tokens])[None, :]
    codes = model._gather(idx)
    recon = model.decoder(codes.reshape(1, -1))
    return HandPose(recon[0].numpy().reshape(21, 3))


@dataclass
class TokenizerTrainReport:
    final_loss: float
    loss_history: list = field(default_factory=list)
    utilization: list = field(default_factory=list)  # per-head fraction of codes used


def codebook_utilization(model: TokenizerModel, poses: torch.Tensor) -> list[float]:
    with torch.no_grad():
        idx = model.head_scores(poses).argmax(dim=-1)
    c = model.config.codebook_size
    return [float(len(torch.unique(idx[:, h]))) / c for h in range(idx.shape[1])]


def train_tokenizer(pose_corpus: list[HandPose], config: TokenizerConfig = TokenizerConfig()):
    """Minimize MSE reconstruction over the corpus with soft code assignment.

    Returns (model, report). Warns when the corpus is smaller than the
    codebook size."""
    if len(pose_corpus) == 0:
        raise ValueError("empty pose corpus")
    if len(pose_corpus) < config.codebook_size:
        warnings.warn(
            f"corpus size {len(pose_corpus)} < codebook size {config.codebook_size}; "
            "codebook will be underutilized"
        )
    torch.manual_seed(config.seed)
    data = torch.as_tensor(
        np.stack([p.flat() for p in pose_corpus]), dtype=torch.float32
    )
    model = TokenizerModel(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            recon, _ = model(batch, hard=False)
            loss = F.mse_loss(recon, batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(batch)
        history.append(epoch_loss / n)
    report = TokenizerTrainReport(
        final_loss=history[-1],
        loss_history=history,
        utilization=codebook_utilization(model, data),
    )
    return model, report


def reconstruction_error(model: TokenizerModel, poses: list[HandPose]) -> float:
    """Mean per-joint Euclidean reconstruction error under hard assignment."""
    errs = []
    for p in poses:
        recon = detokenize(model, tokenize(model, p))
        errs.append(np.linalg.norm(recon.joints - p.joints, axis=1).mean())
    return float(np.mean(errs))


def save_tokenizer(model: TokenizerModel, path) -> None:
    torch.save({"config": vars(model.config), "state": model.state_dict()}, path)


def load_tokenizer(path) -> TokenizerModel:
    ckpt = torch.load(path, weights_only=False)
    model = TokenizerModel(TokenizerConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["state"])
    return model


def fill_manifest_tokens(records, model: TokenizerModel):
    """Tokenize each record's stored hand pose into its `tokens` field."""
    for r in records:
        pose = HandPose(np.asarray(r.hand_pose).reshape(21, 3))
        r.tokens = tokenize(model, pose)
    return records
