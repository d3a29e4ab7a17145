"""Behavior cloning on frozen visual features plus the simulation evaluation
protocol (periodic rollouts, best-of-evaluations, view x seed averaging),
with a built-in deterministic 2D reach-grasp-place toy environment."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class DimensionMismatch(ValueError):
    pass


@dataclass
class Observation:
    visual_features: np.ndarray
    proprio: np.ndarray


@dataclass
class Demonstration:
    steps: list  # (Observation, action) pairs

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty demonstration")


class EnvironmentInterface(Protocol):
    horizon: int

    def reset(self, randomization_seed: int) -> np.ndarray: ...
    def step(self, action: np.ndarray): ...
    def success(self) -> bool: ...
    def render(self) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Toy reach-grasp-place environment

GRID = 64.0


class ToyReachGraspPlaceEnv:
    """2D tabletop: a gripper cursor (x, y, aperture) must carry a disk
    object into a fixed goal region and release it. Renders to 64x64 RGB.

    Fully deterministic given the reset seed and the action sequence."""

    horizon = 750
    proprio_dim = 3
    action_dim = 3

    def __init__(self, view: int = 0):
        self.view = view  # shifts rendering colors to emulate camera views
        self.goal = np.array([52.0, 52.0])
        self.goal_radius = 10.0
        self.object_radius = 4.0
        self._reset_done = False

    def reset(self, randomization_seed: int) -> np.ndarray:
        rng = np.random.default_rng(randomization_seed)
        self.object_pos = np.array([10.0 + 34.0 * rng.random(),
                                    10.0 + 34.0 * rng.random()])
        self.gripper = np.array([8.0, 8.0])
        self.aperture = 1.0
        self.carried = False
        self.t = 0
        self._reset_done = True
        return self.proprio()

    def proprio(self) -> np.ndarray:
        return np.array([self.gripper[0] / GRID, self.gripper[1] / GRID,
                         self.aperture])

    def step(self, action: np.ndarray):
        assert self._reset_done, "call reset() first"
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (3,):
            raise DimensionMismatch(f"action must have 3 dims, got {action.shape}")
        move = np.clip(action[:2], -2.0, 2.0)
        dap = float(np.clip(action[2], -0.2, 0.2))
        self.gripper = np.clip(self.gripper + move, 0.0, GRID)
        self.aperture = float(np.clip(self.aperture + dap, 0.0, 1.0))
        near = np.linalg.norm(self.gripper - self.object_pos) < 6.0
        if not self.carried and near and self.aperture < 0.4:
            self.carried = True
        if self.carried:
            self.object_pos = self.gripper.copy()
            if self.aperture > 0.6:
                self.carried = False
        self.t += 1
        done = self.t >= self.horizon or self.success()
        return self.proprio(), done

    def success(self) -> bool:
        return (not self.carried
                and np.linalg.norm(self.object_pos - self.goal) < self.goal_radius)

    def render(self) -> np.ndarray:
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        yy, xx = np.mgrid[0:64, 0:64] + 0.5
        goal = (xx - self.goal[0]) ** 2 + (yy - self.goal[1]) ** 2 < self.goal_radius**2
        img[goal] = (0, 60, 0)
        gx, gy = self.gripper
        grip = (np.abs(xx - gx) < 1.5) & (np.abs(yy - gy) < 1.5)
        level = int(80 + 150 * self.aperture)
        img[grip] = (40, 40 + 10 * self.view, level)
        # object drawn last so the carried state stays visible; a carried
        # object changes color, making the task phase observable from pixels
        obj = ((xx - self.object_pos[0]) ** 2 + (yy - self.object_pos[1]) ** 2
               < self.object_radius**2)
        img[obj] = (230, 210, 40) if self.carried else (200, 40 + 20 * self.view, 40)
        return img


def toy_env_reach_grasp_place(view: int = 0) -> ToyReachGraspPlaceEnv:
    return ToyReachGraspPlaceEnv(view=view)


def scripted_expert_action(env: ToyReachGraspPlaceEnv) -> np.ndarray:
    """Proportional controller: approach while closing, carry, release.

    The gripper starts closing well before arrival, so the grasp condition is
    met on the fly over a broad band of states rather than at a knife-edge
    hover that behavior cloning would blur out."""
    if not env.carried:
        delta = env.object_pos - env.gripper
        dap = -0.2 if np.linalg.norm(delta) < 12.0 else 0.0
        return np.array([*np.clip(delta, -2.0, 2.0), dap])
    if np.linalg.norm(env.gripper - env.goal) >= 2.0:
        delta = env.goal - env.gripper
        return np.array([*np.clip(delta, -2.0, 2.0), 0.0])
    return np.array([0.0, 0.0, 0.2])


# ---------------------------------------------------------------------------
# Frozen visual encoders


class PixelFeatureEncoder:
    """Frozen encoder: 4x4 average pooling of the grayscale render, flattened
    to 256 features in [0, 1]."""

    feature_dim = 256

    def __call__(self, image: np.ndarray) -> np.ndarray:
        gray = image.astype(np.float64).mean(axis=2) / 255.0
        h, w = gray.shape
        pooled = gray.reshape(h // 4, 4, w // 4, 4).mean(axis=(1, 3))
        return pooled.reshape(-1)


class CentroidFeatureEncoder:
    """Frozen relational features: centroid and mass of each color-keyed
    region, expressed relative to the gripper centroid. Defaults match the
    built-in toy environment palette (gripper, object, carried object, goal).

    Relative offsets make the features translation-equivariant, which lets a
    behavior-cloned policy generalize across object placements."""

    def __init__(self, color_keys=((40, 40, 155), (200, 40, 40),
                                   (230, 210, 40), (0, 60, 0)),
                 match_radius: float = 0.35):
        self.color_keys = [np.asarray(c, dtype=np.float64) / 255.0
                           for c in color_keys]
        self.match_radius = match_radius
        self.feature_dim = 3 * (len(color_keys) - 1) + 2

    def __call__(self, image: np.ndarray) -> np.ndarray:
        x = image.astype(np.float64) / 255.0
        h, w = x.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        cents = []
        for key in self.color_keys:
            m = np.clip(self.match_radius - np.linalg.norm(x - key, axis=2),
                        0.0, None)
            s = m.sum()
            cents.append(((m * xx).sum() / s, (m * yy).sum() / s, s)
                         if s > 1e-9 else (None, None, 0.0))
        gx, gy, _ = cents[0]  # first key is the reference (gripper)
        feats = []
        for cx, cy, m in cents[1:]:
            if cx is None or gx is None:
                feats += [0.0, 0.0, 0.0]
            else:
                feats += [(cx - gx) / w, (cy - gy) / h, m / 200.0]
        feats += [gx / w if gx is not None else 0.0,
                  gy / h if gy is not None else 0.0]
        return np.array(feats)


class PriorFeatureEncoder:
    """Frozen features from a trained prior-model encoder checkpoint."""

    def __init__(self, prior_model):
        from .prior_model import image_to_tensor

        self._image_to_tensor = image_to_tensor
        self.model = prior_model.eval()
        self.feature_dim = prior_model.config.embedding_dim
        size = prior_model.config.image_size
        self._size = size

    def __call__(self, image: np.ndarray) -> np.ndarray:
        from PIL import Image

        if image.shape[0] != self._size:
            image = np.asarray(
                Image.fromarray(image).resize((self._size, self._size), Image.BILINEAR)
            )
        with torch.no_grad():
            emb = self.model.encode(self._image_to_tensor(image)[None])
        return emb[0].numpy()


def observe(env, encoder) -> Observation:
    return Observation(visual_features=encoder(env.render()), proprio=env.proprio())


# ---------------------------------------------------------------------------
# Behavior cloning


@dataclass
class PolicyConfig:
    hidden_dim: int = 256        # 2-layer MLP, 256 units per layer
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 60
    batch_size: int = 128
    seed: int = 0


class BCPolicy(nn.Module):
    def __init__(self, obs_dim: int, action_dim: int, hidden_dim: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(obs_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, action_dim),
        )

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs)

    @torch.no_grad()
    def act(self, obs: Observation) -> np.ndarray:
        x = torch.as_tensor(
            np.concatenate([obs.visual_features, obs.proprio]), dtype=torch.float32
        )
        return self(x[None])[0].numpy()


def collect_demonstrations(env_factory: Callable, encoder, seeds,
                           expert=scripted_expert_action) -> list[Demonstration]:
    demos = []
    for seed in seeds:
        env = env_factory()
        env.reset(seed)
        steps = []
        done = False
        while not done:
            obs = observe(env, encoder)
            action = expert(env)
            steps.append((obs, action))
            _, done = env.step(action)
        demos.append(Demonstration(steps))
    return demos


def encoder_param_hash(encoder) -> str:
    """Fingerprint of any torch parameters behind the encoder (frozen check)."""
    model = getattr(encoder, "model", None)
    h = hashlib.sha256()
    if model is not None:
        for p in model.parameters():
            h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def train_bc(demos: list[Demonstration], config: PolicyConfig = PolicyConfig(),
             log: Optional[list] = None) -> BCPolicy:
    """MSE action regression on demonstration pairs. The encoder is applied
    upstream when collecting observations, so its parameters are untouched."""
    if not demos:
        raise ValueError("no demonstrations")
    obs = []
    actions = []
    for d in demos:
        for o, a in d.steps:
            obs.append(np.concatenate([o.visual_features, o.proprio]))
            actions.append(a)
    obs_t = torch.as_tensor(np.stack(obs), dtype=torch.float32)
    act_t = torch.as_tensor(np.stack(actions), dtype=torch.float32)
    if obs_t.ndim != 2:
        raise DimensionMismatch("inconsistent observation dimensions")
    torch.manual_seed(config.seed)
    policy = BCPolicy(obs_t.shape[1], act_t.shape[1], config.hidden_dim)
    opt = torch.optim.AdamW(policy.parameters(), lr=config.learning_rate,
                            weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n = len(obs_t)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size])
            loss = F.mse_loss(policy(obs_t[idx]), act_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log is not None:
                log.append(float(loss.detach()))
    return policy


def add_action_noise(action: np.ndarray, sigma: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Seeded i.i.d. zero-mean Gaussian noise per action dimension."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return action
    return action + rng.normal(0.0, sigma, size=action.shape)


def rollout(policy: BCPolicy, env, encoder, seed: int,
            noise_sigma: float = 0.0, noise_rng=None) -> bool:
    env.reset(seed)
    done = False
    while not done:
        action = policy.act(observe(env, encoder))
        if noise_sigma > 0:
            action = add_action_noise(action, noise_sigma, noise_rng)
        _, done = env.step(action)
    return env.success()


def evaluate_policy(policy, env, encoder, num_rollouts: int, base_seed: int,
                    noise_sigma: float = 0.0) -> float:
    """Success rate in percent over seeded rollouts."""
    successes = 0
    for i in range(num_rollouts):
        rng = np.random.default_rng((base_seed, i))
        if rollout(policy, env, encoder, base_seed + i, noise_sigma, rng):
            successes += 1
    return 100.0 * successes / num_rollouts


# ---------------------------------------------------------------------------
# Evaluation protocol


@dataclass
class ProtocolConfig:
    views: int = 3
    seeds: int = 3
    train_steps: int = 20000
    eval_every: int = 1000
    rollouts_per_eval: int = 50
    num_demos: int = 25
    action_noise_sigma: float = 0.05
    base_seed: int = 0


@dataclass
class RunReport:
    view: int
    seed: int
    rates: list[float]       # one per periodic evaluation
    best: float = 0.0

    def __post_init__(self):
        self.best = max(self.rates) if self.rates else 0.0


@dataclass
class ProtocolReport:
    runs: list[RunReport]
    final_score: float = 0.0

    def __post_init__(self):
        if self.runs:
            self.final_score = float(np.mean([r.best for r in self.runs]))

    def to_json(self) -> str:
        return json.dumps({
            "final_score": self.final_score,
            "runs": [{"view": r.view, "seed": r.seed, "best": r.best,
                      "rates": r.rates} for r in self.runs],
        }, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ProtocolReport":
        d = json.loads(text)
        return ProtocolReport(
            runs=[RunReport(r["view"], r["seed"], r["rates"]) for r in d["runs"]]
        )


def aggregate_report(rates_by_run: dict) -> ProtocolReport:
    """Best-of-evaluations per run, mean of the per-run bests overall.

    `rates_by_run` maps (view, seed) to the list of evaluation rates."""
    runs = [RunReport(view, seed, list(rates))
            for (view, seed), rates in sorted(rates_by_run.items())]
    return ProtocolReport(runs=runs)


def run_protocol(env_factory: Callable[[int], EnvironmentInterface],
                 encoder_factory: Callable[[int], object],
                 config: ProtocolConfig = ProtocolConfig(),
                 evaluate_fn=None) -> ProtocolReport:
    """Full protocol: for each (view, policy seed), train behavior cloning
    and evaluate every `eval_every` steps with seeded rollouts.

    `evaluate_fn(view, seed) -> list of rates` replaces training entirely
    when supplied (used for bookkeeping tests and stubbed reports)."""
    rates_by_run = {}
    for view in range(config.views):
        for seed in range(config.seeds):
            if evaluate_fn is not None:
                rates_by_run[(view, seed)] = list(evaluate_fn(view, seed))
                continue
            rates_by_run[(view, seed)] = _train_and_evaluate(
                env_factory, encoder_factory, view, seed, config
            )
    return aggregate_report(rates_by_run)


def _train_and_evaluate(env_factory, encoder_factory, view, seed, config):
    env = env_factory(view)
    encoder = encoder_factory(view)
    demo_seeds = [hash_seed(config.base_seed, view, "demo", i)
                  for i in range(config.num_demos)]
    demos = collect_demonstrations(lambda: env_factory(view), encoder, demo_seeds)
    obs, actions = [], []
    for d in demos:
        for o, a in d.steps:
            obs.append(np.concatenate([o.visual_features, o.proprio]))
            actions.append(a)
    obs_t = torch.as_tensor(np.stack(obs), dtype=torch.float32)
    act_t = torch.as_tensor(np.stack(actions), dtype=torch.float32)
    policy_cfg = PolicyConfig(seed=hash_seed(config.base_seed, view, "policy", seed))
    torch.manual_seed(policy_cfg.seed)
    policy = BCPolicy(obs_t.shape[1], act_t.shape[1], policy_cfg.hidden_dim)
    opt = torch.optim.AdamW(policy.parameters(), lr=policy_cfg.learning_rate,
                            weight_decay=policy_cfg.weight_decay)
    rng = np.random.default_rng(policy_cfg.seed)
    n = len(obs_t)
    rates = []
    for step in range(1, config.train_steps + 1):
        idx = torch.as_tensor(rng.integers(0, n, size=min(policy_cfg.batch_size, n)))
        loss = F.mse_loss(policy(obs_t[idx]), act_t[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % config.eval_every == 0:
            eval_seed = hash_seed(config.base_seed, view, seed, "eval",
                                  step // config.eval_every)
            rates.append(evaluate_policy(policy, env, encoder,
                                         config.rollouts_per_eval, eval_seed,
                                         config.action_noise_sigma))
    return rates


def hash_seed(*parts) -> int:
    """Stable 32-bit seed derived from arbitrary hashable parts."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")
