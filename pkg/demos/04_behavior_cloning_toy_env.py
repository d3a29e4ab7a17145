"""
Behavior cloning in the toy reach-grasp-place environment
=========================================================

Collects scripted-expert demonstrations, clones them with a small MLP on
frozen visual features, and compares expert / cloned / random success rates.
"""

import numpy as np

from handprior.policy import (CentroidFeatureEncoder, PolicyConfig,
                              collect_demonstrations, evaluate_policy,
                              scripted_expert_action,
                              toy_env_reach_grasp_place, train_bc)

# --- the expert solves the task every time ---------------------------------

successes = 0
for seed in range(20):
    env = toy_env_reach_grasp_place()
    env.reset(seed)
    done = False
    while not done:
        _, done = env.step(scripted_expert_action(env))
    successes += env.success()
print(f"scripted expert: {successes}/20 rollouts succeed")

# --- clone it from 25 demonstrations ---------------------------------------

encoder = CentroidFeatureEncoder()
demos = collect_demonstrations(toy_env_reach_grasp_place, encoder,
                               list(range(25)))
pairs = sum(len(d.steps) for d in demos)
print(f"collected {len(demos)} demonstrations ({pairs} state-action pairs)")

policy = train_bc(demos, PolicyConfig(epochs=300, seed=0))
rate = evaluate_policy(policy, toy_env_reach_grasp_place(), encoder,
                       num_rollouts=50, base_seed=1000)
print(f"cloned policy success rate on unseen seeds: {rate:.0f}%")

# --- a random policy barely ever succeeds ----------------------------------

rng = np.random.default_rng(0)
random_successes = 0
for seed in range(50):
    env = toy_env_reach_grasp_place()
    env.reset(1000 + seed)
    done = False
    while not done:
        _, done = env.step(rng.uniform(-2.0, 2.0, size=3))
    random_successes += env.success()
print(f"random policy: {random_successes}/50")
