"""Test the multi-goal reinforcement learning lab."""
import numpy as np

SEED = 0
DISCOUNT = 0.9
# freeze-augmented ring used by the behavioural bias run
BIAS_STATES = 5
BIAS_UPDATES = 200_000
BIAS_HER_SHARE = 0.9
BIAS_DELTA_SHARE = 0.2
# Torus(2) desk-scale learning
RANDOM_BASELINE = 0.25
TORUS_TARGET = 0.15
# vanishing reward statistic on Torus(4)
SPARSE_DIM = 4
SPARSE_EPS = 0.05
SPARSE_TRANSITIONS = 100_000
SPARSE_FRACTION = 1e-2

MINIMAL_CONFIG = """
seed: 0
algo: uvfa
env:
  kind: random
  n_states: 4
  n_actions: 2
train:
  episodes: 6
  horizon: 10
  updates_per_episode: 5
  eval_interval: 2
"""


def find_item(items, key, value):
    """Find an item with key or attributes in an object list."""
    filtered = [
        item
        for item in items
        if (item[key] if isinstance(item, dict) else getattr(item, key)) == value
    ]
    if len(filtered) == 0:
        return None

    return filtered[0]


def changed_entries(before, after):
    """Return the indices where two tables differ."""
    return [tuple(index) for index in np.argwhere(before != after)]


def assert_close(first, second, tol):
    """Assert that two arrays agree in sup norm."""
    assert np.max(np.abs(np.asarray(first) - np.asarray(second))) <= tol
