"""
Reproducible random streams.

Every trajectory owns its own Philox (counter-based, 64-bit) generator. The
child seed is derived by numpy's ``SeedSequence`` hash of the entropy words
``[master_seed, family, trajectory_index]``, so an ensemble is reproducible
and independent of the order or process in which trajectories are run.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError

# Stream families keep unrelated experiments on disjoint substreams.
FAMILY_SDE = 0
FAMILY_GIRSANOV_PHYSICAL = 1
FAMILY_GIRSANOV_Q = 2
FAMILY_MIXTURE_CHECK = 3
FAMILY_ORDER_CHECK = 4

_MAX_SEED = 2 ** 64


def validate_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def child_seed_sequence(master_seed: int, index: int, family: int = FAMILY_SDE) -> np.random.SeedSequence:
    """The published mixing function: SeedSequence([master_seed, family, index])."""
    return np.random.SeedSequence([validate_seed(master_seed), int(family), int(index)])


def _philox(seed_sequence: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence))


@dataclass(frozen=True)
class TrajectoryStreams:
    # mixture member selection
    initial: np.random.Generator
    # Wiener increments
    noise: np.random.Generator


def make_streams(master_seed: int, index: int, family: int = FAMILY_SDE) -> TrajectoryStreams:
    """
    Deterministically create the independent streams of one trajectory.

    Structure:
      trajectory
        ├── initial (mixture sampling)
        └── noise (Wiener increments)
    """
    root = child_seed_sequence(master_seed, index, family)
    ss_initial, ss_noise = root.spawn(2)
    return TrajectoryStreams(initial=_philox(ss_initial), noise=_philox(ss_noise))


def stream(master_seed: int, index: int = 0, family: int = FAMILY_GIRSANOV_Q) -> np.random.Generator:
    """A single generator for samplers that need no substructure."""
    return _philox(child_seed_sequence(master_seed, index, family))
