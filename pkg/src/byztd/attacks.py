"""Byzantine message generation.

Each Byzantine agent keeps a shadow parameter it updates with the honest
rule over its own in-neighborhood, so "its true parameters" are well
defined for attacks that reference them.  The message is what actually
goes on the wire.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import NoHonestAgents

ATTACK_KINDS = ("none", "sign_flip", "same_value", "gaussian_noise")


@dataclass(frozen=True)
class AttackModel:
    """Attack kind plus its knobs.

    gaussian_noise re-picks its honest victim every step by default;
    fixed_victim=True pins one victim per Byzantine agent for the run
    (the runner draws it once at start).
    """

    kind: str = "none"
    noise_std: float = 1.0
    fixed_victim: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r} (have {ATTACK_KINDS})")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")


def byzantine_message(
    attack: AttackModel,
    byz_id: int,
    honest_params: Mapping[int, np.ndarray],
    own_shadow: np.ndarray,
    rng: np.random.Generator,
    victim: int | None = None,
) -> np.ndarray:
    """The vector agent byz_id broadcasts this round.

    none        -> the shadow itself (runs the honest protocol)
    sign_flip   -> negated shadow
    same_value  -> all zeros
    gaussian_noise -> a uniformly picked honest agent's parameter plus
                      N(0, noise_std^2) noise per coordinate; `victim`
                      overrides the pick (fixed-victim mode)
    """
    shadow = np.asarray(own_shadow, dtype=float)
    if attack.kind == "none":
        return shadow.copy()
    if attack.kind == "sign_flip":
        return -shadow
    if attack.kind == "same_value":
        return np.zeros_like(shadow)
    # gaussian_noise
    if not honest_params:
        raise NoHonestAgents(f"agent {byz_id} has no honest parameter to imitate")
    ids = sorted(honest_params)
    if victim is None:
        victim = ids[int(rng.integers(len(ids)))]
    elif victim not in honest_params:
        raise NoHonestAgents(f"fixed victim {victim} is not an honest agent")
    base = np.asarray(honest_params[victim], dtype=float)
    return base + rng.normal(0.0, attack.noise_std, size=base.shape)
