"""Maximum Density Divergence and Adversarial Tight Match domain adaptation."""

import json

from ._core import (
    a_distance,
    ablation_csv,
    apply_shift,
    default_config,
    energy_distance,
    gen_two_moons,
    jeffreys_kl,
    mdd_batch,
    mdd_full,
    mdd_population,
    mmd_gaussian,
    total_variation,
    train,
)
from ._core import lemma_audit as _lemma_audit


def lemma_audit(trials, alphabet, seed):
    """Audit report as a dict."""
    return json.loads(_lemma_audit(trials, alphabet, seed))


__all__ = [
    "a_distance",
    "ablation_csv",
    "apply_shift",
    "default_config",
    "energy_distance",
    "gen_two_moons",
    "jeffreys_kl",
    "lemma_audit",
    "mdd_batch",
    "mdd_full",
    "mdd_population",
    "mmd_gaussian",
    "total_variation",
    "train",
]
