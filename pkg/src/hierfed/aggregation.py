"""Bottom-up hierarchical model averaging.

Each group's generalized model is refreshed as

    gmp <- (1 - gamma) * gmp + gamma * sum_i (N_i / N) * child_gmp_i

so subgroups with more members weigh more, and gamma controls how fast
generalized knowledge tracks its members. Level 1 treats agents as
singleton children (count 1); each sweep feeds freshly updated child
models to the parent level. Summation runs in ascending child id order
for bitwise determinism.
"""

import numpy as np

from .errors import ConfigurationError


def update_group_gmp(old_gmp, children, gamma, expected_count=None):
    """Apply one averaging step; children is a list of (gmp, member_count)."""
    if not (0.0 <= gamma <= 1.0):
        raise ConfigurationError(f"gamma {gamma} outside [0,1]")
    if not children:
        raise ConfigurationError("group has no children to average")
    old_gmp = np.asarray(old_gmp, dtype=np.float64)
    total = sum(cnt for _, cnt in children)
    if expected_count is not None and total != expected_count:
        raise ConfigurationError(
            f"child counts sum to {total}, group records {expected_count} members"
        )
    mixed = np.zeros_like(old_gmp)
    for gmp, cnt in children:
        gmp = np.asarray(gmp, dtype=np.float64)
        if gmp.shape != old_gmp.shape:
            raise ConfigurationError("child model dimension mismatch")
        mixed += (cnt / total) * gmp
    return (1.0 - gamma) * old_gmp + gamma * mixed


def update_all_levels(h, agent_params, gamma):
    """One bottom-up sweep over the whole hierarchy; updates gmps in place."""
    for level in range(1, h.num_levels + 1):
        for nid in h.level_nodes(level):
            node = h.nodes[nid]
            if level == 1:
                children = [(agent_params[a], 1) for a in sorted(node.children)]
            else:
                children = [
                    (h.nodes[c].gmp, h.nodes[c].member_count)
                    for c in sorted(node.children)
                ]
            node.gmp = update_group_gmp(node.gmp, children, gamma, node.member_count)
    return h
