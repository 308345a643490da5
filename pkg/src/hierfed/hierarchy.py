"""Self-organizing hierarchy of specialized agent groups.

Levels 1..max_levels come from cutting one average-linkage dendrogram at
the per-level distance thresholds d_1 < ... < d_max; a single artificial
root sits above them (level max_levels + 1) and carries the globally
shared model. Coinciding adjacent levels are kept, never collapsed, so
the level count is fixed for a whole run and metrics columns stay stable.

Group membership then evolves by local moves only: resistance-gated
adaptation, outlier elimination with immediate re-placement, and greedy
top-down placement of new agents.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"distance between shapes {a.shape} and {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass
class GroupNode:
    node_id: int
    level: int
    gmp: np.ndarray
    member_count: int
    children: list  # node ids (level > 1) or agent ids (level == 1)


class Hierarchy:
    """Tree of GroupNodes; level num_levels holds the single root."""

    def __init__(self, num_levels):
        self.num_levels = num_levels
        self.nodes = {}
        self.agent_group = {}  # agent id -> level-1 node id
        self.parent = {}  # node id -> parent node id (root absent)
        self._next_id = 0

    # -- construction helpers -------------------------------------------------

    def _new_node(self, level, gmp, children):
        nid = self._next_id
        self._next_id += 1
        node = GroupNode(nid, level, np.array(gmp, dtype=np.float64), 0, list(children))
        self.nodes[nid] = node
        return node

    def level_nodes(self, level):
        return sorted(n.node_id for n in self.nodes.values() if n.level == level)

    @property
    def root(self):
        (rid,) = self.level_nodes(self.num_levels)
        return self.nodes[rid]

    def agents(self):
        return sorted(self.agent_group)

    def ancestor_chain(self, agent_id):
        """Node ids from the agent's level-1 group up to the root."""
        nid = self.agent_group[agent_id]
        chain = [nid]
        while nid in self.parent:
            nid = self.parent[nid]
            chain.append(nid)
        return chain

    def recount(self):
        for level in range(1, self.num_levels + 1):
            for nid in self.level_nodes(level):
                node = self.nodes[nid]
                if level == 1:
                    node.member_count = len(node.children)
                else:
                    node.member_count = sum(
                        self.nodes[c].member_count for c in node.children
                    )


def agglomerate(vectors):
    """Average-linkage merge sequence over {id: vector}.

    Returns (merges, leaf_cluster): merges is a list of
    (height, cluster_a, cluster_b, new_cluster) with cluster ids assigned
    scipy-style (leaves 0..n-1 in ascending input id order, merged
    clusters numbered onward); ties pick the lexicographically smallest
    (min_id, max_id) pair. Average linkage keeps heights nondecreasing.
    """
    ids = sorted(vectors)
    n = len(ids)
    members = {i: [i] for i in range(n)}  # cluster id -> leaf indices
    pts = np.array([vectors[i] for i in ids], dtype=np.float64)
    merges = []
    active = sorted(members)
    nxt = n
    while len(active) > 1:
        best = None
        for i, a in enumerate(active):
            for b in active[i + 1 :]:
                d = np.mean(
                    [np.linalg.norm(pts[p] - pts[q]) for p in members[a] for q in members[b]]
                )
                key = (d, min(a, b), max(a, b))
                if best is None or key < best:
                    best = key
        d, a, b = best
        members[nxt] = sorted(members[a] + members[b])
        del members[a], members[b]
        merges.append((d, a, b, nxt))
        active = sorted(members)
        nxt += 1
    leaf_of = {ids[i]: i for i in range(n)}
    return merges, leaf_of


def cut_partition(merges, leaf_of, height):
    """Partition after applying all merges with height <= cutoff.

    Returns a list of sorted member-id tuples, ordered by smallest member.
    """
    n = len(leaf_of)
    members = {i: [i] for i in range(n)}
    for d, a, b, nxt in merges:
        if d <= height:
            members[nxt] = members.pop(a) + members.pop(b)
    inv = {v: k for k, v in leaf_of.items()}
    groups = [tuple(sorted(inv[i] for i in leaves)) for leaves in members.values()]
    return sorted(groups, key=lambda g: g[0])


def build_initial(agent_params, sched, vectors=None):
    """Cluster warmed-up agent models into the initial nested hierarchy.

    `vectors` optionally overrides the clustering coordinates (e.g. loss
    gradients instead of parameters); GMPs always come from agent_params.
    """
    if not agent_params:
        raise ConfigurationError("cannot build a hierarchy from zero agents")
    merges, leaf_of = agglomerate(vectors if vectors is not None else agent_params)
    h = Hierarchy(sched.max_levels + 1)
    prev = {}  # member tuple -> node id at the previous level
    for k, d_k in enumerate(sched.thresholds, start=1):
        cur = {}
        for group in cut_partition(merges, leaf_of, d_k):
            if k == 1:
                node = h._new_node(1, np.zeros_like(next(iter(agent_params.values()))), group)
                for a in group:
                    h.agent_group[a] = node.node_id
            else:
                kids = [prev[g] for g in prev if set(g) <= set(group)]
                node = h._new_node(k, h.nodes[kids[0]].gmp, sorted(kids))
                for c in sorted(kids):
                    h.parent[c] = node.node_id
            cur[group] = node.node_id
        prev = cur
    top = sorted(prev.values())
    root = h._new_node(h.num_levels, h.nodes[top[0]].gmp, top)
    for c in top:
        h.parent[c] = root.node_id
    h.recount()
    refresh_gmps_from_members(h, agent_params)
    return h


def refresh_gmps_from_members(h, agent_params):
    """Member-count-weighted mean of child models, bottom-up (used at build)."""
    for level in range(1, h.num_levels + 1):
        for nid in h.level_nodes(level):
            node = h.nodes[nid]
            if level == 1:
                parts = [(agent_params[a], 1) for a in sorted(node.children)]
            else:
                parts = [
                    (h.nodes[c].gmp, h.nodes[c].member_count) for c in sorted(node.children)
                ]
            total = sum(cnt for _, cnt in parts)
            node.gmp = sum((cnt / total) * np.asarray(p, dtype=np.float64) for p, cnt in parts)


def _prune_upward(h, nid):
    """Drop nid if empty, then walk up pruning emptied ancestors."""
    while nid is not None:
        node = h.nodes[nid]
        if node.children or node.level == h.num_levels:
            return
        parent = h.parent.pop(nid, None)
        del h.nodes[nid]
        if parent is not None:
            h.nodes[parent].children.remove(nid)
        nid = parent


def _move_agent(h, agent_id, target):
    src = h.agent_group[agent_id]
    if src == target:
        return
    h.nodes[src].children.remove(agent_id)
    h.nodes[target].children.append(agent_id)
    h.nodes[target].children.sort()
    h.agent_group[agent_id] = target
    _prune_upward(h, src)
    h.recount()


def adapt(h, agent_params, t, sched):
    """Resistance-gated group moves; returns the list of (agent, from, to).

    In the high-specialization stage candidate groups are restricted to
    siblings under the agent's level-2 parent. Moves require
    d_best < (1 - rho) * d_cur strictly; distance ties keep the agent put,
    and ties among candidates go to the lower node id. GMPs are fixed
    during the pass, so move decisions are effectively simultaneous.
    """
    from .schedule import ADAPTATION, HIGH_SPECIALIZATION

    stage = sched.stage(t)
    if stage not in (ADAPTATION, HIGH_SPECIALIZATION):
        raise ConfigurationError(f"adapt called in stage {stage!r}")
    rho = sched.resistance(t)
    gmps = {nid: h.nodes[nid].gmp.copy() for nid in h.level_nodes(1)}
    decisions = []
    for a in h.agents():
        cur = h.agent_group[a]
        if stage == HIGH_SPECIALIZATION and cur in h.parent:
            candidates = [c for c in h.nodes[h.parent[cur]].children if c != cur]
        else:
            candidates = [nid for nid in gmps if nid != cur]
        if not candidates:
            continue
        d_cur = distance(agent_params[a], gmps[cur])
        best = min(candidates, key=lambda nid: (distance(agent_params[a], gmps[nid]), nid))
        if distance(agent_params[a], gmps[best]) < (1.0 - rho) * d_cur:
            decisions.append((a, cur, best))
    for a, src, dst in decisions:
        h.nodes[src].children.remove(a)
        h.nodes[dst].children.append(a)
        h.agent_group[a] = dst
    for a, src, dst in decisions:
        h.nodes[dst].children.sort()
        if src in h.nodes:
            _prune_upward(h, src)
    h.recount()
    return decisions


def place_new_agent(h, agent_id, params):
    """Greedy top-down descent to the nearest-GMP level-1 group."""
    if agent_id in h.agent_group:
        raise ConfigurationError(f"agent {agent_id} already placed")
    if not h.nodes:
        node = h._new_node(1, params, [agent_id])
        h.agent_group[agent_id] = node.node_id
        for level in range(2, h.num_levels + 1):
            up = h._new_node(level, params, [node.node_id])
            h.parent[node.node_id] = up.node_id
            node = up
        h.recount()
        return h.agent_group[agent_id]
    node = h.root
    while node.level > 1:
        kid = min(node.children, key=lambda c: (distance(params, h.nodes[c].gmp), c))
        node = h.nodes[kid]
    node.children.append(agent_id)
    node.children.sort()
    h.agent_group[agent_id] = node.node_id
    h.recount()
    return node.node_id


def eliminate_outliers(h, agent_params, sched):
    """Re-place agents farther than elimination_factor * d_1 from their group GMP.

    Re-placement is immediate and non-cascading: each agent is examined
    once per call, and landing back in the original group is a no-op.
    """
    cutoff = sched.elimination_factor * sched.thresholds[0]
    replaced = []
    for a in h.agents():
        cur = h.agent_group[a]
        if distance(agent_params[a], h.nodes[cur].gmp) <= cutoff:
            continue
        node = h.root
        while node.level > 1:
            kid = min(node.children, key=lambda c: (distance(agent_params[a], h.nodes[c].gmp), c))
            node = h.nodes[kid]
        if node.node_id != cur:
            _move_agent(h, a, node.node_id)
            replaced.append(a)
    return replaced


def validate(h):
    """Return None if every structural invariant holds, else a message."""
    roots = h.level_nodes(h.num_levels)
    if len(roots) != 1:
        return f"expected a single root, found nodes {roots}"
    seen_agents = {}
    for nid, node in h.nodes.items():
        if nid != node.node_id:
            return f"node {nid} stored under wrong key"
        if not (1 <= node.level <= h.num_levels):
            return f"node {nid} has level {node.level}"
        if node.level < h.num_levels and nid not in h.parent:
            return f"node {nid} has no parent"
        if node.level == 1:
            for a in node.children:
                if a in seen_agents:
                    return f"agent {a} in groups {seen_agents[a]} and {nid}"
                seen_agents[a] = nid
            if node.member_count != len(node.children):
                return f"node {nid} count {node.member_count} != {len(node.children)} agents"
        else:
            for c in node.children:
                if c not in h.nodes:
                    return f"node {nid} references missing child {c}"
                child = h.nodes[c]
                if child.level != node.level - 1:
                    return f"node {nid} (level {node.level}) has child {c} at level {child.level}"
                if h.parent.get(c) != nid:
                    return f"child {c} parent link does not point to {nid}"
            if node.member_count != sum(h.nodes[c].member_count for c in node.children):
                return f"node {nid} member count is stale"
    if seen_agents != h.agent_group:
        return "agent_group map disagrees with level-1 membership"
    for nid, node in h.nodes.items():
        if node.level < h.num_levels:
            p = h.parent.get(nid)
            if p is None or nid not in h.nodes[p].children:
                return f"node {nid} missing from its parent's children"
    if h.nodes and h.root.member_count != len(h.agent_group):
        return (
            f"root count {h.root.member_count} != {len(h.agent_group)} agents"
        )
    return None


# -- exports ------------------------------------------------------------------


def to_snapshot(h, round_index):
    levels = []
    for k in range(1, h.num_levels + 1):
        groups = []
        for nid in h.level_nodes(k):
            node = h.nodes[nid]
            entry = {
                "id": nid,
                "member_count": node.member_count,
                "gmp_norm": float(np.linalg.norm(node.gmp)),
            }
            entry["agents" if k == 1 else "children"] = list(node.children)
            groups.append(entry)
        levels.append({"k": k, "groups": groups})
    return {"round": round_index, "levels": levels}


def snapshot_to_dot(snapshot):
    """Deterministic DOT digraph: root -> groups -> agents."""
    lines = ["digraph hierarchy {", "  rankdir=TB;"]
    for level in sorted(snapshot["levels"], key=lambda l: -l["k"]):
        k = level["k"]
        for g in sorted(level["groups"], key=lambda g: g["id"]):
            lines.append(f'  g{g["id"]} [label="L{k}/#{g["member_count"]}" shape=box];')
    for level in sorted(snapshot["levels"], key=lambda l: -l["k"]):
        for g in sorted(level["groups"], key=lambda g: g["id"]):
            if "children" in g:
                for c in sorted(g["children"]):
                    lines.append(f"  g{g['id']} -> g{c};")
            else:
                for a in sorted(g["agents"]):
                    lines.append(f'  g{g["id"]} -> a{a};')
                    lines.append(f'  a{a} [label="agent {a}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
