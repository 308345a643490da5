"""Deterministic round loop and the flat-averaging baseline.

Per round: sample participants, run local updates (in parallel, but with
a fixed reduction order so any worker count gives bitwise-identical
output), average generalized models bottom-up, then apply scheduled
restructuring (group adaptation + outlier elimination). The hierarchy is
built once, at the end of warm-up, from the warmed-up agent models.

Participating agents warm-start each local solve from their level-1
group model (from their own model during warm-up); their personalized
model is whatever the local solve returns. Non-participants keep stale
models and still enter every average, so the member-count weights of the
averaging rule stay exact.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hierarchy as hi
from .aggregation import update_all_levels
from .errors import ConfigurationError
from .local_training import LocalSolverConfig, local_update
from .models import DatasetShard, ModelSpec, accuracy, init_params, loss, loss_gradient
from .schedule import ADAPTATION, HIGH_SPECIALIZATION, MetaLawSchedule

PARAMS = "params"
GRADIENTS = "gradients"


@dataclass(frozen=True)
class RunConfig:
    rounds: int
    model: ModelSpec
    schedule: MetaLawSchedule
    solver: LocalSolverConfig
    participation: float = 1.0
    seed: int = 0
    workers: int = 1
    snapshot_every: int = 10
    baseline_shard_weighting: bool = False
    restructure_before_averaging: bool = False
    full_recluster: bool = False
    structure_distance: str = PARAMS
    limited_agents: tuple = ()

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if not (0 < self.participation <= 1):
            raise ConfigurationError("participation must lie in (0,1]")
        if self.workers < 1 or self.snapshot_every < 1:
            raise ConfigurationError("workers and snapshot_every must be >= 1")
        if self.structure_distance not in (PARAMS, GRADIENTS):
            raise ConfigurationError(f"unknown structure_distance {self.structure_distance!r}")
        object.__setattr__(self, "limited_agents", tuple(sorted(self.limited_agents)))


@dataclass
class SimState:
    cfg: RunConfig
    train: dict
    test: dict
    params: dict
    hierarchy: object = None
    metrics: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    round: int = 0


def metrics_header(num_levels):
    return (
        ["round", "alpha", "beta", "gamma", "resistance", "stage", "num_participants",
         "mean_train_loss", "mean_personalized_test_accuracy"]
        + [f"test_accuracy_level_{k}" for k in range(1, num_levels + 1)]
        + ["global_test_accuracy"]
        + [f"groups_level_{k}" for k in range(1, num_levels + 1)]
        + ["group_changes", "eliminations", "mean_level1_gmp_distance"]
    )


BASELINE_HEADER = [
    "round", "alpha", "beta", "gamma", "resistance", "stage", "num_participants",
    "mean_train_loss", "mean_personalized_test_accuracy", "global_test_accuracy",
]


def _round_seed(master_seed, t):
    return master_seed * 1_000_003 + t


def _sample_participants(agent_ids, fraction, master_seed, t):
    rng = np.random.default_rng([abs(master_seed), 7919, t])
    k = math.ceil(fraction * len(agent_ids))
    picked = rng.choice(np.array(sorted(agent_ids)), size=k, replace=False)
    return sorted(int(a) for a in picked)


def _parallel(cfg, jobs):
    """jobs: list of zero-arg callables; results in submission order."""
    if cfg.workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _ancestor_context(h, agent_id):
    chain = h.ancestor_chain(agent_id)
    return [(h.nodes[nid].gmp.copy(), h.nodes[nid].member_count) for nid in chain]


def _pooled_test(state):
    feats = [state.test[a].features for a in sorted(state.test)]
    labels = [state.test[a].labels for a in sorted(state.test)]
    return DatasetShard(np.concatenate(feats), np.concatenate(labels))


def _build_hierarchy(state):
    cfg = state.cfg
    if cfg.structure_distance == GRADIENTS:
        vectors = {
            a: loss_gradient(cfg.model, state.params[a], state.train[a])
            for a in sorted(state.params)
        }
    else:
        vectors = None
    return hi.build_initial(state.params, cfg.schedule, vectors=vectors)


def _local_round(state, t, participants):
    """Run local solves for one round; returns {agent: new params}."""
    cfg, sched = state.cfg, state.cfg.schedule
    alpha_t = sched.alpha(t)
    beta_t = sched.beta(t)
    rseed = _round_seed(cfg.seed, t)
    h = state.hierarchy
    limited = set(cfg.limited_agents) if h is not None else set()
    solo = [a for a in participants if a not in limited]
    jobs = []
    for a in solo:
        if h is None:
            start, ctx, beta = state.params[a], [], 0.0
        else:
            ctx = _ancestor_context(h, a)
            start, beta = ctx[0][0], beta_t
        jobs.append(
            lambda a=a, start=start, ctx=ctx, beta=beta: local_update(
                cfg.model, start, state.train[a], ctx, alpha_t, beta, cfg.solver, a, rseed
            )
        )
    # capability-limited agents train jointly per level-1 group on pooled data,
    # with the group model as trainee and levels >= 2 as ancestors
    groups = {}
    for a in sorted(limited & set(participants)):
        groups.setdefault(h.agent_group[a], []).append(a)
    group_jobs = []
    for nid in sorted(groups):
        members = groups[nid]
        pooled = DatasetShard(
            np.concatenate([state.train[a].features for a in members]),
            np.concatenate([state.train[a].labels for a in members]),
        )
        ctx = [(h.nodes[x].gmp.copy(), h.nodes[x].member_count)
               for x in h.ancestor_chain(members[0])[1:]]
        group_jobs.append(
            lambda nid=nid, pooled=pooled, ctx=ctx: local_update(
                cfg.model, h.nodes[nid].gmp, pooled, ctx, alpha_t, beta_t,
                cfg.solver, 1_000_000 + nid, rseed
            )
        )
    results = _parallel(cfg, jobs + group_jobs)
    new = dict(zip(solo, results[: len(solo)]))
    for nid, res in zip(sorted(groups), results[len(solo):]):
        for a in groups[nid]:
            new[a] = res
    return new


def _restructure(state, t):
    cfg, sched = state.cfg, state.cfg.schedule
    h = state.hierarchy
    if h is None or not sched.restructure_due(t):
        return 0, 0
    if sched.stage(t) not in (ADAPTATION, HIGH_SPECIALIZATION):
        return 0, 0
    if cfg.full_recluster:
        old = dict(h.agent_group)
        old_members = {nid: tuple(sorted(h.nodes[nid].children)) for nid in set(old.values())}
        state.hierarchy = _build_hierarchy(state)
        new_members = {
            a: tuple(sorted(state.hierarchy.nodes[state.hierarchy.agent_group[a]].children))
            for a in old
        }
        changes = sum(1 for a in old if new_members[a] != old_members[old[a]])
        return changes, 0
    changes = hi.adapt(h, state.params, t, sched)
    replaced = hi.eliminate_outliers(h, state.params, sched)
    return len(changes), len(replaced)


def _round_metrics(state, t, participants, changes, eliminations):
    cfg, sched = state.cfg, state.cfg.schedule
    spec = cfg.model
    num_levels = sched.max_levels + 1
    agents = sorted(state.params)
    train_losses = [loss(spec, state.params[a], state.train[a]) for a in agents]
    test_accs = [accuracy(spec, state.params[a], state.test[a]) for a in agents]
    h = state.hierarchy
    nan = float("nan")
    if h is None:
        level_acc = [nan] * num_levels
        global_acc = nan
        groups = [0] * num_levels
        gmp_dist = nan
    else:
        chains = {a: h.ancestor_chain(a) for a in agents}
        level_acc = [
            float(np.mean([accuracy(spec, h.nodes[chains[a][k - 1]].gmp, state.test[a])
                           for a in agents]))
            for k in range(1, num_levels + 1)
        ]
        global_acc = accuracy(spec, h.root.gmp, _pooled_test(state))
        groups = [len(h.level_nodes(k)) for k in range(1, num_levels + 1)]
        l1 = [h.nodes[nid].gmp for nid in h.level_nodes(1)]
        if len(l1) > 1:
            gmp_dist = float(np.mean(
                [hi.distance(l1[i], l1[j]) for i in range(len(l1)) for j in range(i + 1, len(l1))]
            ))
        else:
            gmp_dist = nan
    return (
        [t, sched.alpha(t), sched.beta(t), sched.gamma(t), sched.resistance(t),
         sched.stage(t), len(participants),
         float(np.mean(train_losses)), float(np.mean(test_accs))]
        + level_acc + [global_acc] + groups + [changes, eliminations, gmp_dist]
    )


def init_state(cfg, shards):
    """Shared model init for all agents, seeded by the master seed."""
    train = {tr.owner: tr for tr, _ in shards}
    test = {te.owner: te for _, te in shards}
    w0 = init_params(cfg.model, cfg.seed)
    params = {a: w0.copy() for a in train}
    return SimState(cfg, train, test, params)


def run_round(state, t):
    """Advance the simulation by one round (see module docstring for order)."""
    cfg, sched = state.cfg, state.cfg.schedule
    participants = _sample_participants(sorted(state.params), cfg.participation, cfg.seed, t)
    if state.hierarchy is None and t >= sched.warmup_rounds:
        state.hierarchy = _build_hierarchy(state)
    state.params.update(_local_round(state, t, participants))
    changes = eliminations = 0
    if cfg.restructure_before_averaging:
        changes, eliminations = _restructure(state, t)
    if state.hierarchy is not None:
        update_all_levels(state.hierarchy, state.params, sched.gamma(t))
    if not cfg.restructure_before_averaging:
        changes, eliminations = _restructure(state, t)
    state.metrics.append(_round_metrics(state, t, participants, changes, eliminations))
    if state.hierarchy is not None and t % cfg.snapshot_every == 0:
        state.snapshots.append(hi.to_snapshot(state.hierarchy, t))
    bad = hi.validate(state.hierarchy) if state.hierarchy is not None else None
    if bad:
        raise ConfigurationError(f"round {t}: hierarchy invariant violated: {bad}")
    state.round = t + 1
    return state


def onboard_agents(state, new_shards, t):
    """Admit new agents after round t; they participate from round t+1.

    Each new agent is placed by greedy descent using a model initialized
    from the root model, then starts from its level-1 group's model.
    """
    if state.hierarchy is None:
        raise ConfigurationError("hierarchy not built; cannot onboard before construction")
    for tr, te in new_shards:
        a = tr.owner
        if a in state.params:
            raise ConfigurationError(f"duplicate agent id {a}")
        probe = state.hierarchy.root.gmp.copy()
        nid = hi.place_new_agent(state.hierarchy, a, probe)
        state.train[a], state.test[a] = tr, te
        state.params[a] = state.hierarchy.nodes[nid].gmp.copy()
    bad = hi.validate(state.hierarchy)
    if bad:
        raise ConfigurationError(f"onboarding at round {t}: {bad}")
    return state


def run(cfg, shards, onboard=None):
    """Full simulation; `onboard` maps round index -> list of (train, test).

    Returns the final SimState; state.metrics rows follow
    metrics_header(schedule.max_levels + 1).
    """
    state = init_state(cfg, shards)
    onboard = onboard or {}
    for t in range(cfg.rounds):
        run_round(state, t)
        for batch in ([onboard[t]] if t in onboard else []):
            onboard_agents(state, batch, t)
    if state.hierarchy is not None:
        state.snapshots.append(hi.to_snapshot(state.hierarchy, cfg.rounds - 1))
    return state


def run_fedavg_baseline(cfg, shards):
    """Flat baseline: local SGD plus global parameter averaging.

    Participants are weighted uniformly by default, matching the
    hierarchical rule's agent-count weighting with singleton groups;
    shard-size weighting sits behind cfg.baseline_shard_weighting.
    """
    train = {tr.owner: tr for tr, _ in shards}
    test = {te.owner: te for _, te in shards}
    agents = sorted(train)
    w = init_params(cfg.model, cfg.seed)
    sched = cfg.schedule
    metrics = []
    for t in range(cfg.rounds):
        participants = _sample_participants(agents, cfg.participation, cfg.seed, t)
        rseed = _round_seed(cfg.seed, t)
        jobs = [
            lambda a=a: local_update(
                cfg.model, w, train[a], [], 1.0, 0.0, cfg.solver, a, rseed
            )
            for a in participants
        ]
        results = _parallel(cfg, jobs)
        if cfg.baseline_shard_weighting:
            weights = np.array([len(train[a]) for a in participants], dtype=np.float64)
        else:
            weights = np.ones(len(participants))
        weights /= weights.sum()
        w = np.zeros_like(w)
        for wt, res in zip(weights, results):
            w += wt * res
        train_losses = [loss(cfg.model, w, train[a]) for a in agents]
        test_accs = [accuracy(cfg.model, w, test[a]) for a in agents]
        pooled = DatasetShard(
            np.concatenate([test[a].features for a in agents]),
            np.concatenate([test[a].labels for a in agents]),
        )
        metrics.append(
            [t, sched.alpha(t), sched.beta(t), sched.gamma(t), sched.resistance(t),
             sched.stage(t), len(participants),
             float(np.mean(train_losses)), float(np.mean(test_accs)),
             accuracy(cfg.model, w, pooled)]
        )
    return metrics, w


# -- persistence ---------------------------------------------------------------


def format_cell(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_metrics_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(v) for v in row) + "\n")


def read_metrics_csv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def write_final_state(path, state):
    doc = {
        "round": state.round,
        "agents": [
            {"agent": a, "param_norm": float(np.linalg.norm(state.params[a]))}
            for a in sorted(state.params)
        ],
        "hierarchy": hi.to_snapshot(state.hierarchy, state.round - 1)
        if state.hierarchy is not None
        else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
