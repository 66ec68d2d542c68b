"""Seeded random scenarios for exactness checks.

Each scenario is a random connected graph of 2..10 nodes, random per-link
loss up to 5%, and monitored pairs whose waypoint paths are random walks
(so consecutive segments are always adjacent) of 1..16 SIDs. Link delays are
chosen so every path, forward and return, stays well below the read margin.
"""

from __future__ import annotations

import random

import networkx as nx

from .scenario import ScenarioBuilder, ScenarioConfig


def _walk(rng: random.Random, graph: nx.Graph, src: str, length: int) -> list[str]:
    """Random walk of ``length`` nodes after ``src`` (may revisit nodes)."""
    walk, here = [], src
    for _ in range(length):
        here = rng.choice(sorted(graph.neighbors(here)))
        walk.append(here)
    return walk


def random_scenario(seed: int, *, interval: float = 1.0, margin: float | None = None,
                    blocks: int = 4, max_nodes: int = 10, max_sids: int = 16,
                    max_loss: float = 0.05, rate_range=(50, 300),
                    sid_lengths=None) -> ScenarioConfig:
    rng = random.Random(seed)
    margin = interval / 2 if margin is None else margin
    n = rng.randint(2, max_nodes)
    names = [f"N{i}" for i in range(1, n + 1)]
    graph = nx.Graph()
    graph.add_nodes_from(names)
    # random spanning tree plus a few chords
    for i in range(1, n):
        graph.add_edge(names[i], names[rng.randrange(i)])
    for _ in range(rng.randint(0, n)):
        a, b = rng.sample(names, 2) if n > 1 else (names[0], names[0])
        if a != b:
            graph.add_edge(a, b)
    # keep every path (at most max_sids hops, each way) well under the margin
    max_delay = margin / (2 * max_sids + 2)
    builder = ScenarioBuilder(seed=seed, duration=blocks * interval, name=f"random-{seed}")
    for name in names:
        builder.node(name)
    for a, b in sorted(graph.edges()):
        builder.link(a, b, delay=round(rng.uniform(0.0001, max_delay), 6),
                     loss_rate=round(rng.uniform(0, max_loss), 4))
    used = set()
    for _ in range(rng.randint(1, 3)):
        src = rng.choice(names)
        length = (rng.choice(sid_lengths) if sid_lengths else rng.randint(1, max_sids))
        walk = _walk(rng, graph, src, length)
        dst, waypoints = walk[-1], walk[:-1]
        if dst == src:
            continue
        # one policy per destination at each ingress: one pair per node pair
        pair = frozenset((src, dst))
        if pair in used:
            continue
        used.add(pair)
        builder.monitored_pair(src, dst, waypoints, rate=rng.randint(*rate_range),
                               interval=interval, margin=margin,
                               reverse_rate=rng.randint(*rate_range))
    if not builder.cfg.sessions:
        # guarantee at least one monitored flow: a direct neighbour pair
        src = names[0]
        dst = sorted(graph.neighbors(src))[0]
        builder.monitored_pair(src, dst, (), rate=rng.randint(*rate_range),
                               interval=interval, margin=margin)
    return builder.build()
