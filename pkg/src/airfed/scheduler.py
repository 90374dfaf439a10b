"""Transmission-block scheduling for the consensus phase.

Each device acts as the active receiver ("PS" of its star subgraph) in exactly
one block per consensus iteration.  Two receivers may share a block only if no
device would have to transmit to both, i.e. only if they are at graph distance
greater than 2.  The naive policy uses one block per device; the coloring
policy runs Welsh-Powell on the distance-<=2 conflict graph.

Block draws elsewhere are keyed by (iteration, receiver), never by block index,
so the policy changes latency accounting only and never the trajectory.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Schedule:
    """Assignment of every device to the block in which it receives."""

    n_blocks: int
    assignment: dict  # device -> block in [0, n_blocks)

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        blocks = set(self.assignment.values())
        if not blocks <= set(range(self.n_blocks)):
            raise ValueError("block index out of range")

    def devices_in_block(self, b):
        return sorted(d for d, blk in self.assignment.items() if blk == b)


def naive_schedule(graph):
    """One receiver per block, in device order."""
    return Schedule(
        n_blocks=graph.n_devices,
        assignment={i: i for i in range(graph.n_devices)},
    )


def coloring_schedule(graph):
    """Welsh-Powell coloring of the distance-<=2 conflict graph."""
    n = graph.n_devices
    conflict = _conflict_sets(graph)
    order = sorted(range(n), key=lambda u: (-len(conflict[u]), u))
    color = {}
    next_color = 0
    for u in order:
        if u in color:
            continue
        color[u] = next_color
        for v in order:
            if v in color:
                continue
            if all(color.get(w) != next_color for w in conflict[v]):
                color[v] = next_color
        next_color += 1
    return Schedule(n_blocks=next_color, assignment=color)


def conflicts(graph, u, v):
    """True if u and v cannot receive in the same block."""
    if u == v:
        return False
    if graph.has_edge(u, v):
        return True
    return bool(set(graph.neighbors[u]) & set(graph.neighbors[v]))


def validate_schedule(graph, schedule):
    """Exhaustive pairwise conflict check; raises on violation."""
    devices = sorted(schedule.assignment)
    if devices != list(range(graph.n_devices)):
        raise ValueError("schedule must cover every device exactly once")
    for a in range(graph.n_devices):
        for b in range(a + 1, graph.n_devices):
            if schedule.assignment[a] == schedule.assignment[b] and conflicts(graph, a, b):
                raise ValueError(f"devices {a} and {b} conflict in block {schedule.assignment[a]}")


def dump_schedule(schedule):
    """Plain-text `device block` lines for CLI inspection."""
    return "\n".join(f"{d} {schedule.assignment[d]}" for d in sorted(schedule.assignment))


def _conflict_sets(graph):
    n = graph.n_devices
    out = []
    for u in range(n):
        near = set(graph.neighbors[u])
        for w in graph.neighbors[u]:
            near.update(graph.neighbors[w])
        near.discard(u)
        out.append(near)
    return out
