"""Prefix-graph automaton over an episode: traversal, coverage, block edges.

The machine's states are the episode's ancestor-closed vertex sets; an edge
adds one vertex whose predecessors are already present and carries that
vertex's label. For strict episodes the outgoing labels of every state are
distinct, which makes the greedy walk (follow a matching edge if one exists,
otherwise stay) deterministic, and a sequence matches the episode exactly when
the walk over the whole sequence ends in the sink state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .datagen import Dataset
from .episodes import (
    Episode,
    SizeCapError,
    StrictnessError,
    VERTEX_CAP,
    is_proper_superepisode_same_vertices,
    is_strict,
    prefix_graphs,
)

STATE_CAP = 65_536


@dataclass(frozen=True)
class MachineEdge:
    src: int
    dst: int
    label: str
    vertex: int  # vertex added by this transition


class Machine:
    """Immutable automaton for one strict episode."""

    def __init__(self, episode: Episode, states: list[int], edges: list[MachineEdge]):
        self.episode = episode
        self.states = states  # vertex bitmasks, ordered by (size, mask)
        self.edges = edges
        self.state_index = {mask: i for i, mask in enumerate(states)}
        self.source = 0
        self.sink = len(states) - 1
        self.out: list[dict[str, int]] = [{} for _ in states]  # label -> dst state
        self.out_edges: list[list[int]] = [[] for _ in states]
        self.in_edges: list[list[int]] = [[] for _ in states]
        self._edge_by_src_vertex: dict[tuple[int, int], int] = {}
        for idx, e in enumerate(edges):
            self.out[e.src][e.label] = e.dst
            self.out_edges[e.src].append(idx)
            self.in_edges[e.dst].append(idx)
            self._edge_by_src_vertex[(e.src, e.vertex)] = idx

    @property
    def num_states(self) -> int:
        return len(self.states)

    def state_labels(self, state: int) -> list[str]:
        mask = self.states[state]
        return [self.episode.labels[v] for v in range(self.episode.n) if mask >> v & 1]

    def bound_transitions(self, dataset: Dataset) -> list[dict[int, int]]:
        """Per-state transition maps keyed by interned label id."""
        table: list[dict[int, int]] = [{} for _ in self.states]
        for e in self.edges:
            lid = dataset.alphabet.id_of(e.label)
            if lid is not None:
                table[e.src][lid] = e.dst
        return table

    def episode_label_ids(self, dataset: Dataset) -> list[int]:
        ids = {dataset.alphabet.id_of(lab) for lab in self.episode.labels}
        ids.discard(None)
        return sorted(ids)  # type: ignore[arg-type]


def build_machine(episode: Episode, vertex_cap: int = VERTEX_CAP,
                  state_cap: int = STATE_CAP) -> Machine:
    """Construct the automaton; deterministic state and edge numbering."""
    if not is_strict(episode):
        raise StrictnessError("machine construction requires a strict episode")
    states = prefix_graphs(episode, vertex_cap=vertex_cap)
    if len(states) > state_cap:
        raise SizeCapError(
            f"machine would have {len(states)} states, above the cap of {state_cap}")
    index = {mask: i for i, mask in enumerate(states)}
    preds = episode.predecessor_masks()
    edges: list[MachineEdge] = []
    for i, mask in enumerate(states):
        for v in range(episode.n):
            bit = 1 << v
            if mask & bit or preds[v] & ~mask:
                continue
            edges.append(MachineEdge(i, index[mask | bit], episode.labels[v], v))
    edges.sort(key=lambda e: (e.src, e.vertex))
    return Machine(episode, states, edges)


def greedy(machine: Machine, sequence: Iterable[str], start: int | None = None) -> int:
    """Fold the sequence through the machine, staying put on unmatched events."""
    state = machine.source if start is None else start
    out = machine.out
    for label in sequence:
        nxt = out[state].get(label)
        if nxt is not None:
            state = nxt
    return state


def covers(machine: Machine, sequence: Iterable[str]) -> bool:
    """True iff the greedy walk over the whole sequence reaches the sink."""
    return greedy(machine, sequence) == machine.sink


def brute_force_covers(episode: Episode, sequence: Sequence[str]) -> bool:
    """Backtracking oracle: injective label- and order-preserving embedding.

    Exponential in the worst case; intended for small instances only
    (|V| * |S| <= 64 or so) as an independent check of the greedy walk.
    """
    n = episode.n
    if n == 0:
        return True
    preds = episode.predecessor_masks()
    # vertices in a fixed topological order so parents are assigned first
    topo: list[int] = []
    placed = 0
    remaining = list(range(n))
    while remaining:
        v = next(u for u in remaining if preds[u] & ~placed == 0)
        topo.append(v)
        placed |= 1 << v
        remaining.remove(v)

    positions_by_label: dict[str, list[int]] = {}
    for i, s in enumerate(sequence):
        positions_by_label.setdefault(s, []).append(i)

    assigned = [0] * n  # vertex -> sequence position

    def assign(depth: int, used: int) -> bool:
        if depth == n:
            return True
        v = topo[depth]
        lo = -1
        pm = preds[v]
        while pm:
            bit = pm & -pm
            lo = max(lo, assigned[bit.bit_length() - 1])
            pm ^= bit
        for pos in positions_by_label.get(episode.labels[v], ()):  # ascending
            if pos <= lo or used >> pos & 1:
                continue
            assigned[v] = pos
            if assign(depth + 1, used | 1 << pos):
                return True
        return False

    return assign(0, 0)


def support(machine: Machine, dataset: Dataset) -> int:
    """Number of dataset sequences whose greedy walk reaches the sink."""
    if machine.source == machine.sink:
        return dataset.num_sequences
    table = machine.bound_transitions(dataset)
    sink = machine.sink
    count = 0
    for events in dataset.relevant_events(machine.episode_label_ids(dataset)).values():
        state = machine.source
        for _, lid in events:
            nxt = table[state].get(lid)
            if nxt is not None:
                state = nxt
                if state == sink:
                    count += 1
                    break
    return count


# --- boosted edge sets --------------------------------------------------------

def block_prefix(machine: Machine, w_mask: int) -> frozenset[int]:
    """Edges that add a vertex of W from a state already intersecting W.

    Source-outgoing edges can never qualify (the source intersects nothing);
    the set is well defined for arbitrary W, but only ancestor-closed W (or
    complements of one) model gap behaviour faithfully.
    """
    picked = []
    for idx, e in enumerate(machine.edges):
        if machine.states[e.src] & w_mask and (1 << e.vertex) & w_mask:
            picked.append(idx)
    return frozenset(picked)


def block_super(machine: Machine, stricter: Episode,
                vertex_cap: int = VERTEX_CAP, state_cap: int = STATE_CAP) -> frozenset[int]:
    """Edges of this machine mirrored from a same-vertex stricter episode.

    Every state of the stricter episode's machine is also a state here (its
    edge set is a superset, so its ancestor-closed sets remain ancestor
    closed); each of its non-source edges adds the same vertex from the same
    state mask and is therefore present here as well.
    """
    if not is_proper_superepisode_same_vertices(machine.episode, stricter):
        raise ValueError("second episode must be a proper same-vertex superepisode")
    other = build_machine(stricter, vertex_cap=vertex_cap, state_cap=state_cap)
    picked = []
    for e in other.edges:
        src_mask = other.states[e.src]
        if src_mask == 0:
            continue
        src_here = machine.state_index[src_mask]
        picked.append(machine._edge_by_src_vertex[(src_here, e.vertex)])
    return frozenset(picked)


# --- textual rendering ---------------------------------------------------------

def _state_name(machine: Machine, state: int) -> str:
    labels = machine.state_labels(state)
    return "{" + ",".join(labels) + "}"


def render_machine(machine: Machine, highlights: dict[str, frozenset[int]] | None = None) -> str:
    """Deterministic multi-line description of states, edges and edge sets."""
    lines = [f"machine: {machine.num_states} states, {len(machine.edges)} edges"]
    for i in range(machine.num_states):
        tag = " (source)" if i == machine.source else (" (sink)" if i == machine.sink else "")
        lines.append(f"  state {i} {_state_name(machine, i)}{tag}")
    for idx, e in enumerate(machine.edges):
        lines.append(f"  edge {idx}: {e.src} -{e.label}-> {e.dst}")
    for name in sorted(highlights or {}):
        pairs = sorted((machine.edges[i].src, machine.edges[i].dst) for i in highlights[name])
        rendered = ", ".join(f"({u},{v})" for u, v in pairs) or "-"
        lines.append(f"  {name}: {rendered}")
    return "\n".join(lines)
