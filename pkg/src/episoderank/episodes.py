"""Labelled-DAG episode patterns: closure, strictness, prefix subgraphs.

An episode is a DAG with string-labelled vertices. A sequence matches it when
the labels can be found in an order consistent with the edges. Episodes are
stored transitively closed and in a canonical vertex order (sorted by label,
equal labels by their chain order), which makes structural comparison a plain
index-wise check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence


class EpisodeError(ValueError):
    """Base class for episode construction/validation failures."""


class CycleError(EpisodeError):
    """Edge relation contains a directed cycle."""

    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        super().__init__(f"edge relation has a cycle through vertices {cycle}")


class StrictnessError(EpisodeError):
    """Two equal-label vertices are unordered."""


class SizeCapError(EpisodeError):
    """Episode exceeds a configured size limit."""


VERTEX_CAP = 16


@dataclass(frozen=True)
class Episode:
    """Transitively closed episode in canonical vertex order.

    ``labels[i]`` is the label of vertex ``i``; ``edges`` holds ordered pairs
    ``(u, v)`` meaning u must occur before v. Instances are immutable and
    hashable; construct via :func:`make_episode` (or the ``serial`` /
    ``parallel`` helpers) which closes and canonicalizes.
    """

    labels: tuple[str, ...]
    edges: frozenset[tuple[int, int]]

    @property
    def n(self) -> int:
        return len(self.labels)

    def label_multiset(self) -> tuple[str, ...]:
        return self.labels  # canonical order is sorted by label

    def predecessor_masks(self) -> list[int]:
        """Bitmask of (closed) predecessors per vertex."""
        preds = [0] * self.n
        for u, v in self.edges:
            preds[v] |= 1 << u
        return preds

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Episode({describe(self)})"


def _find_cycle(n: int, adj: list[list[int]]) -> list[int]:
    """Return some directed cycle as a vertex list (assumes one exists)."""
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    stack: list[int] = []

    def dfs(u: int) -> list[int] | None:
        color[u] = 1
        stack.append(u)
        for w in adj[u]:
            if color[w] == 1:
                return stack[stack.index(w):] + [w]
            if color[w] == 0:
                found = dfs(w)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for v in range(n):
        if color[v] == 0:
            found = dfs(v)
            if found:
                return found
    raise AssertionError("no cycle found")


def _close_edges(n: int, edges: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Transitive closure of a DAG edge relation; raises CycleError otherwise."""
    adj = [[] for _ in range(n)]
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise EpisodeError(f"edge ({u},{v}) out of range for {n} vertices")
        if u == v:
            raise CycleError([u, u])
        adj[u].append(v)

    # reachability masks in reverse topological order
    indeg = [0] * n
    for u in range(n):
        for v in adj[u]:
            indeg[v] += 1
    order = [v for v in range(n) if indeg[v] == 0]
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                order.append(v)
    if len(order) < n:
        raise CycleError(_find_cycle(n, adj))

    reach = [0] * n
    for u in reversed(order):
        mask = 0
        for v in adj[u]:
            mask |= (1 << v) | reach[v]
        reach[u] = mask
    closed = set()
    for u in range(n):
        mask = reach[u]
        while mask:
            low = mask & -mask
            closed.add((u, low.bit_length() - 1))
            mask ^= low
    return frozenset(closed)


def _canonical_permutation(labels: Sequence[str], closed: frozenset[tuple[int, int]]) -> list[int]:
    """Vertex order sorted by label, equal labels by their chain position.

    For strict episodes the equal-label chain position is unique; otherwise
    ties fall back to the original index (best-effort, strict inputs are the
    contract everywhere canonical uniqueness matters).
    """
    n = len(labels)
    same_before = [0] * n
    for u, v in closed:
        if labels[u] == labels[v]:
            same_before[v] += 1
    order = sorted(range(n), key=lambda v: (labels[v], same_before[v], v))
    return order


def make_episode(labels: Sequence[str], edges: Iterable[tuple[int, int]]) -> Episode:
    """Build a canonical, transitively closed episode from raw parts."""
    labels = tuple(labels)
    closed = _close_edges(len(labels), edges)
    order = _canonical_permutation(labels, closed)
    pos = [0] * len(labels)  # old id -> new id
    for new, old in enumerate(order):
        pos[old] = new
    new_labels = tuple(labels[old] for old in order)
    new_edges = frozenset((pos[u], pos[v]) for u, v in closed)
    return Episode(new_labels, new_edges)


def serial(labels: Sequence[str]) -> Episode:
    """Total-order episode over the given labels, in the given order."""
    n = len(labels)
    return make_episode(labels, [(i, j) for i in range(n) for j in range(i + 1, n)])


def parallel(labels: Sequence[str]) -> Episode:
    """Edgeless episode over the given labels."""
    return make_episode(labels, [])


def transitive_closure(episode: Episode) -> Episode:
    """Close the edge relation (identity for stored episodes, kept for raw use)."""
    return make_episode(episode.labels, episode.edges)


def transitive_reduction(episode: Episode) -> frozenset[tuple[int, int]]:
    """Minimal edge set whose closure equals the stored (closed) edges."""
    edges = episode.edges
    reduced = set()
    for u, v in edges:
        if not any((u, w) in edges and (w, v) in edges for w in range(episode.n)):
            reduced.add((u, v))
    return frozenset(reduced)


def is_strict(episode: Episode) -> bool:
    """True iff every equal-label vertex pair is ordered by an edge."""
    for u in range(episode.n):
        for v in range(u + 1, episode.n):
            if episode.labels[u] == episode.labels[v]:
                if (u, v) not in episode.edges and (v, u) not in episode.edges:
                    return False
    return True


def strictify(episode: Episode) -> Episode:
    """Chain equal-label vertices into a total order consistent with the edges.

    For a parallel episode this produces the strict episode matched by exactly
    the same sequences. For general inputs the chain follows a topological
    order of the closed episode, so the result is always a DAG.
    """
    # deterministic topological order (smallest vertex id first)
    n = episode.n
    preds = episode.predecessor_masks()
    placed = 0
    topo: list[int] = []
    remaining = set(range(n))
    while remaining:
        ready = sorted(v for v in remaining if preds[v] & ~placed == 0)
        if not ready:
            raise CycleError(sorted(remaining))
        v = ready[0]
        topo.append(v)
        placed |= 1 << v
        remaining.remove(v)
    rank = {v: i for i, v in enumerate(topo)}

    groups: dict[str, list[int]] = {}
    for v in range(n):
        groups.setdefault(episode.labels[v], []).append(v)
    extra = []
    for verts in groups.values():
        verts.sort(key=lambda v: rank[v])
        extra.extend(zip(verts, verts[1:]))
    return make_episode(episode.labels, set(episode.edges) | set(extra))


def induced(episode: Episode, vertices: Iterable[int]) -> Episode:
    """Sub-episode on the given vertex ids with all edges among them."""
    keep = sorted(set(vertices))
    if any(v < 0 or v >= episode.n for v in keep):
        raise EpisodeError(f"vertex ids {keep} invalid for episode of size {episode.n}")
    pos = {v: i for i, v in enumerate(keep)}
    labels = tuple(episode.labels[v] for v in keep)
    edges = frozenset((pos[u], pos[v]) for u, v in episode.edges if u in pos and v in pos)
    return Episode(labels, edges)  # closed subgraph of a closed DAG stays closed/canonical


def prefix_graphs(episode: Episode, vertex_cap: int = VERTEX_CAP) -> list[int]:
    """All ancestor-closed vertex sets as bitmasks, ordered by (size, mask).

    Includes the empty set and the full vertex set. The count is exponential
    for parallel episodes, hence the vertex cap.
    """
    if episode.n > vertex_cap:
        raise SizeCapError(
            f"episode has {episode.n} vertices, above the cap of {vertex_cap}")
    preds = episode.predecessor_masks()
    seen = {0}
    frontier = [0]
    while frontier:
        mask = frontier.pop()
        for v in range(episode.n):
            bit = 1 << v
            if mask & bit or preds[v] & ~mask:
                continue
            nxt = mask | bit
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return sorted(seen, key=lambda m: (bin(m).count("1"), m))


def is_proper_superepisode_same_vertices(g: Episode, h: Episode) -> bool:
    """True iff h has the same labels as g and strictly more order constraints.

    Both episodes must be canonical; the canonical order makes the vertex
    correspondence index-wise.
    """
    if g.labels != h.labels:
        return False
    return g.edges < h.edges


def describe(episode: Episode) -> str:
    """Compact one-line rendering, e.g. ``a-b-c|0<1|1<2`` (reduced edges)."""
    parts = ["-".join(episode.labels)]
    for u, v in sorted(transitive_reduction(episode)):
        parts.append(f"{u}<{v}")
    return "|".join(parts)


# --- episode files (JSON lines) ---------------------------------------------

def episode_to_json(eid: str, episode: Episode) -> str:
    obj = {
        "id": eid,
        "labels": list(episode.labels),
        "edges": sorted(list(e) for e in transitive_reduction(episode)),
    }
    return json.dumps(obj, separators=(", ", ": "))


def save_episodes(items: Iterable[tuple[str, Episode]], path: str) -> None:
    """Write episodes as JSON lines with reduced edge lists."""
    with open(path, "w", encoding="utf-8") as fh:
        for eid, episode in items:
            fh.write(episode_to_json(eid, episode) + "\n")


def load_episodes(path: str, auto_strictify: bool = False) -> list[tuple[str, Episode]]:
    """Read a JSON-lines episode file; close, validate and canonicalize.

    Non-strict episodes are rejected unless ``auto_strictify`` is set, in which
    case unordered equal-label vertices are chained.
    """
    out: list[tuple[str, Episode]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                episode = make_episode(obj["labels"], [tuple(e) for e in obj["edges"]])
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise EpisodeError(f"{path}:{lineno}: malformed episode record: {exc}") from None
            if not is_strict(episode):
                if not auto_strictify:
                    raise StrictnessError(
                        f"{path}:{lineno}: episode {obj.get('id')!r} is not strict "
                        "(use --strictify to repair)")
                episode = strictify(episode)
            out.append((str(obj["id"]), episode))
    return out


