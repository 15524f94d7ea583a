"""Sequence corpora: text ingestion and the seeded synthetic generators.

A dataset is a list of event sequences over an interned alphabet. The three
synthetic corpus kinds (``plant``, ``plant2``, ``gap``) write known patterns
into uniform noise; all randomness flows from a single 64-bit seed through a
NumPy PCG64 generator, so output is byte-identical across runs and platforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .episodes import Episode, make_episode, serial

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or unusable input data."""


class Alphabet:
    """Bijective interning table between label strings and integer ids."""

    def __init__(self, symbols: Iterable[str] = ()):
        self.symbols: list[str] = []
        self._ids: dict[str, int] = {}
        for s in symbols:
            self.intern(s)

    def intern(self, symbol: str) -> int:
        sid = self._ids.get(symbol)
        if sid is None:
            sid = len(self.symbols)
            self.symbols.append(symbol)
            self._ids[symbol] = sid
        return sid

    def id_of(self, symbol: str) -> int | None:
        return self._ids.get(symbol)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids


class Dataset:
    """Event sequences with an alphabet and an occurrence index.

    ``sequences`` holds lists of interned label ids. The occurrence index
    (label id -> list of (sequence, position)) is built lazily; it is what
    makes per-episode scans cheap, since only events whose label occurs in the
    episode can move its machine.
    """

    def __init__(self, sequences: list[list[int]], alphabet: Alphabet):
        self.sequences = sequences
        self.alphabet = alphabet
        self._occurrences: list[list[tuple[int, int]]] | None = None
        self._length_counts: dict[int, int] | None = None

    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    @property
    def total_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    def length_counts(self) -> dict[int, int]:
        if self._length_counts is None:
            counts: dict[int, int] = {}
            for s in self.sequences:
                counts[len(s)] = counts.get(len(s), 0) + 1
            self._length_counts = counts
        return self._length_counts

    def occurrences(self, label_id: int) -> list[tuple[int, int]]:
        if self._occurrences is None:
            occ: list[list[tuple[int, int]]] = [[] for _ in range(len(self.alphabet))]
            for i, seq in enumerate(self.sequences):
                for j, sid in enumerate(seq):
                    occ[sid].append((i, j))
            self._occurrences = occ
        if label_id < 0 or label_id >= len(self.alphabet):
            return []
        return self._occurrences[label_id]

    def relevant_events(self, label_ids: Sequence[int]) -> dict[int, list[tuple[int, int]]]:
        """Per-sequence sorted (position, label id) lists for the given labels."""
        touched: dict[int, list[tuple[int, int]]] = {}
        for lid in label_ids:
            for seq_idx, pos in self.occurrences(lid):
                touched.setdefault(seq_idx, []).append((pos, lid))
        for events in touched.values():
            events.sort()
        return touched

    def tokens(self, seq_idx: int) -> list[str]:
        return [self.alphabet.symbols[sid] for sid in self.sequences[seq_idx]]


def load_sequences(path: str) -> Dataset:
    """Read a whitespace-tokenized corpus, one sequence per line."""
    alphabet = Alphabet()
    sequences: list[list[int]] = []
    blank = 0
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                tokens = line.split()
                if not tokens:
                    blank += 1
                    continue
                sequences.append([alphabet.intern(t) for t in tokens])
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8: {exc}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if blank:
        logger.warning("%s: skipped %d blank line(s)", path, blank)
    return Dataset(sequences, alphabet)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Inverse of :func:`load_sequences`."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in dataset.sequences:
            fh.write(" ".join(dataset.alphabet.symbols[sid] for sid in seq) + "\n")


def dataset_from_strings(rows: Iterable[str]) -> Dataset:
    """Convenience constructor: each character of each string is one event."""
    alphabet = Alphabet()
    sequences = [[alphabet.intern(ch) for ch in row] for row in rows]
    return Dataset(sequences, alphabet)


def dataset_from_token_rows(rows: Iterable[Sequence[str]]) -> Dataset:
    alphabet = Alphabet()
    sequences = [[alphabet.intern(t) for t in row] for row in rows]
    return Dataset(sequences, alphabet)


# --- synthetic generators ----------------------------------------------------

@dataclass
class PlantSpec:
    """One pattern to write into the corpus ``count`` times."""

    episode: Episode
    count: int
    gap_p: float = 0.0


@dataclass
class GeneratorConfig:
    kind: str
    seed: int
    num_sequences: int
    length_range: tuple[int, int]
    noise_alphabet_size: int
    plants: list[PlantSpec] = field(default_factory=list)

    def validate(self) -> None:
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise DataError(f"bad length range {self.length_range}")
        for spec in self.plants:
            if spec.count < 0:
                raise DataError("plant count must be >= 0")
            if not (0.0 <= spec.gap_p < 1.0):
                raise DataError(f"gap probability {spec.gap_p} outside [0, 1)")
            if spec.count > self.num_sequences:
                raise DataError(
                    f"cannot place {spec.count} occurrences into "
                    f"{self.num_sequences} distinct sequences")
            if spec.gap_p == 0.0 and spec.episode.n > hi:
                raise DataError(
                    f"pattern of {spec.episode.n} events cannot fit into "
                    f"sequences of length <= {hi}")


DEFAULT_PLANT_COUNTS = (200, 20, 10)
DEFAULT_PLANT2_COUNTS = (400, 400)
DEFAULT_GAP_COUNT = 200


def plant_patterns() -> list[Episode]:
    """The serial 4-pattern, the serial 2-pattern and the diamond."""
    diamond = make_episode(["k", "n", "m", "l"], [(0, 1), (0, 2), (1, 3), (2, 3)])
    return [serial(["a", "b", "c", "d"]), serial(["e", "f"]), diamond]


def plant2_patterns() -> list[Episode]:
    return [serial(["a", "b", "c"]), serial(["d", "e", "f"])]


def gap_pattern() -> Episode:
    return serial(["a", "b", "c", "d"])


def default_config(kind: str, seed: int, num_sequences: int | None = None,
                   counts: Sequence[int] | None = None,
                   gap_p: float = 0.0) -> GeneratorConfig:
    """Standard configuration for one of the synthetic corpus kinds.

    Alphabet sizes keep noise symbols disjoint from planted labels, with a
    total alphabet of 1000 symbols in every kind.
    """
    if kind == "plant":
        patterns, def_counts, noise = plant_patterns(), DEFAULT_PLANT_COUNTS, 990
    elif kind == "plant2":
        patterns, def_counts, noise = plant2_patterns(), DEFAULT_PLANT2_COUNTS, 994
    elif kind == "gap":
        patterns, def_counts, noise = [gap_pattern()], (DEFAULT_GAP_COUNT,), 996
    else:
        raise DataError(f"unknown generator kind {kind!r}")
    counts = tuple(counts) if counts is not None else def_counts
    if len(counts) != len(patterns):
        raise DataError(f"{kind} takes {len(patterns)} plant counts, got {len(counts)}")
    plants = [PlantSpec(ep, c, gap_p if kind == "gap" else 0.0)
              for ep, c in zip(patterns, counts)]
    return GeneratorConfig(
        kind=kind,
        seed=seed,
        num_sequences=num_sequences if num_sequences is not None else 10_000,
        length_range=(20, 30),
        noise_alphabet_size=noise,
        plants=plants,
    )


def _linearization(episode: Episode, rng: np.random.Generator) -> list[int]:
    """Topological order of the episode, choosing uniformly among ready vertices."""
    preds = episode.predecessor_masks()
    placed = 0
    remaining = list(range(episode.n))
    order = []
    while remaining:
        ready = [v for v in remaining if preds[v] & ~placed == 0]
        v = ready[int(rng.integers(len(ready)))] if len(ready) > 1 else ready[0]
        order.append(v)
        placed |= 1 << v
        remaining.remove(v)
    return order


def generate(config: GeneratorConfig) -> Dataset:
    """Build a corpus of uniform noise with patterns written over it.

    Noise events are i.i.d. uniform over the noise alphabet. Each pattern
    occurrence goes into its own uniformly chosen sequence (distinct within one
    pattern spec), starting at a uniform feasible position; consecutive pattern
    events are separated by Geometric(p) noise positions and the occurrence is
    abandoned if it runs past the sequence end. Planted labels never appear as
    noise.
    """
    config.validate()
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    lo, hi = config.length_range

    alphabet = Alphabet(f"n{i:03d}" for i in range(config.noise_alphabet_size))
    lengths = rng.integers(lo, hi + 1, size=config.num_sequences)
    noise = config.noise_alphabet_size
    sequences = [list(rng.integers(0, noise, size=int(k))) for k in lengths]

    for spec in config.plants:
        pattern_ids = [alphabet.intern(lab) for lab in spec.episode.labels]
        targets = rng.choice(config.num_sequences, size=spec.count, replace=False)
        for seq_idx in targets:
            seq = sequences[int(seq_idx)]
            order = _linearization(spec.episode, rng)
            k = len(order)
            if len(seq) < k:
                continue
            start = int(rng.integers(0, len(seq) - k + 1))
            positions = [start]
            for _ in range(k - 1):
                gap = int(rng.geometric(1.0 - spec.gap_p)) - 1
                positions.append(positions[-1] + 1 + gap)
            if positions[-1] >= len(seq):
                continue  # does not fit: leave the sequence untouched
            for vertex, pos in zip(order, positions):
                seq[pos] = pattern_ids[vertex]

    return Dataset(sequences, alphabet)
