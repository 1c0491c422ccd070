"""Class-taxonomy parsing and the flattened hierarchy graph.

A taxonomy is a tree of class names organized in ``h`` levels, level 1 being
the coarsest. The flattened node ordering used everywhere downstream is
level-major (all level-1 nodes first, then level-2, ...), with file order
preserved within a level, so that per-level logits are contiguous slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ParseError, ValidationError


class TaxonomySource(Enum):
    GROUND_TRUTH = "ground_truth"
    LLM_GENERATED = "llm_generated"


@dataclass(frozen=True)
class Taxonomy:
    """Validated class tree.

    ``names[i]`` lists the classes of level ``i+1`` in file order.
    ``parent_of[i][j]`` is the within-level index of the parent (at level
    ``i``) of node ``j`` at level ``i+1``; ``parent_of[0]`` covers level 2.
    """

    levels: int
    names: tuple[tuple[str, ...], ...]
    parent_of: tuple[tuple[int, ...], ...]
    source: TaxonomySource = TaxonomySource.GROUND_TRUTH

    def __post_init__(self):
        if self.levels < 1 or len(self.names) != self.levels:
            raise ValidationError(f"expected {self.levels} levels, got {len(self.names)} name lists")
        if len(self.parent_of) != self.levels - 1:
            raise ValidationError("parent links must cover every level below the first")
        for i, level_names in enumerate(self.names):
            if not level_names:
                raise ValidationError(f"level {i + 1} has no classes")
            if len(set(level_names)) != len(level_names):
                raise ValidationError(f"duplicate class name within level {i + 1}")
        for i, links in enumerate(self.parent_of):
            if len(links) != len(self.names[i + 1]):
                raise ValidationError(f"level {i + 2} has {len(self.names[i + 1])} nodes but {len(links)} parent links")
            for j, p in enumerate(links):
                if not 0 <= p < len(self.names[i]):
                    raise ValidationError(f"node {self.names[i + 1][j]!r} references a nonexistent parent")
        # Every non-leaf node must have at least one child.
        for i in range(self.levels - 1):
            childless = set(range(len(self.names[i]))) - set(self.parent_of[i])
            if childless:
                missing = ", ".join(self.names[i][j] for j in sorted(childless))
                raise ValidationError(f"non-leaf classes without children at level {i + 1}: {missing}")

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(n) for n in self.names)

    @property
    def num_nodes(self) -> int:
        return sum(self.level_sizes)

    def ancestor_at(self, level: int, index: int, target_level: int) -> int:
        """Within-level index of the ancestor of node (level, index) at a coarser level."""
        if not 1 <= target_level <= level <= self.levels:
            raise IndexError(f"invalid level pair ({level}, {target_level})")
        idx = index
        for lv in range(level, target_level, -1):
            idx = self.parent_of[lv - 2][idx]
        return idx

    def ancestor_path(self, leaf_index: int) -> tuple[int, ...]:
        """Per-level indices of the ancestor chain of a leaf, root level first."""
        return tuple(self.ancestor_at(self.levels, leaf_index, lv) for lv in range(1, self.levels + 1))

    def children_of(self, level: int, index: int) -> tuple[int, ...]:
        """Within-level indices of the children (at level+1) of node (level, index)."""
        if not 1 <= level < self.levels:
            raise IndexError(f"level {level} has no child level")
        return tuple(j for j, p in enumerate(self.parent_of[level - 1]) if p == index)

    def leaf_descendants(self, level: int, index: int) -> tuple[int, ...]:
        """Leaf-level indices of all leaves under node (level, index)."""
        if level == self.levels:
            return (index,)
        frontier = [index]
        for lv in range(level, self.levels):
            links = self.parent_of[lv - 1]
            keep = set(frontier)
            frontier = [j for j, p in enumerate(links) if p in keep]
        return tuple(frontier)


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse the line-oriented taxonomy format into a validated Taxonomy.

    Format: a ``#levels <h>`` header, an optional ``#source llm`` flag, other
    ``#``-prefixed lines are comments; one ``<level>\\t<name>\\t<parent|->``
    line per node.
    """
    levels = None
    source = TaxonomySource.GROUND_TRUTH
    rows: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            fields = line[1:].split()
            if fields and fields[0] == "levels":
                if levels is not None:
                    raise ParseError(f"line {lineno}: duplicate #levels header")
                try:
                    levels = int(fields[1])
                except (IndexError, ValueError):
                    raise ParseError(f"line {lineno}: malformed #levels header") from None
                if levels < 1:
                    raise ParseError(f"line {lineno}: #levels must be >= 1")
            elif fields and fields[0] == "source":
                if len(fields) > 1 and fields[1] == "llm":
                    source = TaxonomySource.LLM_GENERATED
            continue
        if levels is None:
            raise ParseError(f"line {lineno}: node line before #levels header")
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            level = int(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: level is not an integer") from None
        name, parent = parts[1].strip(), parts[2].strip()
        if not name:
            raise ParseError(f"line {lineno}: empty class name")
        if not 1 <= level <= levels:
            raise ValidationError(f"line {lineno}: level {level} outside 1..{levels}")
        rows.append((level, name, parent))
    if levels is None:
        raise ParseError("missing #levels header")

    names: list[list[str]] = [[] for _ in range(levels)]
    parents_by_name: list[list[str]] = [[] for _ in range(levels)]
    for level, name, parent in rows:
        names[level - 1].append(name)
        parents_by_name[level - 1].append(parent)

    for i, level_names in enumerate(names):
        if not level_names:
            raise ValidationError(f"level count mismatch: level {i + 1} has no classes")

    parent_of: list[tuple[int, ...]] = []
    for i in range(levels):
        if i == 0:
            for name, parent in zip(names[0], parents_by_name[0]):
                if parent != "-":
                    raise ValidationError(f"level-1 class {name!r} must use '-' as parent")
            continue
        lookup = {n: j for j, n in enumerate(names[i - 1])}
        links = []
        for name, parent in zip(names[i], parents_by_name[i]):
            if parent == "-":
                raise ValidationError(f"class {name!r} at level {i + 1} is an orphan")
            if parent not in lookup:
                raise ValidationError(f"class {name!r} references nonexistent parent {parent!r}")
            links.append(lookup[parent])
        parent_of.append(tuple(links))

    return Taxonomy(
        levels=levels,
        names=tuple(tuple(n) for n in names),
        parent_of=tuple(parent_of),
        source=source,
    )


def serialize_taxonomy(t: Taxonomy) -> str:
    """Render a Taxonomy back into the taxonomy file format (round-trip safe)."""
    lines = [f"#levels {t.levels}"]
    if t.source is TaxonomySource.LLM_GENERATED:
        lines.append("#source llm")
    for i, level_names in enumerate(t.names):
        for j, name in enumerate(level_names):
            parent = "-" if i == 0 else t.names[i - 1][t.parent_of[i - 1][j]]
            lines.append(f"{i + 1}\t{name}\t{parent}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class HierGraph:
    """Flattened node set of a taxonomy with parent-child adjacency.

    Nodes are ordered level-major; ``level_ranges[i]`` is the half-open
    global-index range of level ``i+1``. The adjacency matrix is symmetric
    with a zero diagonal (encoders add self-loops themselves).
    """

    taxonomy: Taxonomy
    adjacency: np.ndarray = field(repr=False)
    level_of: tuple[int, ...]
    level_ranges: tuple[tuple[int, int], ...]

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    def global_index(self, level: int, index: int) -> int:
        start, stop = self.level_slice(level)
        if not 0 <= index < stop - start:
            raise IndexError(f"index {index} outside level {level}")
        return start + index

    def level_slice(self, level: int) -> tuple[int, int]:
        """Half-open global-index range [start, stop) of one level."""
        if not 1 <= level <= len(self.level_ranges):
            raise IndexError(f"level {level} outside 1..{len(self.level_ranges)}")
        return self.level_ranges[level - 1]


def build_graph(t: Taxonomy) -> HierGraph:
    """Construct the hierarchy graph: one symmetric edge per parent-child link."""
    sizes = t.level_sizes
    total = sum(sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    adjacency = np.zeros((total, total), dtype=bool)
    for i, links in enumerate(t.parent_of):
        child_base = starts[i + 1]
        parent_base = starts[i]
        for j, p in enumerate(links):
            a, b = child_base + j, parent_base + p
            adjacency[a, b] = adjacency[b, a] = True
    level_of = tuple(i + 1 for i, k in enumerate(sizes) for _ in range(k))
    ranges = tuple((int(starts[i]), int(starts[i + 1])) for i in range(t.levels))
    return HierGraph(taxonomy=t, adjacency=adjacency, level_of=level_of, level_ranges=ranges)


def level_slice(g: HierGraph, level: int) -> tuple[int, int]:
    """Module-level alias of :meth:`HierGraph.level_slice`."""
    return g.level_slice(level)
