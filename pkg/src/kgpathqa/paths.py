"""Shortest relation paths and their composition into path embeddings."""
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .kge import KgeFamily
from .validation import check_entity_id, check_positive


@dataclass(frozen=True)
class RelationPath:
    """Relation ids walked forward from ``source`` to ``target``."""

    relations: tuple
    source: int
    target: int

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(int(r) for r in self.relations))

    def __len__(self):
        return len(self.relations)


def bfs_distances(kg, source, max_depth):
    """Hop distance from ``source`` to every entity, ``-1`` beyond ``max_depth``."""
    dist = np.full(kg.n_entities, -1, dtype=np.int64)
    dist[source] = 0
    frontier = [source]
    for depth in range(1, max_depth + 1):
        nxt = []
        for v in frontier:
            _, ents = kg.neighbor_arrays(v)
            for u in ents.tolist():
                if dist[u] < 0:
                    dist[u] = depth
                    nxt.append(u)
        if not nxt:
            break
        frontier = nxt
    return dist


def _enumerate(kg, source, target, from_source, to_target, length, cap):
    """Distinct relation sequences along the shortest-path DAG, lexicographic.

    Works on sets of frontier entities per relation prefix so that each
    distinct relation sequence is produced exactly once.
    """
    out = []

    def expand(prefix, nodes, depth):
        if len(out) >= cap:
            return
        if depth == length:
            out.append(RelationPath(prefix, source, target))
            return
        groups = {}
        for v in nodes:
            rels, ents = kg.neighbor_arrays(v)
            for r, u in zip(rels.tolist(), ents.tolist()):
                if from_source[u] == depth + 1 and to_target[u] == length - depth - 1:
                    groups.setdefault(r, set()).add(u)
        for r in sorted(groups):
            expand(prefix + (r,), groups[r], depth + 1)
            if len(out) >= cap:
                return

    expand((), {source}, 0)
    return out


class PathIndex:
    """Shortest-path queries from one fixed source, reusing its BFS layer map."""

    def __init__(self, kg, source, max_hops=3):
        self.kg = kg
        self.source = int(source)
        self.max_hops = max_hops
        self.distances = bfs_distances(kg, self.source, max_hops)

    def paths_to(self, target, cap=16):
        target = int(target)
        length = int(self.distances[target])
        if length <= 0:
            return []
        to_target = bfs_distances(self.kg, target, length)
        return _enumerate(self.kg, self.source, target, self.distances, to_target, length, cap)


def shortest_relation_paths(kg, source, target, max_hops=3, cap=16):
    """All distinct minimal-length relation paths ``source -> target``.

    Searches the inverse-augmented multigraph breadth first. Returns at most
    ``cap`` paths in lexicographic relation-id order, or ``[]`` when the
    endpoints coincide or are more than ``max_hops`` apart.
    """
    source = check_entity_id(kg, source, "source")
    target = check_entity_id(kg, target, "target")
    check_positive(max_hops, "max_hops")
    check_positive(cap, "cap")
    if source == target:
        return []
    return PathIndex(kg, source, max_hops).paths_to(target, cap)


def compose_relations(family, vectors):
    """Fold relation vectors: sum for additive, componentwise product otherwise."""
    vectors = np.asarray(vectors)
    if len(vectors) == 0:
        raise ContractViolation("cannot compose an empty path")
    if KgeFamily(family) is KgeFamily.ADDITIVE:
        return vectors.sum(axis=0)
    return np.prod(vectors, axis=0)


def path_embedding(model, path):
    """Embed a relation path in the model's relation space."""
    rels = path.relations if isinstance(path, RelationPath) else tuple(path)
    if not rels:
        raise ContractViolation("empty relation path")
    for r in rels:
        if not 0 <= r < model.n_relations:
            raise ContractViolation(f"relation id {r} out of range")
    return compose_relations(model.family, model.relation_table[list(rels)])


def realize_path(kg, path):
    """First entity sequence (in neighbor order) that walks ``path``."""
    def walk(v, i):
        if i == len(path.relations):
            return [v] if v == path.target else None
        for r, u in kg.neighbors(v):
            if r == path.relations[i]:
                rest = walk(u, i + 1)
                if rest is not None:
                    return [v] + rest
        return None

    nodes = walk(path.source, 0)
    if nodes is None:
        raise ContractViolation("path is not realizable in this graph")
    return nodes


def render_relations(kg, path):
    """``rel1 → rel2^-1`` style rendering."""
    return " → ".join(kg.relations[r] for r in path.relations)


def render_chain(kg, path):
    """``topic --rel1--> e1 --rel2^-1--> answer`` style rendering."""
    nodes = realize_path(kg, path)
    parts = [kg.entities[nodes[0]]]
    for r, v in zip(path.relations, nodes[1:]):
        parts.append(f"--{kg.relations[r]}--> {kg.entities[v]}")
    return " ".join(parts)

