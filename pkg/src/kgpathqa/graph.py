"""Knowledge graph storage: loading, inverse augmentation, adjacency, halving.

Relation ids follow a paired convention: the k-th distinct relation string
receives id ``2k`` and its inverse ``2k + 1``, so ``inverse`` is a bit flip.
Stored triples always carry the even (original) id; the inverse direction
lives only in the adjacency index and in :meth:`KnowledgeGraph.augmented_triples`.
"""
import io
import json
import struct

import numpy as np

from .exceptions import ContractViolation, FormatError, ParseError

INVERSE_SUFFIX = "^-1"
GRAPH_MAGIC = b"KGPQGRPH"
GRAPH_FORMAT_VERSION = 1


def inverse(r):
    """Return the id paired with relation ``r`` (an involution)."""
    return int(r) ^ 1


class KnowledgeGraph:
    """Immutable multi-relational graph over dense entity/relation ids.

    Parameters
    ----------
    entities : sequence of str
        Entity surface strings; position is the entity id.
    relation_names : sequence of str
        Original (non-inverse) relation strings; the k-th gets id ``2k``.
    triples : array-like of shape (n, 3)
        ``(head, relation, tail)`` rows using even relation ids.

    Attributes
    ----------
    relations : tuple of str
        Augmented relation vocabulary, ``2 * len(relation_names)`` entries.
    triples : ndarray of shape (n, 3)
        Deduplicated, read-only.
    """

    def __init__(self, entities, relation_names, triples):
        self.entities = tuple(entities)
        self.relation_names = tuple(relation_names)
        rels = []
        for name in self.relation_names:
            rels.extend((name, name + INVERSE_SUFFIX))
        self.relations = tuple(rels)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities):
            raise ContractViolation("duplicate entity names")
        if len(self.relation_index) != len(self.relations):
            raise ContractViolation("duplicate relation names")

        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(arr):
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= len(self.entities):
                raise ContractViolation("triple references an unknown entity id")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= len(self.relations):
                raise ContractViolation("triple references an unknown relation id")
            if np.any(arr[:, 1] & 1):
                raise ContractViolation("stored triples must use original (even) relation ids")
            _, first = np.unique(arr, axis=0, return_index=True)
            arr = arr[np.sort(first)]
        arr.setflags(write=False)
        self.triples = arr
        self._build_adjacency()

    def _build_adjacency(self):
        aug = self.augmented_triples()
        # sort by (source, relation, target) so neighbors() is deterministic
        order = np.lexsort((aug[:, 2], aug[:, 1], aug[:, 0]))
        aug = aug[order]
        counts = np.bincount(aug[:, 0], minlength=self.n_entities)
        self._indptr = np.concatenate([[0], np.cumsum(counts)])
        self._edge_rel = aug[:, 1].copy()
        self._edge_ent = aug[:, 2].copy()
        for a in (self._indptr, self._edge_rel, self._edge_ent):
            a.setflags(write=False)

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    @property
    def n_triples(self):
        return len(self.triples)

    @property
    def n_edges(self):
        return len(self._edge_rel)

    def augmented_triples(self):
        """Stored triples followed by their inverse copies ``(t, r^-1, h)``."""
        t = self.triples
        inv = np.stack([t[:, 2], t[:, 1] ^ 1, t[:, 0]], axis=1)
        return np.concatenate([t, inv]).reshape(-1, 3)

    def neighbors(self, e):
        """Outgoing ``(relation, entity)`` edges of ``e``, sorted."""
        lo, hi = self._indptr[e], self._indptr[e + 1]
        return list(zip(self._edge_rel[lo:hi].tolist(), self._edge_ent[lo:hi].tolist()))

    def neighbor_arrays(self, e):
        lo, hi = self._indptr[e], self._indptr[e + 1]
        return self._edge_rel[lo:hi], self._edge_ent[lo:hi]

    def with_triples(self, triples):
        """New graph over the same vocabularies with a different triple set."""
        return KnowledgeGraph(self.entities, self.relation_names, triples)

    def relation_label(self, r):
        return self.relations[r]

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entities == other.entities
                and self.relation_names == other.relation_names
                and np.array_equal(self.triples, other.triples))

    __hash__ = None

    def __repr__(self):
        return (f"KnowledgeGraph(entities={self.n_entities}, "
                f"relations={self.n_relations}, triples={self.n_triples})")


def neighbors(kg, e):
    """Functional alias for :meth:`KnowledgeGraph.neighbors`."""
    return kg.neighbors(e)


def load_kb(source):
    """Parse ``head|relation|tail`` lines into an inverse-augmented graph.

    Parameters
    ----------
    source : str, path-like or text stream
        A path, or any iterable of lines.

    Raises
    ------
    ParseError
        On a line without exactly three non-empty ``|``-separated fields,
        or when the input holds no triples.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            return _parse_kb_lines(fh)
    return _parse_kb_lines(source)


def _parse_kb_lines(lines):
    entities, relations, rows = {}, {}, []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 3:
            raise ParseError(f"expected 3 '|'-separated fields, got {len(fields)}", lineno)
        if not all(fields):
            raise ParseError("empty field", lineno)
        h, r, t = fields
        hid = entities.setdefault(h, len(entities))
        rid = relations.setdefault(r, len(relations))
        tid = entities.setdefault(t, len(entities))
        rows.append((hid, 2 * rid, tid))
    if not rows:
        raise ParseError("empty knowledge graph")
    return KnowledgeGraph(list(entities), list(relations), rows)


def dump_kb(kg, stream):
    """Write stored triples back out in the ``head|relation|tail`` format."""
    for h, r, t in kg.triples.tolist():
        stream.write(f"{kg.entities[h]}|{kg.relations[r]}|{kg.entities[t]}\n")


def subsample_half(kg, seed=42):
    """Keep ``floor(N / 2)`` triples chosen uniformly without replacement.

    Vocabularies are untouched, so entities may become isolated.
    """
    if kg.n_triples == 0:
        raise ContractViolation("cannot halve an empty knowledge graph")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(kg.n_triples, size=kg.n_triples // 2, replace=False))
    return kg.with_triples(kg.triples[keep])


def save_graph(kg, path):
    header = json.dumps({"entities": kg.entities,
                         "relations": kg.relation_names}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<BQQ", GRAPH_FORMAT_VERSION, len(header), kg.n_triples))
        fh.write(header)
        fh.write(kg.triples.astype("<i8").tobytes())


def load_graph(path):
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(len(GRAPH_MAGIC)) != GRAPH_MAGIC:
        raise FormatError(f"{path}: not a serialized knowledge graph")
    version, hlen, n = struct.unpack("<BQQ", buf.read(17))
    if version != GRAPH_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported graph format version {version}")
    header = json.loads(buf.read(hlen).decode("utf-8"))
    triples = np.frombuffer(buf.read(24 * n), dtype="<i8").reshape(n, 3)
    return KnowledgeGraph(header["entities"], header["relations"], triples)
