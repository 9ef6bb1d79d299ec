"""Input validation helpers used at public API boundaries."""
import numpy as np

from .exceptions import ContractViolation


def check_entity_id(kg, e, name="entity"):
    e = int(e)
    if not 0 <= e < kg.n_entities:
        raise ContractViolation(
            f"{name} id {e} out of range [0, {kg.n_entities})")
    return e


def check_relation_id(n_relations, r, name="relation"):
    r = int(r)
    if not 0 <= r < n_relations:
        raise ContractViolation(
            f"{name} id {r} out of range [0, {n_relations})")
    return r


def check_positive(value, name, allow_zero=False):
    if allow_zero:
        if value < 0:
            raise ContractViolation(f"{name} must be >= 0, got {value}")
    elif value <= 0:
        raise ContractViolation(f"{name} must be > 0, got {value}")
    return value


def check_vector(vec, width, name="vector"):
    """Return `vec` as a 1-d array, checking its component count."""
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.shape[0] != width:
        raise ContractViolation(
            f"{name} has shape {vec.shape}, expected ({width},)")
    return vec


def check_triples(triples, n_entities, n_relations):
    """Coerce to an (n, 3) int64 array of valid (head, relation, tail) ids."""
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractViolation(f"triples must have shape (n, 3), got {arr.shape}")
    ents = arr[:, [0, 2]]
    if ents.min() < 0 or ents.max() >= n_entities:
        raise ContractViolation("triple references an unknown entity id")
    if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_relations:
        raise ContractViolation("triple references an unknown relation id")
    return arr


def as_real_view(vec):
    """Flatten a complex vector into interleaved (real, imaginary) reals."""
    vec = np.asarray(vec)
    if np.iscomplexobj(vec):
        return np.ascontiguousarray(vec, dtype=np.complex128).view(np.float64)
    return vec.astype(np.float64, copy=False)
