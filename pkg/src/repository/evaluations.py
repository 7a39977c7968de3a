import json

from src.database.db import EvaluationStore
from src.schemas import EvalRecord


def make_key(fingerprint: str, alpha, unit_point) -> str:
    """
    Build the identity of an evaluation request.

    Point identity is the exact bit pattern of the normalized coordinates; Python's float
    repr round-trips through JSON, so no fuzzy matching happens anywhere.

    :param fingerprint: Model fingerprint (name, seed, noise, cost model or solver command).
    :type fingerprint: str
    :param alpha: Fidelity multi-index.
    :type alpha: tuple[int, ...]
    :param unit_point: Coordinates on the unit hypercube.
    :type unit_point: Iterable[float]
    :return: The cache key.
    :rtype: str
    """
    return json.dumps([fingerprint, [int(a) for a in alpha], [float(u) for u in unit_point]])


async def get_record(key: str, db: EvaluationStore) -> EvalRecord | None:
    """
    Retrieves a cached evaluation.

    :param key: Request identity from :func:`make_key`.
    :type key: str
    :param db: The evaluation store.
    :type db: EvaluationStore
    :return: The cached record, or None if the request was never evaluated.
    :rtype: EvalRecord | None
    """
    row = db.get(key)
    return EvalRecord.model_validate(row) if row is not None else None


async def add_record(key: str, record: EvalRecord, db: EvaluationStore) -> EvalRecord:
    """
    Stores a model evaluation. Provisional records are never persisted.

    :param key: Request identity from :func:`make_key`.
    :type key: str
    :param record: The evaluation to store.
    :type record: EvalRecord
    :param db: The evaluation store.
    :type db: EvaluationStore
    :return: The stored record.
    :rtype: EvalRecord
    """
    if record.provisional:
        raise ValueError("provisional records cannot be cached")
    db.put(key, record.model_dump(mode="json"))
    return record
