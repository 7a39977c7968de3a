import json
import logging
from pathlib import Path

from src.conf.config import settings

logger = logging.getLogger(__name__)


class EvaluationStore:
    """
    Append-only JSON-lines store of model evaluations, keyed by request identity.

    Existing files are replayed on open so interrupted runs resume without re-running
    the solver. With ``path=None`` the store lives in memory only.

    :param path: Location of the JSON-lines file.
    :type path: Path | None
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self._rows: dict[str, dict] = {}
        self._handle = None
        if self.path is not None:
            self._replay()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("a", encoding="utf-8")

    def _replay(self):
        if not self.path.exists():
            return
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    self._rows[row["key"]] = row["record"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    logger.warning("skipping malformed cache line %d in %s", lineno, self.path)
        logger.info("replayed %d cached evaluations from %s", len(self._rows), self.path)

    def get(self, key: str) -> dict | None:
        return self._rows.get(key)

    def put(self, key: str, record: dict) -> None:
        if key in self._rows:
            return
        self._rows[key] = record
        if self._handle is not None:
            self._handle.write(json.dumps({"key": key, "record": record}, sort_keys=True) + "\n")
            self._handle.flush()

    def keys(self):
        return self._rows.keys()

    def __len__(self):
        return len(self._rows)

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None


# Dependency
def get_store(path: Path | None = None):
    store = EvaluationStore(path if path is not None else settings.cache)
    try:
        yield store
    finally:
        store.close()
