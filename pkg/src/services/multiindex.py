"""
Multi-index arithmetic and the index-set machinery behind the adaptive loop.

Indices are 1-based tuples of positive integers; physical components come first,
parametric components after them.
"""
import json
from itertools import product
from typing import Iterable, Iterator

from src.errors import StructuralError

MultiIndex = tuple[int, ...]


def shift(index: MultiIndex, direction: int, step: int = 1) -> MultiIndex:
    return tuple(c + step if k == direction else c for k, c in enumerate(index))


def binary_offsets(length: int) -> Iterator[tuple[int, ...]]:
    """
    All vectors of {0, 1}^length in lexicographic order.
    """
    return product((0, 1), repeat=length)


class IndexSet:
    """
    Immutable finite set of multi-indices of equal length.

    Iteration is in lexicographic order. The ``downward_closed`` flag is computed on
    construction and carried along by :meth:`add`.

    :param members: Multi-indices of the set.
    :type members: Iterable[MultiIndex]
    """

    __slots__ = ("_members", "_length", "_closed")

    def __init__(self, members: Iterable[MultiIndex] = (), _closed: bool | None = None):
        self._members = frozenset(tuple(int(c) for c in m) for m in members)
        lengths = {len(m) for m in self._members}
        if len(lengths) > 1:
            raise StructuralError(f"mixed index lengths {sorted(lengths)}")
        self._length = lengths.pop() if lengths else None
        for member in self._members:
            if any(c < 1 for c in member):
                raise StructuralError(f"index {member} has a component below 1")
        self._closed = _closed if _closed is not None else self._check_closed()

    def _check_closed(self) -> bool:
        for member in self._members:
            for j, c in enumerate(member):
                if c > 1 and shift(member, j, -1) not in self._members:
                    return False
        return True

    @property
    def length(self) -> int | None:
        return self._length

    @property
    def downward_closed(self) -> bool:
        return self._closed

    def add(self, index: MultiIndex) -> "IndexSet":
        """
        Return a new set with ``index`` inserted; closedness is updated incrementally.
        """
        index = tuple(index)
        if index in self._members:
            return self
        if self._length is not None and len(index) != self._length:
            raise StructuralError(f"index {index} does not have length {self._length}")
        if not self._closed:
            # the new member may fill the gap that kept the set open
            return IndexSet(self._members | {index})
        closed = all(c == 1 or shift(index, j, -1) in self._members for j, c in enumerate(index))
        return IndexSet(self._members | {index}, _closed=closed)

    def difference(self, other: Iterable[MultiIndex]) -> "IndexSet":
        return IndexSet(self._members - frozenset(tuple(m) for m in other))

    def __contains__(self, index) -> bool:
        return tuple(index) in self._members

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(sorted(self._members))

    def __len__(self) -> int:
        return len(self._members)

    def __eq__(self, other) -> bool:
        if isinstance(other, IndexSet):
            return self._members == other._members
        return NotImplemented

    def __hash__(self):
        return hash(self._members)

    def __repr__(self):
        return f"IndexSet({sorted(self._members)})"

    def to_json(self) -> str:
        """
        Serialize as a JSON array of arrays, lexicographically ordered.
        """
        return json.dumps([list(m) for m in self])

    @classmethod
    def from_json(cls, text: str) -> "IndexSet":
        return cls(tuple(m) for m in json.loads(text))


def _require_closed(s: IndexSet):
    if len(s) == 0:
        raise StructuralError("index set is empty")
    if not s.downward_closed:
        raise StructuralError(f"{s!r} is not downward closed")


def is_downward_closed(s: IndexSet) -> bool:
    """
    Check that every member's backward neighbours belong to the set.

    :param s: Non-empty index set.
    :type s: IndexSet
    :return: True if the set is downward closed.
    :rtype: bool
    """
    if len(s) == 0:
        raise StructuralError("index set is empty")
    return s.downward_closed


def margin(s: IndexSet) -> IndexSet:
    """
    Indices reachable from ``s`` within one forward step, excluding ``s`` itself.

    :param s: Downward closed index set.
    :type s: IndexSet
    :return: The margin of ``s``.
    :rtype: IndexSet
    """
    _require_closed(s)
    reached = {shift(member, k) for member in s for k in range(s.length)}
    return IndexSet(reached).difference(s)


def reduced_margin(s: IndexSet) -> IndexSet:
    """
    Margin members whose insertion keeps ``s`` downward closed.

    :param s: Downward closed index set.
    :type s: IndexSet
    :return: The reduced margin of ``s``.
    :rtype: IndexSet
    """
    admissible = [
        index for index in margin(s)
        if all(c == 1 or shift(index, j, -1) in s for j, c in enumerate(index))
    ]
    return IndexSet(admissible)


def box(top: MultiIndex) -> IndexSet:
    """
    Full box of all indices componentwise below or equal to ``top``.
    """
    return IndexSet(product(*(range(1, c + 1) for c in top)))
