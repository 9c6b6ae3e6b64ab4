import hashlib
import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from cantortree.errors import InvalidVertexError, NoParentError, \
    UnsupportedError

ROOT_TOKEN = 'ROOT'


@dataclass(frozen=True, order=True)
class Vertex:
    address: Tuple[int, ...] = ()

    @property
    def level(self) -> int:
        return len(self.address)

    @property
    def is_root(self) -> bool:
        return not self.address

    def child(self, digit: int) -> 'Vertex':
        return Vertex(self.address + (digit,))

    def prefix(self, level: int) -> 'Vertex':
        return Vertex(self.address[:level])

    def is_ancestor_of(self, other: 'Vertex') -> bool:
        # Inclusive: every vertex is its own ancestor
        return other.address[:len(self.address)] == self.address

    def serialize(self, branching: int) -> str:
        if not self.address:
            return ROOT_TOKEN
        if branching <= 10:
            return ''.join(str(d) for d in self.address)
        return ','.join(str(d) for d in self.address)

    @classmethod
    def parse(cls, text: str, branching: int) -> 'Vertex':
        text = text.strip()
        if text in (ROOT_TOKEN, ''):
            return ROOT
        try:
            if branching <= 10:
                return cls(tuple(int(c) for c in text))
            return cls(tuple(int(c) for c in text.split(',')))
        except ValueError:
            raise InvalidVertexError(f'Invalid vertex address: "{text}"')

    def __str__(self):
        return self.serialize(10)


ROOT = Vertex()


@dataclass(frozen=True)
class GeodesicPath:
    vertices: Tuple[Vertex, ...]

    @property
    def length(self) -> int:
        return len(self.vertices) - 1

    def __iter__(self):
        return iter(self.vertices)

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, item):
        return self.vertices[item]

    def __contains__(self, item):
        return item in self.vertices


def lca(x: Vertex, y: Vertex) -> Vertex:
    common = 0
    for a, b in zip(x.address, y.address):
        if a != b:
            break
        common += 1
    return x.prefix(common)


def comb_distance(x: Vertex, y: Vertex) -> int:
    return x.level + y.level - 2 * lca(x, y).level


def geodesic(x: Vertex, y: Vertex) -> GeodesicPath:
    meet = lca(x, y).level
    up = [x.prefix(n) for n in range(x.level, meet - 1, -1)]
    down = [y.prefix(n) for n in range(meet + 1, y.level + 1)]
    return GeodesicPath(tuple(up + down))


class BranchingRule(ABC):
    min_children: int
    max_children: int

    @abstractmethod
    def __call__(self, address: Tuple[int, ...]) -> int:
        pass


class HashedBranching(BranchingRule):
    """Child counts drawn from [min, max] by hashing the address."""

    def __init__(self, min_children: int, max_children: int, salt: int = 0):
        if not 1 <= min_children <= max_children:
            raise InvalidVertexError(
                f'Invalid child-count range [{min_children}, {max_children}]'
            )
        self.min_children = min_children
        self.max_children = max_children
        self.salt = salt

    def __call__(self, address: Tuple[int, ...]) -> int:
        spread = self.max_children - self.min_children + 1
        if spread == 1:
            return self.min_children
        digest = hashlib.blake2b(
            f'{self.salt}:{address}'.encode('utf-8'), digest_size=8
        ).digest()
        return self.min_children + int.from_bytes(digest, 'big') % spread


class RootedHomogeneous(BranchingRule):
    """Every vertex has the same degree: the root gets one extra child."""

    def __init__(self, children: int):
        self.min_children = children
        self.max_children = children + 1

    def __call__(self, address: Tuple[int, ...]) -> int:
        return self.max_children if not address else self.min_children


class TreeSpec:
    def __init__(
            self,
            depth: int,
            branching: int = 2,
            rule: Optional[BranchingRule] = None
    ):
        if int(depth) != depth or depth < 1:
            raise InvalidVertexError(f'Invalid truncation depth {depth}')
        if rule is None and (int(branching) != branching or branching < 1):
            raise InvalidVertexError(f'Invalid branching {branching}')
        self.depth = int(depth)
        self.rule = rule
        self.branching = int(branching) if rule is None \
            else rule.max_children

    @property
    def regular(self) -> bool:
        return self.rule is None \
            or self.rule.min_children == self.rule.max_children

    @property
    def max_branching(self) -> int:
        return self.branching

    @property
    def min_branching(self) -> int:
        return self.branching if self.rule is None \
            else self.rule.min_children

    def with_depth(self, depth: int) -> 'TreeSpec':
        return TreeSpec(depth, self.branching, self.rule)

    def child_count(self, v: Vertex) -> int:
        if self.rule is None:
            return self.branching
        return self.rule(v.address)

    def require_regular(self, what: str) -> None:
        if not self.regular:
            raise UnsupportedError(f'{what} requires a regular tree')

    def require_perfect(self, what: str) -> None:
        if self.min_branching < 2:
            raise UnsupportedError(
                f'{what} requires at least two children per vertex'
            )

    def validate(self, v: Vertex) -> Vertex:
        if v.level > self.depth:
            raise InvalidVertexError(
                f'Vertex {v} lies below truncation depth {self.depth}'
            )
        for n, digit in enumerate(v.address):
            if not 0 <= digit < self.child_count(v.prefix(n)):
                raise InvalidVertexError(f'Invalid vertex address {v}')
        return v

    def parent(self, v: Vertex) -> Vertex:
        self.validate(v)
        if v.is_root:
            raise NoParentError('The root has no parent')
        return v.prefix(v.level - 1)

    def children(self, v: Vertex) -> List[Vertex]:
        self.validate(v)
        if v.level >= self.depth:
            raise InvalidVertexError(
                f'Children of {v} lie below truncation depth {self.depth}'
            )
        return [v.child(d) for d in range(self.child_count(v))]

    def subtree_cells(self, x: Vertex, level: int) -> Iterator[Vertex]:
        self.validate(x)
        if not x.level <= level <= self.depth:
            raise InvalidVertexError(
                f'Level {level} outside [{x.level}, {self.depth}]'
            )
        if self.rule is None:
            for tail in itertools.product(
                    range(self.branching), repeat=level - x.level
            ):
                yield Vertex(x.address + tail)
            return
        stack = [x]
        while stack:
            v = stack.pop()
            if v.level == level:
                yield v
                continue
            stack.extend(
                v.child(d) for d in reversed(range(self.child_count(v)))
            )

    def vertices_at_level(self, level: int) -> Iterator[Vertex]:
        return self.subtree_cells(ROOT, level)

    def vertices(self, max_level: Optional[int] = None) -> Iterator[Vertex]:
        top = self.depth if max_level is None else max_level
        for level in range(top + 1):
            yield from self.vertices_at_level(level)

    def level_size(self, level: int) -> int:
        if self.rule is None:
            return self.branching ** level
        return sum(1 for _ in self.vertices_at_level(level))

    def index_of(self, v: Vertex) -> int:
        self.require_regular('Integer cell indices')
        index = 0
        for digit in v.address:
            index = index * self.branching + digit
        return index

    def vertex_at(self, level: int, index: int) -> Vertex:
        self.require_regular('Integer cell indices')
        digits = []
        for _ in range(level):
            index, digit = divmod(int(index), self.branching)
            digits.append(digit)
        return Vertex(tuple(reversed(digits)))

    def lca(self, x: Vertex, y: Vertex) -> Vertex:
        return lca(self.validate(x), self.validate(y))

    def comb_distance(self, x: Vertex, y: Vertex) -> int:
        return comb_distance(self.validate(x), self.validate(y))

    def geodesic(self, x: Vertex, y: Vertex) -> GeodesicPath:
        return geodesic(self.validate(x), self.validate(y))

    def serialize(self, v: Vertex) -> str:
        return v.serialize(self.branching)

    def parse(self, text: str) -> Vertex:
        return self.validate(Vertex.parse(text, self.branching))

    def __repr__(self):
        shape = f'K={self.branching}' if self.rule is None \
            else f'K in [{self.min_branching}, {self.max_branching}]'
        return f'TreeSpec({shape}, N={self.depth})'


def ancestor_index(
        level: np.ndarray, index: np.ndarray, target: int, branching: int
) -> np.ndarray:
    shift = np.maximum(np.asarray(level) - target, 0)
    return np.asarray(index) // np.power(branching, shift, dtype=np.int64)


def common_prefix_levels(
        level_a: np.ndarray,
        index_a: np.ndarray,
        level_b: np.ndarray,
        index_b: np.ndarray,
        branching: int
) -> np.ndarray:
    """Level of the lca of vertices given as (level, base-K index) arrays."""
    level_a, index_a, level_b, index_b = np.broadcast_arrays(
        np.asarray(level_a, dtype=np.int64),
        np.asarray(index_a, dtype=np.int64),
        np.asarray(level_b, dtype=np.int64),
        np.asarray(index_b, dtype=np.int64),
    )
    top = np.minimum(level_a, level_b)
    result = np.zeros(level_a.shape, dtype=np.int64)
    alive = np.ones(level_a.shape, dtype=bool)
    max_top = int(top.max()) if top.size else 0
    for k in range(1, max_top + 1):
        same = alive & (k <= top) & (
            ancestor_index(level_a, index_a, k, branching)
            == ancestor_index(level_b, index_b, k, branching)
        )
        result += same
        alive = same
        if not alive.any():
            break
    return result


def comb_distances(
        level_a: np.ndarray,
        index_a: np.ndarray,
        level_b: np.ndarray,
        index_b: np.ndarray,
        branching: int
) -> np.ndarray:
    meet = common_prefix_levels(level_a, index_a, level_b, index_b, branching)
    return np.asarray(level_a) + np.asarray(level_b) - 2 * meet
