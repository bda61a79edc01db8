"""One-sided extensive-form game trees.

A tree alternates learner infosets and learner actions; the children of an
action are infosets or leaves, and leaves carry a loss in ``[0, 1]``.
Opponents and chance are folded into an *environment*, a map that fixes the
child reached from every action.

Strategies and environments are plain dicts keyed by node id:

* a reduced strategy maps infoset -> chosen action, over exactly the infosets
  it reaches;
* an environment maps action -> child, over every action.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

ReducedStrategy = dict[int, int]
Environment = dict[int, int]

DEFAULT_ENUM_CAP = 10**6


class Kind(enum.Enum):
    INFOSET = "I"
    ACTION = "A"
    LEAF = "L"


class TreeFormatError(ValueError):
    """Raised when tree-file or environment-file text cannot be parsed."""


class TreeValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class EnumerationCapError(RuntimeError):
    """Raised when an exhaustive enumeration would exceed its cap."""


@dataclass(frozen=True)
class GameTree:
    kinds: tuple[Kind, ...]
    parents: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    losses: tuple[float | None, ...]
    root: int = 0
    # derived lookups, filled in __post_init__
    infosets: tuple[int, ...] = field(init=False, repr=False, compare=False)
    actions: tuple[int, ...] = field(init=False, repr=False, compare=False)
    leaves: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_kind: dict[Kind, list[int]] = {k: [] for k in Kind}
        for i, k in enumerate(self.kinds):
            by_kind[k].append(i)
        object.__setattr__(self, "infosets", tuple(by_kind[Kind.INFOSET]))
        object.__setattr__(self, "actions", tuple(by_kind[Kind.ACTION]))
        object.__setattr__(self, "leaves", tuple(by_kind[Kind.LEAF]))

    @classmethod
    def from_parents(
        cls,
        kinds: Iterable[Kind],
        parents: Iterable[int | None],
        losses: Iterable[float | None],
    ) -> GameTree:
        kinds = tuple(kinds)
        parents = tuple(parents)
        children: list[list[int]] = [[] for _ in kinds]
        root = None
        for i, p in enumerate(parents):
            if p is None:
                root = i if root is None else root
            else:
                children[p].append(i)
        return cls(
            kinds=kinds,
            parents=parents,
            children=tuple(tuple(c) for c in children),
            losses=tuple(losses),
            root=0 if root is None else root,
        )

    def __len__(self) -> int:
        return len(self.kinds)

    def is_infoset(self, v: int) -> bool:
        return self.kinds[v] is Kind.INFOSET

    def is_action(self, v: int) -> bool:
        return self.kinds[v] is Kind.ACTION

    def is_leaf(self, v: int) -> bool:
        return self.kinds[v] is Kind.LEAF

    def infoset_children(self, a: int) -> tuple[int, ...]:
        """Infoset children of action ``a`` (leaves dropped)."""
        kinds = self.kinds
        return tuple(c for c in self.children[a] if kinds[c] is Kind.INFOSET)

    def to_text(self) -> str:
        lines = []
        for i, k in enumerate(self.kinds):
            p = self.parents[i]
            parts = [str(i), k.value, "-" if p is None else str(p)]
            if k is Kind.LEAF:
                parts.append(repr(float(self.losses[i])))
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"


# -- parsing / validation ---------------------------------------------------


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_tree(text: str, *, validate: bool = True) -> GameTree:
    """Parse the line-oriented tree format ``<id> <kind> <parent|-> [loss]``.

    Ids must be unique and dense; the root line comes first and parents are
    declared before their children. With ``validate`` (the default) the
    structural rules are also checked and a :class:`TreeValidationError`
    carries every violation.
    """
    records: dict[int, tuple[Kind, int | None, float | None]] = {}
    order: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise TreeFormatError(f"line {lineno}: malformed line {raw!r}")
        try:
            node_id = int(parts[0])
        except ValueError:
            raise TreeFormatError(f"line {lineno}: malformed id {parts[0]!r}") from None
        if node_id < 0:
            raise TreeFormatError(f"line {lineno}: negative id {node_id}")
        if node_id in records:
            raise TreeFormatError(f"line {lineno}: duplicate id {node_id}")
        try:
            kind = Kind(parts[1])
        except ValueError:
            raise TreeFormatError(f"line {lineno}: unknown kind tag {parts[1]!r}") from None

        if parts[2] == "-":
            if order:
                raise TreeFormatError(f"line {lineno}: only the first line may be the root")
            parent = None
        else:
            if not order:
                raise TreeFormatError(f"line {lineno}: first line must be the root (parent '-')")
            try:
                parent = int(parts[2])
            except ValueError:
                raise TreeFormatError(f"line {lineno}: malformed parent {parts[2]!r}") from None
            if parent not in records:
                raise TreeFormatError(
                    f"line {lineno}: parent {parent} of node {node_id} not declared before it"
                )

        loss = None
        if kind is Kind.LEAF:
            if len(parts) != 4:
                raise TreeFormatError(f"line {lineno}: leaf {node_id} needs a loss")
            try:
                loss = float(parts[3])
            except ValueError:
                raise TreeFormatError(f"line {lineno}: malformed loss {parts[3]!r}") from None
            if not (0.0 <= loss <= 1.0):
                raise TreeFormatError(f"line {lineno}: loss out of range [0,1]: {parts[3]}")
        elif len(parts) == 4:
            raise TreeFormatError(f"line {lineno}: loss given on non-leaf {node_id}")

        records[node_id] = (kind, parent, loss)
        order.append(node_id)

    if not order:
        raise TreeFormatError("no root")
    if sorted(order) != list(range(len(order))):
        raise TreeFormatError("node ids must be dense 0..N-1")
    if order[0] != 0:
        raise TreeFormatError("root must have id 0")

    kinds = [records[i][0] for i in range(len(order))]
    parents = [records[i][1] for i in range(len(order))]
    losses = [records[i][2] for i in range(len(order))]
    # children keep file order
    children: list[list[int]] = [[] for _ in order]
    for i in order:
        p = records[i][1]
        if p is not None:
            children[p].append(i)
    tree = GameTree(
        kinds=tuple(kinds),
        parents=tuple(parents),
        children=tuple(tuple(c) for c in children),
        losses=tuple(losses),
        root=0,
    )
    if validate:
        violations = validate_tree(tree)
        if violations:
            raise TreeValidationError(violations)
    return tree


def load_tree(path) -> GameTree:
    with open(path) as fh:
        return parse_tree(fh.read())


def validate_tree(tree: GameTree) -> list[str]:
    """Return every structural violation; an empty list means the tree is ok."""
    out: list[str] = []
    n = len(tree.kinds)
    if n == 0:
        return ["no root"]
    if len(tree.parents) != n or len(tree.children) != n or len(tree.losses) != n:
        return ["node arrays have inconsistent lengths"]

    r = tree.root
    if not 0 <= r < n:
        return [f"root id {r} out of range"]
    if tree.parents[r] is not None:
        out.append(f"node {r}: root must not have a parent")
    if tree.kinds[r] is not Kind.INFOSET:
        out.append(f"node {r}: root must be infoset")

    for v in range(n):
        kind = tree.kinds[v]
        kids = tree.children[v]
        p = tree.parents[v]
        if v != r:
            if p is None:
                out.append(f"node {v}: second root (no parent)")
            elif not 0 <= p < n or v not in tree.children[p]:
                out.append(f"node {v}: parent/child links inconsistent")
        for c in kids:
            if not 0 <= c < n or tree.parents[c] != v:
                out.append(f"node {v}: child {c} does not point back to it")
        if len(set(kids)) != len(kids):
            out.append(f"node {v}: repeated child")

        loss = tree.losses[v]
        if kind is Kind.LEAF:
            if kids:
                out.append(f"node {v}: leaf has children")
            if loss is None or not (0.0 <= loss <= 1.0):
                out.append(f"node {v}: leaf loss must lie in [0,1]")
        elif loss is not None:
            out.append(f"node {v}: loss present on non-leaf")

        if kind is Kind.INFOSET:
            if len(kids) <= 1:
                out.append(f"node {v}: |C(v)| > 1 required for infosets (has {len(kids)})")
            for c in kids:
                if 0 <= c < n and tree.kinds[c] is not Kind.ACTION:
                    out.append(f"node {v}: infoset child {c} is not an action")
        elif kind is Kind.ACTION:
            if not kids:
                out.append(f"node {v}: action needs at least one child")
            for c in kids:
                if 0 <= c < n and tree.kinds[c] is Kind.ACTION:
                    out.append(f"node {v}: action child {c} is an action")

    # every node reachable from the root exactly once
    seen = [False] * n
    stack = [r]
    while stack:
        v = stack.pop()
        if seen[v]:
            out.append(f"node {v}: reached twice (cycle or shared child)")
            continue
        seen[v] = True
        stack.extend(c for c in tree.children[v] if 0 <= c < n)
    for v in range(n):
        if not seen[v]:
            out.append(f"node {v}: not reachable from root")
    return out


# -- profiles ----------------------------------------------------------------


@dataclass(frozen=True)
class TreeProfiles:
    """Per-node recursions: ``n`` sub-strategy counts (exact ints), ``m``
    action-descendant counts and the exploration weights ``beta``.

    Entries for leaves are ``0`` / ``0.0``.
    """

    n: tuple[int, ...]
    m: tuple[int, ...]
    beta: tuple[float, ...]
    root: int

    @property
    def num_strategies(self) -> int:
        return self.n[self.root]

    @property
    def num_actions(self) -> int:
        return self.m[self.root]


def _postorder(tree: GameTree, start: int | None = None) -> list[int]:
    start = tree.root if start is None else start
    order: list[int] = []
    stack = [start]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(tree.children[v])
    order.reverse()
    return order


def compute_profiles(tree: GameTree) -> TreeProfiles:
    size = len(tree)
    n = [0] * size
    m = [0] * size
    kinds = tree.kinds
    for v in _postorder(tree):
        kind = kinds[v]
        if kind is Kind.ACTION:
            count, desc = 1, 1
            for c in tree.children[v]:
                if kinds[c] is Kind.INFOSET:
                    count *= n[c]
                    desc += m[c]
            n[v], m[v] = count, desc
        elif kind is Kind.INFOSET:
            n[v] = sum(n[c] for c in tree.children[v])
            m[v] = sum(m[c] for c in tree.children[v])

    beta = [0.0] * size
    beta[tree.root] = 1.0
    stack = [tree.root]
    while stack:
        v = stack.pop()
        for c in tree.children[v]:
            kind = kinds[c]
            if kind is Kind.ACTION:
                beta[c] = m[c] * beta[v]
            elif kind is Kind.INFOSET:
                beta[c] = beta[v] / m[c]
            else:
                continue
            stack.append(c)
    return TreeProfiles(n=tuple(n), m=tuple(m), beta=tuple(beta), root=tree.root)


# -- play semantics ---------------------------------------------------------


@dataclass(frozen=True)
class PlayOutcome:
    path: tuple[int, ...]
    last_action: int
    loss: float


def play(tree: GameTree, sigma: Mapping[int, int], mu: Mapping[int, int]) -> PlayOutcome:
    """Traverse root to leaf, following ``sigma`` at infosets and ``mu`` at actions."""
    kinds = tree.kinds
    v = tree.root
    path = [v]
    last = -1
    while True:
        kind = kinds[v]
        if kind is Kind.INFOSET:
            try:
                v = sigma[v]
            except KeyError:
                raise KeyError(f"strategy undefined at reached infoset {v}") from None
        elif kind is Kind.ACTION:
            last = v
            v = mu[v]
        else:
            return PlayOutcome(tuple(path), last, tree.losses[v])
        path.append(v)


def play_loss(tree: GameTree, sigma: Mapping[int, int], mu: Mapping[int, int]) -> float:
    """Same as ``play(...).loss`` without building the path."""
    kinds = tree.kinds
    v = tree.root
    while True:
        kind = kinds[v]
        if kind is Kind.INFOSET:
            v = sigma[v]
        elif kind is Kind.ACTION:
            v = mu[v]
        else:
            return tree.losses[v]


def reachable_sets(tree: GameTree, sigma: Mapping[int, int]) -> tuple[set[int], set[int]]:
    """Infosets and actions reachable under ``sigma`` for some environment."""
    infosets: set[int] = set()
    actions: set[int] = set()
    stack = [tree.root]
    while stack:
        v = stack.pop()
        infosets.add(v)
        a = sigma[v]
        actions.add(a)
        stack.extend(tree.infoset_children(a))
    return infosets, actions


def is_reduced_strategy(tree: GameTree, sigma: Mapping[int, int]) -> bool:
    for v, a in sigma.items():
        if not (0 <= v < len(tree)) or not tree.is_infoset(v) or a not in tree.children[v]:
            return False
    try:
        infosets, _ = reachable_sets(tree, sigma)
    except KeyError:
        return False
    return infosets == set(sigma)


def terminal_actions(tree: GameTree, mu: Mapping[int, int]) -> set[int]:
    """Actions reachable under ``mu`` (any learner choices) whose outcome is a leaf."""
    out: set[int] = set()
    kinds = tree.kinds
    stack = [tree.root]
    while stack:
        v = stack.pop()
        for a in tree.children[v]:
            c = mu[a]
            if kinds[c] is Kind.LEAF:
                out.add(a)
            else:
                stack.append(c)
    return out


def num_environments(tree: GameTree) -> int:
    return math.prod(len(tree.children[a]) for a in tree.actions)


def iter_environments(tree: GameTree) -> Iterator[Environment]:
    actions = sorted(tree.actions)
    for combo in itertools.product(*(tree.children[a] for a in actions)):
        yield dict(zip(actions, combo))


def enumerate_environments(tree: GameTree, cap: int = DEFAULT_ENUM_CAP) -> list[Environment]:
    """All environments, lexicographic by action id (first action slowest)."""
    total = num_environments(tree)
    if total > cap:
        raise EnumerationCapError(f"{total} environments exceed cap {cap}")
    return list(iter_environments(tree))


# -- environment files ------------------------------------------------------


def parse_environment_line(tree: GameTree, line: str) -> Environment:
    env: Environment = {}
    for tok in line.split():
        try:
            a_s, c_s = tok.split("=")
            a, c = int(a_s), int(c_s)
        except ValueError:
            raise TreeFormatError(f"malformed pair {tok!r}") from None
        if not (0 <= a < len(tree)) or not tree.is_action(a):
            raise TreeFormatError(f"{a} is not an action")
        if c not in tree.children[a]:
            raise TreeFormatError(f"{c} is not a child of action {a}")
        if a in env:
            raise TreeFormatError(f"action {a} assigned twice")
        env[a] = c
    missing = set(tree.actions) - set(env)
    if missing:
        raise TreeFormatError(f"environment misses actions {sorted(missing)}")
    return env


def parse_environments(tree: GameTree, text: str) -> list[Environment]:
    envs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        try:
            envs.append(parse_environment_line(tree, line))
        except TreeFormatError as exc:
            raise TreeFormatError(f"line {lineno}: {exc}") from None
    return envs


def load_environments(tree: GameTree, path) -> list[Environment]:
    with open(path) as fh:
        return parse_environments(tree, fh.read())


def format_environment(mu: Mapping[int, int]) -> str:
    return " ".join(f"{a}={mu[a]}" for a in sorted(mu))


def format_strategy(sigma: Mapping[int, int]) -> str:
    return " ".join(f"{v}:{sigma[v]}" for v in sorted(sigma))
