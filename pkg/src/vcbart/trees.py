"""Binary decision trees over effect modifiers, their priors, and MH proposals.

A tree partitions the modifier hypercube [0, 1]^R with axis-aligned rules
``go left iff z[axis] < cut``.  Leaves are numbered 0..L-1 in pre-order
(parent, left subtree, right subtree); samplers rely on this numbering to
remap cached leaf assignments in O(N) after a grow or prune.

Tree structure and rules are priced separately: `tree_log_prior` covers the
branching process (which nodes split), `rule_log_prior` covers the rules
attached to internal nodes (axis choice and cutpoint).  Proposal densities
follow the same split so the two bookkeeping streams cancel where they
should in a Metropolis-Hastings ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Hard ceiling on node depth; proposals past it are refused by returning None.
DEFAULT_MAX_DEPTH = 32


@dataclass(frozen=True)
class PolynomialSplitPrior:
    """Branching process where a depth-d node splits with prob base / (1+d)^power."""

    base: float = 0.95
    power: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.base < 1.0:
            raise ValueError("base must lie in (0, 1)")
        if self.power < 0.0:
            raise ValueError("power must be nonnegative")

    def split_prob(self, depth: int) -> float:
        return self.base / (1.0 + depth) ** self.power


@dataclass(frozen=True)
class GeometricSplitPrior:
    """Branching process where a depth-d node splits with prob gamma^(d+1).

    Depth is counted so that the root already splits with prob gamma < 1,
    keeping every split probability strictly inside (0, 1).  Theory for this
    variant wants gamma below 1/2 (and above 1/N, which only the data can
    check), so construction enforces the upper bound.
    """

    gamma: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")

    def split_prob(self, depth: int) -> float:
        return self.gamma ** (depth + 1)


SplitPrior = PolynomialSplitPrior | GeometricSplitPrior


@lru_cache(maxsize=None)
def split_log_tables(prior: SplitPrior, max_depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Tables of log q(d) and log(1 - q(d)) for d = 0..max_depth.

    The process is truncated at max_depth: a node there never splits, so
    log q(max_depth) = -inf and its leaf factor is log(1) = 0.  This keeps
    the prior normalized over the depth-capped tree space the proposals
    actually explore.
    """
    q = np.array([prior.split_prob(d) for d in range(max_depth + 1)])
    log_q = np.log(q)
    log_1mq = np.log1p(-q)
    log_q[max_depth] = -np.inf
    log_1mq[max_depth] = 0.0
    return log_q, log_1mq


class Node:
    """One tree node; a leaf iff ``left is None``.

    Nodes are never mutated after construction, so subtrees may be shared
    between a tree and its grow/prune proposals.  Identity (``is``) is the
    node's identifier during path-copy surgery; do not add value equality.
    """

    __slots__ = ("axis", "cut", "left", "right")

    def __init__(self, axis: int = -1, cut: float = math.nan,
                 left: "Node | None" = None, right: "Node | None" = None):
        self.axis = axis
        self.cut = cut
        self.left = left
        self.right = right

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def __repr__(self):
        if self.is_leaf:
            return "Leaf()"
        return f"Split(z{self.axis} < {self.cut:.4g})"


def _leaf() -> Node:
    return Node()


class DecisionTree:
    """A rooted binary tree of axis-aligned rules over [0, 1]^R."""

    __slots__ = ("root",)

    def __init__(self, root: Node | None = None):
        self.root = root if root is not None else _leaf()

    # ------------------------------------------------------------------
    # traversal

    def _walk(self):
        """Yield (node, depth) in pre-order."""
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            if not node.is_leaf:
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))

    def leaves(self) -> list[tuple[Node, int]]:
        """Leaves as (node, depth), ordered by pre-order rank."""
        return [(n, d) for n, d in self._walk() if n.is_leaf]

    def internal_nodes(self) -> list[tuple[Node, int]]:
        return [(n, d) for n, d in self._walk() if not n.is_leaf]

    def prunable_nodes(self) -> list[tuple[Node, int, int]]:
        """Internal nodes with two leaf children, as (node, depth, left_leaf_rank).

        ``left_leaf_rank`` is the pre-order rank of the node's left child; the
        right child holds rank left_leaf_rank + 1 and a prune collapses both
        onto left_leaf_rank.
        """
        out = []
        rank = 0
        for node, depth in self._walk():
            if node.is_leaf:
                rank += 1
            elif node.left.is_leaf and node.right.is_leaf:
                out.append((node, depth, rank))
        return out

    @property
    def n_leaves(self) -> int:
        return sum(1 for n, _ in self._walk() if n.is_leaf)

    def depth(self) -> int:
        return max(d for n, d in self._walk() if n.is_leaf)

    # ------------------------------------------------------------------
    # evaluation

    def leaf_index(self, z) -> int:
        """Pre-order rank of the leaf whose cell contains modifier vector z."""
        node = self.root
        rank = 0
        while not node.is_leaf:
            if z[node.axis] < node.cut:
                node = node.left
            else:
                # skip every leaf in the left subtree
                rank += _count_leaves(node.left)
                node = node.right
        return rank

    def leaf_assignments(self, Z: np.ndarray) -> np.ndarray:
        """Vectorized leaf_index for each row of Z, shape (N,)."""
        Z = np.asarray(Z)
        out = np.zeros(Z.shape[0], dtype=np.intp)
        self._assign(self.root, np.arange(Z.shape[0]), Z, out, 0)
        return out

    def _assign(self, node: Node, idx: np.ndarray, Z: np.ndarray,
                out: np.ndarray, rank: int) -> int:
        if node.is_leaf:
            out[idx] = rank
            return rank + 1
        mask = Z[idx, node.axis] < node.cut
        rank = self._assign(node.left, idx[mask], Z, out, rank)
        return self._assign(node.right, idx[~mask], Z, out, rank)

    # ------------------------------------------------------------------
    # comparison / copying

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return _structurally_equal(self.root, other.root)

    def __hash__(self):
        return hash(tuple(
            (-1,) if n.is_leaf else (n.axis, n.cut) for n, _ in self._walk()
        ))

    def __repr__(self):
        return f"DecisionTree(n_leaves={self.n_leaves})"


def _count_leaves(node: Node) -> int:
    if node.is_leaf:
        return 1
    return _count_leaves(node.left) + _count_leaves(node.right)


def _structurally_equal(a: Node, b: Node) -> bool:
    if a.is_leaf or b.is_leaf:
        return a.is_leaf and b.is_leaf
    return (a.axis == b.axis and a.cut == b.cut
            and _structurally_equal(a.left, b.left)
            and _structurally_equal(a.right, b.right))


def _replace(node: Node, target: Node, replacement: Node) -> Node:
    """Copy the path from node down to target, splicing in replacement."""
    if node is target:
        return replacement
    if node.is_leaf:
        return node
    left = _replace(node.left, target, replacement)
    if left is not node.left:
        return Node(node.axis, node.cut, left, node.right)
    right = _replace(node.right, target, replacement)
    if right is not node.right:
        return Node(node.axis, node.cut, node.left, right)
    return node


# ----------------------------------------------------------------------
# priors


def tree_log_prior(tree: DecisionTree, split_prior: SplitPrior,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> float:
    """Log branching-process probability of the tree's shape.

    Counts only which nodes split and which stop; rule choices are priced
    by `rule_log_prior`.  Trees deeper than max_depth have zero prior mass.
    """
    log_q, log_1mq = split_log_tables(split_prior, max_depth)
    total = 0.0
    for node, depth in tree._walk():
        if depth > max_depth:
            return -math.inf
        total += log_1mq[depth] if node.is_leaf else log_q[depth]
    return float(total)


def rule_log_prior(tree: DecisionTree, split_probs: np.ndarray,
                   cutpoint_grid: np.ndarray | None = None) -> float:
    """Log prior of the decision rules given the tree shape.

    Each internal node draws its axis from ``split_probs`` and its cutpoint
    uniformly, either as a density on (0, 1) (contributing log 1 = 0) or as
    a pmf over ``cutpoint_grid``.
    """
    log_fc = 0.0 if cutpoint_grid is None else -math.log(len(cutpoint_grid))
    total = 0.0
    for node, _ in tree.internal_nodes():
        p = split_probs[node.axis]
        total += (math.log(p) if p > 0.0 else -math.inf) + log_fc
    return total


def split_counts(trees, n_modifiers: int) -> np.ndarray:
    """Number of internal-node rules using each modifier across an ensemble."""
    counts = np.zeros(n_modifiers, dtype=np.int64)
    for tree in trees:
        structure = tree.structure if isinstance(tree, RegressionTree) else tree
        for node, _ in structure.internal_nodes():
            counts[node.axis] += 1
    return counts


def sample_tree_structure(split_prior: SplitPrior, split_probs: np.ndarray,
                          rng: np.random.Generator,
                          cutpoint_grid: np.ndarray | None = None,
                          max_depth: int = DEFAULT_MAX_DEPTH) -> DecisionTree:
    """Draw a tree from the branching-process prior, truncated at max_depth."""
    cum = np.cumsum(split_probs)

    def build(depth: int) -> Node:
        if depth >= max_depth or rng.random() >= split_prior.split_prob(depth):
            return _leaf()
        axis = _sample_axis(cum, rng)
        cut = _sample_cut(cutpoint_grid, rng)
        return Node(axis, cut, build(depth + 1), build(depth + 1))

    return DecisionTree(build(0))


def _sample_axis(cum_probs: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cum_probs, rng.random() * cum_probs[-1], side="right"))
    return min(i, len(cum_probs) - 1)


def _sample_cut(cutpoint_grid: np.ndarray | None, rng: np.random.Generator) -> float:
    if cutpoint_grid is None:
        return float(rng.random())
    return float(cutpoint_grid[rng.integers(len(cutpoint_grid))])


# ----------------------------------------------------------------------
# grow / prune proposals


@dataclass
class TreeProposal:
    """A proposed tree move plus the densities needed for an MH ratio.

    The proposal density of the grow direction factors into a structural
    part (move choice, node choice) and a rule part (axis from the modifier
    weights times the cutpoint density).  They are kept separate because the
    rule part cancels exactly against the rule prior in an MH acceptance;
    samplers use the structural parts and skip the shared factor, which
    avoids inf - inf when a modifier weight is zero.

    ``leaf_rank`` is the pre-order rank of the affected leaf in the current
    tree: a grow splits that leaf into ranks (leaf_rank, leaf_rank + 1), a
    prune merges exactly those two ranks back into leaf_rank.
    """

    kind: str
    tree: DecisionTree
    leaf_rank: int
    axis: int
    cut: float
    node_depth: int
    log_move_forward: float   # structural density of this move
    log_move_reverse: float   # structural density of the inverse move
    log_rule: float           # rule density, always on the grow direction

    @property
    def log_forward(self) -> float:
        return self.log_move_forward + (self.log_rule if self.kind == "grow" else 0.0)

    @property
    def log_reverse(self) -> float:
        return self.log_move_reverse + (self.log_rule if self.kind == "prune" else 0.0)

    @property
    def log_ratio(self) -> float:
        """log q(reverse) - log q(forward), the proposal part of the MH ratio."""
        return self.log_reverse - self.log_forward


def _log_move_prob(tree_n_leaves: int, grow: bool) -> float:
    # A root-only tree must grow; otherwise grow and prune are coin-flipped.
    if tree_n_leaves == 1:
        return 0.0 if grow else -math.inf
    return math.log(0.5)


def grow_proposal(tree: DecisionTree, split_probs: np.ndarray,
                  rng: np.random.Generator,
                  cutpoint_grid: np.ndarray | None = None,
                  max_depth: int = DEFAULT_MAX_DEPTH) -> TreeProposal | None:
    """Split a uniformly chosen leaf with a freshly drawn rule.

    Returns None when the chosen leaf already sits at max_depth; callers
    treat that as an auto-rejected move.
    """
    leaves = tree.leaves()
    n_leaves = len(leaves)
    i = int(rng.integers(n_leaves))
    leaf, depth = leaves[i]
    if depth >= max_depth:
        return None

    cum = np.cumsum(split_probs)
    axis = _sample_axis(cum, rng)
    cut = _sample_cut(cutpoint_grid, rng)
    grown = Node(axis, cut, _leaf(), _leaf())
    new_tree = DecisionTree(_replace(tree.root, leaf, grown))

    log_fc = 0.0 if cutpoint_grid is None else -math.log(len(cutpoint_grid))
    p_axis = split_probs[axis]
    log_rule = (math.log(p_axis) if p_axis > 0.0 else -math.inf) + log_fc
    log_move_fwd = _log_move_prob(n_leaves, grow=True) - math.log(n_leaves)
    log_move_rev = (_log_move_prob(n_leaves + 1, grow=False)
                    - math.log(len(new_tree.prunable_nodes())))
    return TreeProposal("grow", new_tree, i, axis, cut, depth,
                        log_move_fwd, log_move_rev, log_rule)


def prune_proposal(tree: DecisionTree, split_probs: np.ndarray,
                   rng: np.random.Generator,
                   cutpoint_grid: np.ndarray | None = None) -> TreeProposal | None:
    """Collapse a uniformly chosen internal node with two leaf children.

    ``split_probs`` prices the reverse grow move, whose density includes the
    probability of re-drawing the removed rule.  Returns None on a root-only
    tree, which has nothing to prune.
    """
    prunable = tree.prunable_nodes()
    if not prunable:
        return None
    i = int(rng.integers(len(prunable)))
    node, depth, left_rank = prunable[i]
    new_tree = DecisionTree(_replace(tree.root, node, _leaf()))
    n_leaves_new = new_tree.n_leaves

    log_fc = 0.0 if cutpoint_grid is None else -math.log(len(cutpoint_grid))
    p_axis = split_probs[node.axis]
    log_rule = (math.log(p_axis) if p_axis > 0.0 else -math.inf) + log_fc
    log_move_fwd = _log_move_prob(tree.n_leaves, grow=False) - math.log(len(prunable))
    log_move_rev = (_log_move_prob(n_leaves_new, grow=True)
                    - math.log(n_leaves_new))
    return TreeProposal("prune", new_tree, left_rank, node.axis, node.cut, depth,
                        log_move_fwd, log_move_rev, log_rule)


# ----------------------------------------------------------------------
# regression trees


@dataclass(eq=False)
class RegressionTree:
    """A decision tree paired with one real jump per leaf (pre-order order)."""

    structure: DecisionTree
    jumps: np.ndarray

    def __post_init__(self):
        self.jumps = np.asarray(self.jumps, dtype=np.float64)
        if self.jumps.shape != (self.structure.n_leaves,):
            raise ValueError("jumps must align with the tree's leaves")

    def evaluate(self, z) -> float:
        return float(self.jumps[self.structure.leaf_index(z)])

    def evaluate_many(self, Z: np.ndarray) -> np.ndarray:
        return self.jumps[self.structure.leaf_assignments(Z)]

    def equals(self, other: "RegressionTree") -> bool:
        return (self.structure == other.structure
                and np.array_equal(self.jumps, other.jumps))


def constant_tree(value: float = 0.0) -> RegressionTree:
    """Root-only regression tree evaluating to ``value`` everywhere."""
    return RegressionTree(DecisionTree(), np.array([value]))


def encode_regression_tree(rt: RegressionTree) -> list:
    """Pre-order encoding: internal node -> [axis, cut]; leaf -> its jump."""
    items: list = []
    jumps = rt.jumps
    counter = [0]

    def walk(node: Node):
        if node.is_leaf:
            items.append(float(jumps[counter[0]]))
            counter[0] += 1
        else:
            items.append([int(node.axis), float(node.cut)])
            walk(node.left)
            walk(node.right)

    walk(rt.structure.root)
    return items


def decode_regression_tree(items: list) -> RegressionTree:
    """Inverse of encode_regression_tree."""
    pos = [0]
    jumps: list[float] = []

    def build() -> Node:
        item = items[pos[0]]
        pos[0] += 1
        if isinstance(item, list):
            axis, cut = item
            left = build()
            right = build()
            return Node(int(axis), float(cut), left, right)
        jumps.append(float(item))
        return _leaf()

    root = build()
    if pos[0] != len(items):
        raise ValueError("trailing items in tree encoding")
    return RegressionTree(DecisionTree(root), np.array(jumps))
