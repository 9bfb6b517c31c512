"""Compact storage for posterior draws.

A fitted model holds thousands of draws, each carrying p+1 ensembles of
small trees.  Keeping those as Python node objects is memory- and
cache-hostile, so every saved ensemble is packed into flat pre-order arrays
(`PackedForest`) supporting vectorized evaluation of the whole ensemble at
many query points at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trees import DecisionTree, Node, RegressionTree

_LEAF = -1


@dataclass(eq=False)
class PackedForest:
    """One ensemble of regression trees in flat pre-order arrays.

    Within a tree, a node's left child sits at the next array slot (a
    pre-order property); only the right child needs an explicit index.
    Leaves carry axis = -1 and their jump in ``value``.
    """

    axis: np.ndarray    # (K,) int16, -1 marks a leaf
    cut: np.ndarray     # (K,) float64
    right: np.ndarray   # (K,) int32, absolute index; -1 at leaves
    value: np.ndarray   # (K,) float64, jump at leaves, 0 elsewhere
    roots: np.ndarray   # (M,) int32 root index per tree

    @classmethod
    def from_trees(cls, trees: list[RegressionTree]) -> "PackedForest":
        axis: list[int] = []
        cut: list[float] = []
        right: list[int] = []
        value: list[float] = []
        roots = np.empty(len(trees), dtype=np.int32)

        def emit(node: Node, jumps, counter) -> int:
            idx = len(axis)
            if node.is_leaf:
                axis.append(_LEAF)
                cut.append(0.0)
                right.append(-1)
                value.append(float(jumps[counter[0]]))
                counter[0] += 1
                return idx
            axis.append(node.axis)
            cut.append(node.cut)
            right.append(0)  # patched after the left subtree is laid out
            value.append(0.0)
            emit(node.left, jumps, counter)
            right[idx] = emit(node.right, jumps, counter)
            return idx

        for m, rt in enumerate(trees):
            roots[m] = emit(rt.structure.root, rt.jumps, [0])

        return cls(
            axis=np.asarray(axis, dtype=np.int16),
            cut=np.asarray(cut, dtype=np.float64),
            right=np.asarray(right, dtype=np.int32),
            value=np.asarray(value, dtype=np.float64),
            roots=roots,
        )

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def evaluate_sum(self, Z: np.ndarray) -> np.ndarray:
        """Sum of all tree evaluations at each row of Z, shape (Q,).

        Descends every (row, tree) pair simultaneously; the loop runs once
        per tree depth level, not per node.
        """
        Z = np.asarray(Z, dtype=np.float64)
        Q = Z.shape[0]
        cur = np.broadcast_to(self.roots, (Q, self.n_trees)).copy()
        rows = np.broadcast_to(np.arange(Q)[:, None], cur.shape)
        while True:
            active = self.axis[cur] >= 0
            if not active.any():
                break
            c = cur[active]
            zv = Z[rows[active], self.axis[c]]
            cur[active] = np.where(zv < self.cut[c], c + 1, self.right[c])
        return self.value[cur].sum(axis=1)

    def to_trees(self) -> list[RegressionTree]:
        """Expand back into node-based regression trees."""
        def build(idx: int, jumps: list[float]) -> tuple[Node, int]:
            if self.axis[idx] == _LEAF:
                jumps.append(float(self.value[idx]))
                return Node(), idx + 1
            left, after_left = build(idx + 1, jumps)
            right, after_right = build(int(self.right[idx]), jumps)
            return Node(int(self.axis[idx]), float(self.cut[idx]), left, right), after_right

        out = []
        for root in self.roots:
            jumps: list[float] = []
            node, _ = build(int(root), jumps)
            out.append(RegressionTree(DecisionTree(node), np.array(jumps)))
        return out


@dataclass(eq=False)
class DrawRecord:
    """One post-burn-in state: ensembles, noise scale, and sparsity state.

    sigma is on the internal (standardized) fitting scale; de-standardization
    happens at summary time using the metadata carried by PosteriorDraws.
    """

    forests: list[PackedForest]
    sigma: float
    split_probs: np.ndarray          # (p+1, R)
    concentrations: np.ndarray       # (p+1,)
    concentration_index: np.ndarray  # (p+1,) grid positions
    split_count_matrix: np.ndarray   # (p+1, R) rule counts per modifier


@dataclass
class PosteriorDraws:
    """All retained draws plus the metadata needed to interpret them.

    meta keys: schema_version, p, R, n_trees, y_mean, y_sd, z_min, z_max,
    x_names, z_names, hyperparameters, config_hash, dataset_fingerprint,
    seeds, chains (per-chain acceptance summaries).
    """

    records: list[DrawRecord]
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.records)

    @property
    def n_ensembles(self) -> int:
        return self.meta["p"] + 1

    def sigmas(self, original_scale: bool = True) -> np.ndarray:
        s = np.array([rec.sigma for rec in self.records])
        if original_scale:
            s = s * self.meta.get("y_sd", 1.0)
        return s

    def scale_z(self, z_raw: np.ndarray) -> np.ndarray:
        """Map raw modifier rows into [0, 1] with the training affine map."""
        z_raw = np.atleast_2d(np.asarray(z_raw, dtype=np.float64))
        z_min = np.asarray(self.meta["z_min"], dtype=np.float64)
        z_max = np.asarray(self.meta["z_max"], dtype=np.float64)
        span = np.where(z_max > z_min, z_max - z_min, 1.0)
        scaled = (z_raw - z_min) / span
        scaled[:, z_max <= z_min] = 0.5
        return np.clip(scaled, 0.0, 1.0)

    @staticmethod
    def merge(parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        """Concatenate per-chain draws; metadata from the first part wins."""
        if not parts:
            raise ValueError("nothing to merge")
        shape = [(p.meta.get("p"), p.meta.get("R"), p.meta.get("n_trees"))
                 for p in parts]
        if len(set(shape)) > 1:
            raise ValueError(f"cannot merge draws of unequal shape: {shape}")
        records = [rec for part in parts for rec in part.records]
        meta = dict(parts[0].meta)
        meta["chains"] = [c for part in parts for c in part.meta.get("chains", [])]
        return PosteriorDraws(records, meta)
