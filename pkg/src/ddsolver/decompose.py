"""Graph partitioning and the interior / interface split of a matrix graph."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO

import numba as nb
import numpy as np

from .sparse import Graph, Permutation, INDEX

BALANCE = 1.05


class SeparatorError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Partition:
    part: np.ndarray
    n_parts: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.part, minlength=self.n_parts)


@dataclass(frozen=True, eq=False)
class InterfaceClassification:
    """``signature[k]`` belongs to vertex ``interface[k]``."""

    part: np.ndarray
    n_parts: int
    interior: list[np.ndarray]
    interface: np.ndarray
    signature: list[tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class InterfaceGroups:
    signatures: list[tuple[int, ...]]
    vertices: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.signatures)

    def sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.vertices], dtype=INDEX)

    def groups_of_part(self, p: int) -> list[int]:
        return [g for g, s in enumerate(self.signatures) if p in s]


@dataclass(frozen=True, eq=False)
class ArrowheadLayout:
    """Interiors of part 0..P-1, then interface groups, as one permutation.

    Positions ``part_offsets[i]:part_offsets[i+1]`` hold the interior of
    part ``i``; interface group ``g`` occupies
    ``n_interior + group_offsets[g] : n_interior + group_offsets[g+1]``.
    """

    perm: Permutation
    part_offsets: np.ndarray
    group_offsets: np.ndarray
    signatures: list[tuple[int, ...]]

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def n_parts(self) -> int:
        return len(self.part_offsets) - 1

    @property
    def n_interior(self) -> int:
        return int(self.part_offsets[-1])

    @property
    def n_interface(self) -> int:
        return int(self.group_offsets[-1])

    def interior_vertices(self, i: int) -> np.ndarray:
        return self.perm.perm[self.part_offsets[i]:self.part_offsets[i + 1]]

    def interface_vertices(self) -> np.ndarray:
        return self.perm.perm[self.n_interior:]

    def dump(self, stream: IO[str]) -> None:
        """Diagnostic ``vertex segment`` table, one line per vertex."""
        stream.write("# vertex segment\n")
        for i in range(self.n_parts):
            for v in self.interior_vertices(i).tolist():
                stream.write(f"{v} part{i}\n")
        base = self.n_interior
        for g, sig in enumerate(self.signatures):
            label = "group" + "-".join(map(str, sig))
            lo, hi = base + self.group_offsets[g], base + self.group_offsets[g + 1]
            for v in self.perm.perm[lo:hi].tolist():
                stream.write(f"{v} {label}\n")


# ------------------------------------------------------------ bisection kernels


@nb.njit(cache=True)
def _bfs(indptr, indices, root, level, order, whole):
    """Level structure from ``root``; with ``whole`` unreached components follow."""
    n = len(indptr) - 1
    for v in range(n):
        level[v] = -1
    head = 0
    tail = 0
    nxt_root = 0
    lev_base = 0
    while True:
        level[root] = lev_base
        order[tail] = root
        tail += 1
        while head < tail:
            v = order[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if level[u] < 0:
                    level[u] = level[v] + 1
                    order[tail] = u
                    tail += 1
        if not whole or tail == n:
            break
        lev_base = level[order[tail - 1]] + 1
        while level[nxt_root] >= 0:
            nxt_root += 1
        root = nxt_root
    return tail


@nb.njit(cache=True)
def _pseudo_peripheral(indptr, indices):
    n = len(indptr) - 1
    level = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    r = 0
    cnt = _bfs(indptr, indices, r, level, order, False)
    ecc = level[order[cnt - 1]]
    while True:
        best = -1
        bestdeg = 1 << 62
        for t in range(cnt):
            v = order[t]
            if level[v] == ecc:
                d = indptr[v + 1] - indptr[v]
                if d < bestdeg or (d == bestdeg and v < best):
                    best = v
                    bestdeg = d
        cnt = _bfs(indptr, indices, best, level, order, False)
        e2 = level[order[cnt - 1]]
        if e2 > ecc:
            ecc = e2
            r = best
        else:
            return best


@nb.njit(cache=True)
def _bisect(indptr, indices, n_a, min_a, max_a, min_b, max_b):
    n = len(indptr) - 1
    seed = _pseudo_peripheral(indptr, indices)
    level = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    _bfs(indptr, indices, seed, level, order, True)
    side = np.ones(n, dtype=np.int64)
    for t in range(n_a):
        side[order[t]] = 0
    size_a = n_a
    # one boundary refinement pass, ascending vertex index
    for v in range(n):
        ext = 0
        inn = 0
        for p in range(indptr[v], indptr[v + 1]):
            if side[indices[p]] == side[v]:
                inn += 1
            else:
                ext += 1
        if ext == 0 or ext <= inn:
            continue
        if side[v] == 0:
            na = size_a - 1
        else:
            na = size_a + 1
        nb_ = n - na
        if na < min_a or na > max_a or nb_ < min_b or nb_ > max_b:
            continue
        side[v] = 1 - side[v]
        size_a = na
    return side


def _induced(g: Graph, verts: np.ndarray, local: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR of the subgraph on ``verts``; ``local`` maps global -> local or -1."""
    local[verts] = np.arange(len(verts))
    starts, ends = g.indptr[verts], g.indptr[verts + 1]
    lens = ends - starts
    src = np.repeat(np.arange(len(verts)), lens)
    offs = np.cumsum(lens) - lens
    idx = g.indices[np.arange(lens.sum(), dtype=INDEX) - np.repeat(offs - starts, lens)]
    nb_local = local[idx]
    keep = nb_local >= 0
    src, dst = src[keep], nb_local[keep]
    indptr = np.zeros(len(verts) + 1, dtype=INDEX)
    np.cumsum(np.bincount(src, minlength=len(verts)), out=indptr[1:])
    local[verts] = -1
    return indptr, dst.astype(INDEX)


def partition(g: Graph, n_parts: int) -> Partition:
    """Balanced recursive bisection of ``g`` into ``n_parts`` parts.

    Parts are relabelled by their lowest vertex so labels do not depend on
    the recursion order.
    """
    n = g.n
    if not 1 <= n_parts <= max(n, 1):
        raise ValueError(f"n_parts must be in [1, {n}], got {n_parts}")
    cap = math.ceil(BALANCE * n / n_parts)
    part = np.zeros(n, dtype=INDEX)
    local = np.full(n, -1, dtype=INDEX)
    stack = [(np.arange(n, dtype=INDEX), n_parts, 0)]
    while stack:
        verts, k, label = stack.pop()
        if k == 1:
            part[verts] = label
            continue
        m = len(verts)
        ka = k // 2
        kb = k - ka
        n_a = int(round(m * ka / k))
        indptr, indices = _induced(g, verts, local)
        side = _bisect(indptr, indices, n_a, ka, ka * cap, kb, kb * cap)
        stack.append((verts[side == 1], kb, label + ka))
        stack.append((verts[side == 0], ka, label))
    first = np.full(n_parts, n, dtype=INDEX)
    np.minimum.at(first, part, np.arange(n, dtype=INDEX))
    relabel = np.empty(n_parts, dtype=INDEX)
    relabel[np.argsort(first, kind="stable")] = np.arange(n_parts, dtype=INDEX)
    return Partition(relabel[part], n_parts)


def classify(g: Graph, p: Partition) -> InterfaceClassification:
    """Interface = vertices with a neighbour in another part."""
    part = p.part
    src = np.repeat(np.arange(g.n, dtype=INDEX), g.degree())
    nbr_part = part[g.indices]
    cross = nbr_part != part[src]
    is_iface = np.zeros(g.n, dtype=bool)
    is_iface[src[cross]] = True
    interface = np.flatnonzero(is_iface).astype(INDEX)
    interior = [np.flatnonzero((part == i) & ~is_iface).astype(INDEX) for i in range(p.n_parts)]

    # signature = sorted parts of {v} U N(v), via unique (vertex, part) keys
    sel = is_iface[src]
    v_all = np.concatenate([interface, src[sel]])
    p_all = np.concatenate([part[interface], nbr_part[sel]])
    keys = np.unique(v_all * p.n_parts + p_all)
    kv, kp = keys // p.n_parts, keys % p.n_parts
    bounds = np.searchsorted(kv, interface, side="left").tolist() + [len(kv)]
    kp_list = kp.tolist()
    signature = [tuple(kp_list[bounds[t]:bounds[t + 1]]) for t in range(len(interface))]
    return InterfaceClassification(part, p.n_parts, interior, interface, signature)


def group_interface(c: InterfaceClassification) -> InterfaceGroups:
    buckets: dict[tuple[int, ...], list[int]] = {}
    for v, s in zip(c.interface.tolist(), c.signature):
        buckets.setdefault(s, []).append(v)
    sigs = sorted(buckets)
    return InterfaceGroups(sigs, [np.array(buckets[s], dtype=INDEX) for s in sigs])


def build_layout(p: Partition, c: InterfaceClassification, grps: InterfaceGroups,
                 g: Graph | None = None) -> ArrowheadLayout:
    """Arrowhead permutation; checks the separator property when ``g`` is given."""
    pieces = list(c.interior) + list(grps.vertices)
    perm = np.concatenate(pieces) if pieces else np.empty(0, dtype=INDEX)
    part_offsets = np.zeros(p.n_parts + 1, dtype=INDEX)
    np.cumsum([len(v) for v in c.interior], out=part_offsets[1:])
    group_offsets = np.zeros(len(grps) + 1, dtype=INDEX)
    np.cumsum(grps.sizes(), out=group_offsets[1:])
    if len(perm) != len(p.part):
        raise SeparatorError("layout does not cover every vertex")
    if g is not None:
        check_separator(g, c)
    return ArrowheadLayout(Permutation.from_perm(perm), part_offsets, group_offsets,
                           list(grps.signatures))


def check_separator(g: Graph, c: InterfaceClassification) -> None:
    is_int = np.ones(g.n, dtype=bool)
    is_int[c.interface] = False
    src = np.repeat(np.arange(g.n, dtype=INDEX), g.degree())
    bad = is_int[src] & is_int[g.indices] & (c.part[src] != c.part[g.indices])
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SeparatorError(f"interior vertices {src[k]} and {g.indices[k]} "
                             f"in different parts are adjacent")
