"""Tree-pattern evaluation: naive enumeration and distributed joins.

``eval_naive`` exhaustively enumerates node assignments over in-memory
documents; it is both the centralized backend's engine and the ground
truth for everything distributed.

``eval_distributed`` fetches one posting list per pattern node from the
overlays, then runs a stack-based holistic structural join: each
root-to-leaf path of the pattern is evaluated in a single pass over its
merged, (doc, start)-ordered candidate lists, and branching is handled by
merging path solutions on their shared nodes.  Results are bindings; no
payloads move until recomposition.

A ``Binding`` is a tuple of structural ids aligned with ``pattern.nodes``.
Both evaluators sort results by return-node ids, then by the full tuple.
"""

from __future__ import annotations

from .document import (
    ATTRIBUTE,
    ELEMENT,
    Document,
    Node,
    StructuralId,
    is_ancestor,
    is_parent,
    parse_int_content,
    split_words,
)
from .errors import UnsupportedWildcardRoot
from .indexing import IndexService
from .netsim import PeerId
from .pattern import CHILD, PNode, TreePattern, canonical

Binding = tuple[StructuralId, ...]


def axis_holds(axis: str, parent: StructuralId, child: StructuralId) -> bool:
    if axis == CHILD:
        return is_parent(parent, child)
    return is_ancestor(parent, child)


def sort_bindings(pattern: TreePattern, bindings: list[Binding]) -> list[Binding]:
    rets = pattern.return_nodes
    return sorted(bindings, key=lambda b: (tuple(b[i] for i in rets), b))


# -- naive evaluation ------------------------------------------------------


def _node_matches(doc: Document, node: Node, pnode: PNode) -> bool:
    if node.kind not in (ELEMENT, ATTRIBUTE):
        return False
    if not pnode.is_wildcard and node.name != pnode.name:
        return False
    if pnode.word is not None:
        if not any(
            pnode.word in split_words(text) for text in doc.text_children(node)
        ):
            return False
    if pnode.has_range:
        ok = False
        for text in doc.text_children(node):
            value = parse_int_content(text)
            if value is not None and pnode.lo <= value <= pnode.hi:
                ok = True
                break
        if not ok:
            return False
    return True


def eval_naive(pattern: TreePattern, docs: list[Document]) -> list[Binding]:
    """Exhaustive enumeration oracle; sorted canonically."""
    n = len(pattern.nodes)
    order = _bfs_order(pattern)
    parent_of = {c: (p, axis) for p, c, axis in pattern.edges}
    results: list[Binding] = []

    for doc in docs:
        cands: list[list[StructuralId]] = []
        for pnode in pattern.nodes:
            labels = [
                node.label for node in doc.nodes if _node_matches(doc, node, pnode)
            ]
            if pnode.idx == 0 and pattern.root_axis == CHILD:
                labels = [lb for lb in labels if lb.depth == 1]
            cands.append(labels)
        if any(not c for c in cands):
            continue
        bound: list[StructuralId | None] = [None] * n

        def assign(k: int) -> None:
            if k == len(order):
                results.append(tuple(bound))  # type: ignore[arg-type]
                return
            idx = order[k]
            if idx == 0:
                for label in cands[0]:
                    bound[0] = label
                    assign(k + 1)
            else:
                p, axis = parent_of[idx]
                plabel = bound[p]
                for label in cands[idx]:
                    if axis_holds(axis, plabel, label):
                        bound[idx] = label
                        assign(k + 1)

        assign(0)

    return sort_bindings(pattern, results)


def _bfs_order(pattern: TreePattern) -> list[int]:
    order = [0]
    seen = {0}
    i = 0
    while i < len(order):
        for child, _ in pattern.children(order[i]):
            if child not in seen:
                seen.add(child)
                order.append(child)
        i += 1
    return order


# -- distributed evaluation -------------------------------------------------


class QueryCache:
    """Per-peer cache keyed by canonical pattern text, epoch-invalidated."""

    def __init__(self):
        self.entries: dict[str, tuple[int, tuple[Binding, ...]]] = {}
        self.hits = 0
        self.misses = 0

    def lookup(self, fingerprint: str, epoch: int) -> list[Binding] | None:
        entry = self.entries.get(fingerprint)
        if entry is not None and entry[0] == epoch:
            self.hits += 1
            return list(entry[1])
        self.misses += 1
        return None

    def store(self, fingerprint: str, epoch: int, bindings: list[Binding]) -> None:
        self.entries[fingerprint] = (epoch, tuple(bindings))


def fetch_candidates(
    pattern: TreePattern, via: PeerId, index: IndexService
) -> list[list[StructuralId]]:
    """One deduplicated, (doc, start)-sorted candidate list per node."""
    cands: list[list[StructuralId]] = []
    for pnode in pattern.nodes:
        if pnode.has_range:
            if pnode.is_wildcard:
                pool: set[StructuralId] = set()
                for tag in index.known_tags(via):
                    pool.update(
                        index.lookup_value_range(tag, pnode.lo, pnode.hi, via)
                    )
                labels = sorted(pool)
            else:
                labels = sorted(
                    set(index.lookup_value_range(pnode.name, pnode.lo, pnode.hi, via))
                )
        elif pnode.word is not None:
            words = set(index.lookup_word(pnode.word, via))
            if pnode.is_wildcard:
                labels = sorted(words)
            else:
                tags = set(index.lookup_tag(pnode.name, via))
                labels = sorted(tags & words)
        elif pnode.is_wildcard:
            labels = index.lookup_all(via)
        else:
            labels = sorted(set(index.lookup_tag(pnode.name, via)))
        if pnode.idx == 0 and pattern.root_axis == CHILD:
            labels = [lb for lb in labels if lb.depth == 1]
        cands.append(labels)
    return cands


def eval_distributed(
    pattern: TreePattern,
    via: PeerId,
    index: IndexService,
    cache: QueryCache | None = None,
) -> list[Binding]:
    """Index-backed holistic join; equals eval_naive over the full corpus."""
    if pattern.all_wildcard:
        raise UnsupportedWildcardRoot(
            "pattern has no named node to seed an index lookup"
        )
    fingerprint = canonical(pattern)
    if cache is not None:
        hit = cache.lookup(fingerprint, index.epoch)
        if hit is not None:
            return hit
    cands = fetch_candidates(pattern, via, index)
    bindings = holistic_join(pattern, cands)
    bindings = sort_bindings(pattern, bindings)
    if cache is not None:
        cache.store(fingerprint, index.epoch, bindings)
    return bindings


def holistic_join(
    pattern: TreePattern, cands: list[list[StructuralId]]
) -> list[Binding]:
    """Join candidate lists over the pattern's edges.

    Root-to-leaf paths are each evaluated with a per-path stack pass, then
    path solutions are merged on shared nodes.
    """
    if any(not c for c in cands):
        return []
    paths = _root_paths(pattern)
    merged: list[tuple[StructuralId, ...]] | None = None
    merged_vars: list[int] = []
    for path in paths:
        rows = _path_stack(pattern, path, cands)
        if merged is None:
            merged, merged_vars = rows, list(path)
        else:
            merged, merged_vars = _merge_on_shared(
                merged, merged_vars, rows, list(path)
            )
        if not merged:
            return []
    slot = {var: i for i, var in enumerate(merged_vars)}
    n = len(pattern.nodes)
    return [tuple(row[slot[i]] for i in range(n)) for row in merged]


def _root_paths(pattern: TreePattern) -> list[list[int]]:
    paths: list[list[int]] = []

    def walk(idx: int, acc: list[int]) -> None:
        acc = acc + [idx]
        kids = pattern.children(idx)
        if not kids:
            paths.append(acc)
            return
        for child, _ in kids:
            walk(child, acc)

    walk(0, [])
    return paths


def _path_stack(
    pattern: TreePattern, path: list[int], cands: list[list[StructuralId]]
) -> list[tuple[StructuralId, ...]]:
    """All matches of one root-to-leaf path, via a single merged-stream pass."""
    depth_axes = []
    for level in range(1, len(path)):
        edge = pattern.parent_edge(path[level])
        depth_axes.append(edge[1])  # type: ignore[index]

    stream: list[tuple[int, int, int, StructuralId]] = []
    for level, idx in enumerate(path):
        for label in cands[idx]:
            stream.append((label.doc_id, label.start, level, label))
    stream.sort(key=lambda item: item[:3])

    k = len(path)
    stacks: list[list[StructuralId]] = [[] for _ in range(k)]
    current_doc = None
    out: list[tuple[StructuralId, ...]] = []

    def emit(leaf: StructuralId) -> None:
        chosen: list[StructuralId | None] = [None] * k
        chosen[k - 1] = leaf

        def pick(level: int) -> None:
            if level < 0:
                out.append(tuple(chosen))  # type: ignore[arg-type]  # path order
                return
            below = chosen[level + 1]
            for entry in stacks[level]:
                if axis_holds(depth_axes[level], entry, below):
                    chosen[level] = entry
                    pick(level - 1)

        if k == 1:
            out.append((leaf,))
        else:
            pick(k - 2)

    for doc_id, start, level, label in stream:
        if doc_id != current_doc:
            current_doc = doc_id
            for st in stacks:
                st.clear()
        for st in stacks:
            while st and st[-1].end < start:
                st.pop()
        if level == k - 1:
            if k == 1 or stacks[level - 1]:
                emit(label)
        elif level == 0 or stacks[level - 1]:
            stacks[level].append(label)
    return out


def _merge_on_shared(
    left_rows: list[tuple[StructuralId, ...]],
    left_vars: list[int],
    right_rows: list[tuple[StructuralId, ...]],
    right_vars: list[int],
) -> tuple[list[tuple[StructuralId, ...]], list[int]]:
    shared = [v for v in right_vars if v in left_vars]
    right_extra = [i for i, v in enumerate(right_vars) if v not in left_vars]
    left_pos = {v: i for i, v in enumerate(left_vars)}
    right_pos = {v: i for i, v in enumerate(right_vars)}

    by_key: dict[tuple, list[tuple[StructuralId, ...]]] = {}
    for row in right_rows:
        key = tuple(row[right_pos[v]] for v in shared)
        by_key.setdefault(key, []).append(row)

    out_vars = left_vars + [right_vars[i] for i in right_extra]
    out_rows = []
    for row in left_rows:
        key = tuple(row[left_pos[v]] for v in shared)
        for match in by_key.get(key, ()):
            out_rows.append(row + tuple(match[i] for i in right_extra))
    return out_rows, out_vars
