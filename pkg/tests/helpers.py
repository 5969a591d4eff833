"""Shared test plumbing: random corpora, random patterns, cluster setup."""

from __future__ import annotations

import random

from twigstore.document import Document, parse_document
from twigstore.indexing import IndexService
from twigstore.netsim import Network
from twigstore.overlay import DhtService
from twigstore.pattern import TreePattern, parse_pattern

TAGS = ["a", "b", "c", "d", "e", "f"]
WORDS = ["xml", "dht", "web", "data", "peer", "query"]
ATTRS = ["id", "lang"]
INT_LO, INT_HI = 1990, 2010


def random_document_text(rng: random.Random, max_nodes: int = 60) -> str:
    """Random XML text: nested elements with words, integers, attributes."""
    budget = [rng.randint(1, max(1, max_nodes - 1))]

    def element(depth: int) -> str:
        tag = rng.choice(TAGS)
        attrs = ""
        if rng.random() < 0.15:
            attrs = f' {rng.choice(ATTRS)}="{rng.choice(WORDS)}"'
        children: list[str] = []
        while budget[0] > 0 and rng.random() < (0.65 if depth < 6 else 0.1):
            budget[0] -= 1
            roll = rng.random()
            if roll < 0.45:
                children.append(element(depth + 1))
            elif roll < 0.75:
                count = rng.randint(1, 3)
                children.append(" ".join(rng.choice(WORDS) for _ in range(count)))
            else:
                children.append(str(rng.randint(INT_LO, INT_HI)))
        if not children:
            return f"<{tag}{attrs}/>"
        return f"<{tag}{attrs}>" + "".join(children) + f"</{tag}>"

    return element(1)


def random_corpus(
    rng: random.Random, max_docs: int = 8, max_nodes: int = 30
) -> list[Document]:
    count = rng.randint(1, max_docs)
    return [
        parse_document(random_document_text(rng, max_nodes), doc_id)
        for doc_id in range(1, count + 1)
    ]


def random_pattern_text(
    rng: random.Random, max_nodes: int = 5, allow_wildcard: bool = True
) -> str:
    """Random pattern text within the grammar, at least one named node."""
    remaining = [rng.randint(1, max_nodes)]
    named = [False]

    def name() -> str:
        if allow_wildcard and rng.random() < 0.12:
            return "*"
        named[0] = True
        if rng.random() < 0.1:
            return "@" + rng.choice(ATTRS)
        return rng.choice(TAGS)

    def step(is_root: bool) -> str:
        remaining[0] -= 1
        axis = "//" if (is_root or rng.random() < 0.6) else "/"
        if not is_root and rng.random() < 0.4:
            axis = "/"
        text = axis + name()
        if not text.endswith("*"):
            roll = rng.random()
            if roll < 0.18:
                text += f'="{rng.choice(WORDS)}"'
            elif roll < 0.3:
                lo = rng.randint(INT_LO - 2, INT_HI)
                hi = lo + rng.randint(0, 8)
                text += f" in {lo}..{hi}"
        while remaining[0] > 0 and rng.random() < 0.5:
            text += "[" + step(False) + "]"
        if rng.random() < 0.3:
            text += "!"
        return text

    first = step(True)
    if not named[0]:
        first = "//" + rng.choice(TAGS) + "[" + first + "]"
    return first


def random_pattern(
    rng: random.Random, max_nodes: int = 5, allow_wildcard: bool = True
) -> TreePattern:
    return parse_pattern(random_pattern_text(rng, max_nodes, allow_wildcard))


def make_cluster(
    peer_count: int = 4,
    hash_mode: str = "fnv",
    shortcut: bool = False,
    with_range: bool = True,
) -> tuple[Network, DhtService, IndexService]:
    net = Network()
    dht = DhtService(net)
    peers = list(range(1, peer_count + 1))
    for peer in peers:
        dht.add_peer(peer)
    dht.create_hash_overlay(0, mode=hash_mode, shortcut=shortcut)
    if with_range:
        dht.create_range_overlay(1)
    for peer in peers:
        dht.join(0, peer)
        if with_range:
            dht.join(1, peer)
    index = IndexService(dht, 0, 1 if with_range else None)
    return net, dht, index


def index_corpus(
    index: IndexService, docs: list[Document], peers: list[int]
) -> dict[int, tuple[Document, int]]:
    """Index docs round-robin over peers; returns the doc -> home map."""
    homes: dict[int, tuple[Document, int]] = {}
    for doc in docs:
        home = peers[(doc.doc_id - 1) % len(peers)]
        homes[doc.doc_id] = (doc, home)
        index.index_document(doc, home)
    return homes


def skew_cluster(big: int, small: int):
    """Corpus with ``big`` postings of one tag and ``small`` of another, on
    two distinct peers, neither of them the query peer (peer 1).

    Every small element sits under its own big element, so the child-axis
    join yields exactly ``small`` rows.
    """
    from twigstore import planner
    from twigstore.pattern import parse_pattern

    net, dht, index = make_cluster(6)
    ov = dht.overlays[0]
    query_peer = 1
    tags: dict[str, int] = {}
    for i in range(400):
        name = f"k{i}"
        owner = ov.owner_of("t:" + name)
        if owner != query_peer and owner not in tags.values():
            tags[name] = owner
        if len(tags) >= 2:
            break
    (big_tag, _), (small_tag, _) = list(tags.items())[:2]
    parts = []
    for i in range(big):
        if i < small:
            parts.append(f"<{big_tag}><{small_tag}/></{big_tag}>")
        else:
            parts.append(f"<{big_tag}/>")
    doc = parse_document("<r>" + "".join(parts) + "</r>", 1)
    homes = index_corpus(index, [doc], [2, 3, 4, 5, 6])
    ctx = planner.ExecutionContext(index, homes)
    builder = planner.PlanBuilder(
        0, 1, lambda dht_id, key: dht.overlays[dht_id].owner_of(key), query_peer
    )
    pattern = parse_pattern(f"//{big_tag}[/{small_tag}]!")
    return net, index, ctx, builder, pattern, (big_tag, small_tag), doc
