"""Storage/query service facade with interchangeable backends.

The centralized backend keeps documents in one process and answers
pattern queries with the naive evaluator.  The p2p backend hosts a
simulated peer network with the configured overlays, indexes every
ingested document, and answers queries through the decompose -> rewrite ->
place -> execute pipeline.  Both backends return identical resource lists
for the same corpus; the p2p result additionally carries the network
stats delta its evaluation produced.

Resource access is O(1): looking up a resource id costs exactly one
resource-index probe (the p2p backend first resolves the owning peer via
the overlay, then probes that peer's index once).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import planner
from .document import (
    Document,
    Resource,
    StructuralId,
    extract_resources,
    parse_document,
    serialize_document,
    serialize_node,
)
from .errors import CorruptSnapshot, IoFailure, NotFound, UnsupportedWildcardRoot
from .indexing import IndexService
from .netsim import Network, NetworkStats, PeerId
from .overlay import DhtService, fnv1a64
from .pattern import TreePattern, parse_pattern
from .rdfstore import (
    ConjunctiveQuery,
    Triple,
    eval_conjunctive,
    eval_nested_loop,
    index_triples,
)
from .twigjoin import Binding, QueryCache, eval_naive

CENTRALIZED = "centralized"
P2P = "p2p"


@dataclass
class StoreConfig:
    backend: str = CENTRALIZED
    peer_count: int = 4
    overlays: list[tuple[int, str]] = field(
        default_factory=lambda: [(0, "hash"), (1, "range")]
    )
    resource_granularity: set[str] = field(default_factory=set)
    snapshot_path: str = "store.snap"
    seed: int = 0

    def validate(self) -> None:
        if self.backend not in (CENTRALIZED, P2P):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == P2P:
            if self.peer_count < 1:
                raise ValueError("p2p backend needs peer_count >= 1")
            if not any(kind == "hash" for _, kind in self.overlays):
                raise ValueError("p2p backend needs at least one hash overlay")
        ids = [dht_id for dht_id, _ in self.overlays]
        if len(ids) != len(set(ids)):
            raise ValueError("overlay ids must be unique")
        for _, kind in self.overlays:
            if kind not in ("hash", "range"):
                raise ValueError(f"unknown overlay kind {kind!r}")

    def to_text(self) -> str:
        overlays = ",".join(f"{i}:{kind}" for i, kind in self.overlays)
        granularity = ",".join(sorted(self.resource_granularity))
        return (
            f"backend={self.backend}\n"
            f"peer_count={self.peer_count}\n"
            f"overlays={overlays}\n"
            f"resource_granularity={granularity}\n"
            f"snapshot_path={self.snapshot_path}\n"
            f"seed={self.seed}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "StoreConfig":
        config = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "backend":
                config.backend = value
            elif key == "peer_count":
                config.peer_count = int(value)
            elif key == "overlays":
                config.overlays = []
                for item in filter(None, value.split(",")):
                    dht_id, _, kind = item.partition(":")
                    config.overlays.append((int(dht_id), kind))
            elif key == "resource_granularity":
                config.resource_granularity = set(filter(None, value.split(",")))
            elif key == "snapshot_path":
                config.snapshot_path = value
            elif key == "seed":
                config.seed = int(value)
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        config.validate()
        return config


@dataclass
class QueryResult:
    resources: list[Resource]
    stats: NetworkStats


class Store:
    """The storage service; construct via ``Store(config)``."""

    def __init__(self, config: StoreConfig):
        config.validate()
        self.config = config
        self.documents: dict[int, Document] = {}
        self.doc_texts: dict[int, str] = {}
        self.triples: list[Triple] = []
        self.probe_count = 0
        self._next_doc_id = 1
        self._zero_stats = NetworkStats()

        if config.backend == CENTRALIZED:
            self.resources: dict[str, Resource] = {}
            return

        self.net = Network()
        self.dht = DhtService(self.net)
        self.members: list[PeerId] = list(range(1, config.peer_count + 1))
        for peer in self.members:
            self.dht.add_peer(peer)
        self.hash_dht: int | None = None
        self.range_dht: int | None = None
        for dht_id, kind in config.overlays:
            if kind == "hash":
                self.dht.create_hash_overlay(dht_id)
                if self.hash_dht is None:
                    self.hash_dht = dht_id
            else:
                self.dht.create_range_overlay(dht_id)
                if self.range_dht is None:
                    self.range_dht = dht_id
            for peer in self.members:
                self.dht.join(dht_id, peer)
        self.index = IndexService(self.dht, self.hash_dht, self.range_dht)
        self.doc_homes: dict[int, tuple[Document, PeerId]] = {}
        self.exec_ctx = planner.ExecutionContext(self.index, self.doc_homes)
        self.caches: dict[PeerId, QueryCache] = {p: QueryCache() for p in self.members}
        self.peer_resources: dict[PeerId, dict[str, Resource]] = {
            p: {} for p in self.members
        }
        self.query_peer: PeerId = self.members[0]

    # -- ingest ------------------------------------------------------------

    def store_resource(self, xml_text: str) -> list[str]:
        doc_id = self._next_doc_id
        doc = parse_document(xml_text, doc_id)
        self._next_doc_id += 1
        return self._register(doc)

    def _register(self, doc: Document) -> list[str]:
        doc_id = doc.doc_id
        self.documents[doc_id] = doc
        self.doc_texts[doc_id] = serialize_document(doc)
        resources = extract_resources(doc, self.config.resource_granularity)
        if self.config.backend == CENTRALIZED:
            for res in resources:
                self.resources[res.resource_id] = res
            return [res.resource_id for res in resources]

        home = self.members[(doc_id - 1) % len(self.members)]
        self.doc_homes[doc_id] = (doc, home)
        for res in resources:
            self.peer_resources[home][res.resource_id] = res
            self.dht.put(
                self.hash_dht, home, "r:" + res.resource_id, struct.pack(">Q", home)
            )
        self.dht.put(self.hash_dht, home, f"d:{doc_id}", struct.pack(">Q", home))
        self.index.index_document(doc, home)
        return [res.resource_id for res in resources]

    # -- resource access ----------------------------------------------------

    def get_resource(self, resource_id: str) -> Resource:
        if self.config.backend == CENTRALIZED:
            self.probe_count += 1
            resource = self.resources.get(resource_id)
            if resource is None:
                raise NotFound(f"no resource {resource_id!r}")
            return resource
        values = self.dht.get(self.hash_dht, self.query_peer, "r:" + resource_id)
        if not values:
            raise NotFound(f"no resource {resource_id!r}")
        (home,) = struct.unpack(">Q", values[0])
        self.probe_count += 1
        return self.peer_resources[home][resource_id]

    # -- queries ------------------------------------------------------------

    def query(self, text: str) -> QueryResult:
        pattern = parse_pattern(text)
        if pattern.all_wildcard:
            # both backends refuse, keeping them interchangeable
            raise UnsupportedWildcardRoot(
                "pattern has no named node to seed an index lookup"
            )
        if self.config.backend == CENTRALIZED:
            bindings = eval_naive(pattern, list(self.documents.values()))
            return QueryResult(self._bindings_to_resources(pattern, bindings),
                               NetworkStats())
        before = self.net.stats.copy()
        plan = self.build_plan(pattern, with_recompose=True)
        result, _ = planner.execute(plan, self.exec_ctx)
        delta = self.net.stats.delta_since(before)
        return QueryResult(result, delta)

    def build_plan(self, pattern: TreePattern, with_recompose: bool) -> planner.Plan:
        dec = planner.decompose(pattern)
        builder = planner.PlanBuilder(
            self.hash_dht,
            self.range_dht,
            lambda dht_id, key: self.dht.overlays[dht_id].owner_of(key),
            self.query_peer,
        )
        plan = builder.build(dec, with_recompose=with_recompose)
        plan = planner.rewrite(plan, planner.default_rules(), 16, self.index.stats)
        return planner.place(plan, self.index.stats, self.query_peer)

    def _bindings_to_resources(
        self, pattern: TreePattern, bindings: list[Binding]
    ) -> list[Resource]:
        targets: list[StructuralId] = []
        seen: set[StructuralId] = set()
        for binding in bindings:
            for idx in pattern.return_nodes:
                sid = binding[idx]
                if sid not in seen:
                    seen.add(sid)
                    targets.append(sid)
        targets.sort()
        out = []
        for sid in targets:
            doc = self.documents[sid.doc_id]
            out.append(
                Resource(
                    f"{sid.doc_id}#{sid.start}", sid.doc_id, sid,
                    serialize_node(doc, doc.node_by_start(sid.start).label),
                )
            )
        return out

    # -- rdf ------------------------------------------------------------------

    def rdf_load(self, triples: list[Triple]) -> int:
        self.triples.extend(triples)
        if self.config.backend == P2P:
            index_triples(triples, self.query_peer, self.dht, self.hash_dht)
        return len(triples)

    def rdf_query(self, query: ConjunctiveQuery) -> list[tuple[str, ...]]:
        if self.config.backend == CENTRALIZED:
            return eval_nested_loop(query, self.triples)
        return eval_conjunctive(query, self.query_peer, self.dht, self.hash_dht)

    # -- stats -------------------------------------------------------------------

    @property
    def stats(self) -> NetworkStats:
        if self.config.backend == CENTRALIZED:
            return self._zero_stats
        return self.net.stats

    def stats_report(self) -> str:
        return self.stats.report()


# -- snapshot format -------------------------------------------------------------

_MAGIC = b"TWIGSNAP1\n"


def _record(tag: bytes, payload: bytes) -> bytes:
    assert len(tag) == 4
    return tag + struct.pack(">Q", len(payload)) + payload


def snapshot(store: Store, path: str) -> None:
    """Write documents, resources, triples, config, and stats to ``path``."""
    blob = bytearray(_MAGIC)
    blob += _record(b"CONF", store.config.to_text().encode("utf-8"))
    for doc_id in sorted(store.documents):
        payload = struct.pack(">Q", doc_id) + store.doc_texts[doc_id].encode("utf-8")
        blob += _record(b"DOC\x00", payload)
    for resource in _all_resources(store):
        payload = (
            struct.pack(
                ">QQQQQ",
                resource.doc_id,
                resource.root_label.start,
                resource.root_label.end,
                resource.root_label.depth,
                len(resource.resource_id.encode("utf-8")),
            )
            + resource.resource_id.encode("utf-8")
            + resource.payload.encode("utf-8")
        )
        blob += _record(b"RSRC", payload)
    for triple in store.triples:
        blob += _record(b"TRPL", triple.text().encode("utf-8"))
    blob += _record(b"NSTA", store.stats.report().encode("utf-8"))
    blob += struct.pack(">Q", fnv1a64(bytes(blob)))
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from None


def _all_resources(store: Store) -> list[Resource]:
    if store.config.backend == CENTRALIZED:
        items = list(store.resources.values())
    else:
        items = [
            res for peer in store.members
            for res in store.peer_resources[peer].values()
        ]
    return sorted(items, key=lambda r: (r.doc_id, r.root_label.start))


def restore(path: str) -> Store:
    """Rebuild an equivalent store from a snapshot file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    if len(blob) < len(_MAGIC) + 8 or not blob.startswith(_MAGIC):
        raise CorruptSnapshot("bad magic or truncated file")
    body, checksum = blob[:-8], struct.unpack(">Q", blob[-8:])[0]
    if fnv1a64(body) != checksum:
        raise CorruptSnapshot("checksum mismatch")

    records: list[tuple[bytes, bytes]] = []
    off = len(_MAGIC)
    while off < len(body):
        if off + 12 > len(body):
            raise CorruptSnapshot("truncated record header")
        tag = body[off : off + 4]
        (length,) = struct.unpack_from(">Q", body, off + 4)
        off += 12
        if off + length > len(body):
            raise CorruptSnapshot("truncated record payload")
        records.append((tag, body[off : off + length]))
        off += length

    if not records or records[0][0] != b"CONF":
        raise CorruptSnapshot("missing CONFIG record")
    config = StoreConfig.from_text(records[0][1].decode("utf-8"))
    store = Store(config)

    saved_resources: list[tuple[int, StructuralId, str, str]] = []
    saved_report = ""
    for tag, payload in records[1:]:
        if tag == b"DOC\x00":
            (doc_id,) = struct.unpack_from(">Q", payload, 0)
            xml_text = payload[8:].decode("utf-8")
            doc = parse_document(xml_text, doc_id)
            store._register(doc)
            store._next_doc_id = max(store._next_doc_id, doc_id + 1)
        elif tag == b"RSRC":
            doc_id, start, end, depth, id_len = struct.unpack_from(">QQQQQ", payload, 0)
            rid = payload[40 : 40 + id_len].decode("utf-8")
            text = payload[40 + id_len :].decode("utf-8")
            saved_resources.append(
                (doc_id, StructuralId(doc_id, start, end, depth), rid, text)
            )
        elif tag == b"TRPL":
            store.rdf_load([Triple.from_text(payload.decode("utf-8"))])
        elif tag == b"NSTA":
            saved_report = payload.decode("utf-8")
        else:
            raise CorruptSnapshot(f"unknown record tag {tag!r}")

    _verify_resources(store, saved_resources)
    if config.backend == P2P:
        _restore_stats(store.net.stats, saved_report)
    return store


def _verify_resources(
    store: Store, saved: list[tuple[int, StructuralId, str, str]]
) -> None:
    rebuilt = {
        res.resource_id: res for res in _all_resources(store)
    }
    if len(rebuilt) != len(saved):
        raise CorruptSnapshot("resource records disagree with rebuilt documents")
    for doc_id, label, rid, text in saved:
        res = rebuilt.get(rid)
        if res is None or res.root_label != label or res.payload != text:
            raise CorruptSnapshot(f"resource {rid!r} does not match its document")


def _restore_stats(stats: NetworkStats, report: str) -> None:
    stats.per_edge.clear()
    stats.messages_sent = 0
    stats.bytes_sent = 0
    for line in report.splitlines():
        parts = line.split()
        if len(parts) != 4:  # skips the 3-token totals line
            continue
        frm, to, msgs, byts = (int(p) for p in parts)
        stats.per_edge[(frm, to)] = [msgs, byts]
        stats.messages_sent += msgs
        stats.bytes_sent += byts