"""XML documents with interval-encoded structural labels.

Every node (element, attribute, text) of a parsed document carries a
StructuralId ``(doc_id, start, end, depth)``.  Start/end values are drawn
from one counter in a single left-to-right pass: an element consumes one
value when it opens and one when it closes; attribute and text nodes
consume a single value (start == end).  Ancestry is then pure interval
containment, which is what the distributed structural joins rely on.

Attributes are modeled as child nodes named ``"@name"`` so tree patterns
can address them like elements; the attribute's value is kept on the node
for serialization and is not word-indexed.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import EmptyInput, MalformedXml, UnknownNode

ELEMENT = "element"
TEXT = "text"
ATTRIBUTE = "attribute"

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)
_INT_RE = re.compile(r"[+-]?[0-9]+")


@dataclass(frozen=True, slots=True, order=True)
class StructuralId:
    """Interval label of one node; orders by (doc_id, start)."""

    doc_id: int
    start: int
    end: int
    depth: int


@dataclass(frozen=True, slots=True)
class Node:
    node_id: int
    kind: str
    name_or_value: str
    label: StructuralId
    attr_value: str = ""

    @property
    def name(self) -> str:
        return self.name_or_value


@dataclass(slots=True)
class Document:
    """Parsed XML document; immutable after construction.

    ``nodes`` is in document (start) order, with the root first.
    """

    doc_id: int
    root: Node = field(init=False)
    nodes: list[Node] = field(default_factory=list)
    _children: dict[int, list[Node]] = field(default_factory=dict)
    _by_start: dict[int, Node] = field(default_factory=dict)

    def finish(self) -> None:
        self.root = self.nodes[0]
        for node in self.nodes:
            self._by_start[node.label.start] = node

    def node_at(self, label: StructuralId) -> Node:
        node = self._by_start.get(label.start)
        if node is None or node.label != label or label.doc_id != self.doc_id:
            raise UnknownNode(f"no node labeled {label} in document {self.doc_id}")
        return node

    def node_by_start(self, start: int) -> Node:
        node = self._by_start.get(start)
        if node is None:
            raise UnknownNode(f"no node at start {start} in document {self.doc_id}")
        return node

    def children(self, node: Node) -> list[Node]:
        return self._children.get(node.node_id, [])

    def text_children(self, node: Node) -> list[str]:
        return [c.name_or_value for c in self.children(node) if c.kind == TEXT]


@dataclass(frozen=True, slots=True)
class Resource:
    """A storable/returnable unit: a document or one of its subtrees."""

    resource_id: str
    doc_id: int
    root_label: StructuralId
    payload: str


def is_ancestor(a: StructuralId, d: StructuralId) -> bool:
    """Strict interval containment within one document."""
    return a.doc_id == d.doc_id and a.start < d.start and d.end < a.end


def is_parent(a: StructuralId, d: StructuralId) -> bool:
    return is_ancestor(a, d) and d.depth == a.depth + 1


def split_words(text: str) -> list[str]:
    """Lowercased alphanumeric runs of ``text``, in occurrence order."""
    return _WORD_RE.findall(text.lower())


def parse_int_content(text: str) -> int | None:
    """The integer value of a text node whose full content is a decimal int."""
    stripped = text.strip()
    if _INT_RE.fullmatch(stripped):
        return int(stripped)
    return None


def parse_document(xml_text: str, doc_id: int) -> Document:
    """Parse ``xml_text`` and assign interval labels in one counter pass.

    Whitespace-only text nodes are dropped so payloads stay canonical.
    Raises EmptyInput for blank input and MalformedXml for anything the
    XML tokenizer rejects (including trailing content after the root).
    """
    if not xml_text.strip():
        raise EmptyInput("no XML content")
    try:
        root_elem = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None

    doc = Document(doc_id=doc_id)
    counter = [0]
    ids = [0]

    def next_pos() -> int:
        counter[0] += 1
        return counter[0]

    def next_id() -> int:
        ids[0] += 1
        return ids[0]

    def leaf(kind: str, text: str, depth: int, value: str = "") -> Node:
        pos = next_pos()
        node = Node(next_id(), kind, text, StructuralId(doc_id, pos, pos, depth), value)
        doc.nodes.append(node)
        return node

    def walk(elem: ET.Element, depth: int) -> Node:
        start = next_pos()
        node_id = next_id()
        slot = len(doc.nodes)
        doc.nodes.append(None)  # type: ignore[arg-type]  # filled once end is known
        kids: list[Node] = []
        for name, value in elem.attrib.items():
            kids.append(leaf(ATTRIBUTE, "@" + name, depth + 1, value))
        if elem.text and elem.text.strip():
            kids.append(leaf(TEXT, elem.text, depth + 1))
        for child in elem:
            kids.append(walk(child, depth + 1))
            if child.tail and child.tail.strip():
                kids.append(leaf(TEXT, child.tail, depth + 1))
        end = next_pos()
        node = Node(node_id, ELEMENT, elem.tag, StructuralId(doc_id, start, end, depth))
        doc.nodes[slot] = node
        if kids:
            doc._children[node_id] = kids
        return node

    walk(root_elem, 1)
    doc.finish()
    return doc


_TEXT_ESCAPES = [("&", "&amp;"), ("<", "&lt;"), (">", "&gt;")]
_ATTR_ESCAPES = _TEXT_ESCAPES + [('"', "&quot;")]


def _escape(value: str, table) -> str:
    for raw, rep in table:
        value = value.replace(raw, rep)
    return value


def serialize_subtree(doc: Document, root_label: StructuralId) -> str:
    """Canonical XML text of the subtree rooted at ``root_label``.

    No XML declaration, attributes in document order, no added whitespace;
    childless elements serialize self-closed.  Only element nodes are
    addressable.
    """
    node = doc.node_at(root_label)
    if node.kind != ELEMENT:
        raise UnknownNode(f"label {root_label} is not an element node")
    out: list[str] = []
    _write(doc, node, out)
    return "".join(out)


def _write(doc: Document, node: Node, out: list[str]) -> None:
    attrs = []
    content = []
    for child in doc.children(node):
        if child.kind == ATTRIBUTE:
            attrs.append(child)
        else:
            content.append(child)
    out.append("<" + node.name)
    for a in attrs:
        out.append(f' {a.name[1:]}="{_escape(a.attr_value, _ATTR_ESCAPES)}"')
    if not content:
        out.append("/>")
        return
    out.append(">")
    for child in content:
        if child.kind == TEXT:
            out.append(_escape(child.name_or_value, _TEXT_ESCAPES))
        else:
            _write(doc, child, out)
    out.append("</" + node.name + ">")


def serialize_document(doc: Document) -> str:
    return serialize_subtree(doc, doc.root.label)


def serialize_node(doc: Document, label: StructuralId) -> str:
    """Like serialize_subtree, but attribute nodes render as a small element.

    Query results may return attribute nodes; ``<name>value</name>`` keeps
    their payloads well-formed XML.
    """
    node = doc.node_at(label)
    if node.kind == ATTRIBUTE:
        name = node.name[1:]
        return f"<{name}>{_escape(node.attr_value, _TEXT_ESCAPES)}</{name}>"
    return serialize_subtree(doc, label)


def extract_resources(doc: Document, granularity: set[str]) -> list[Resource]:
    """One resource for the root plus one per element named in ``granularity``.

    Resource ids are ``"<doc_id>#<start>"``; attribute and text nodes are
    never resources.
    """
    resources = [_make_resource(doc, doc.root)]
    for node in doc.nodes:
        if node.kind == ELEMENT and node is not doc.root and node.name in granularity:
            resources.append(_make_resource(doc, node))
    return resources


def _make_resource(doc: Document, node: Node) -> Resource:
    label = node.label
    return Resource(
        resource_id=f"{doc.doc_id}#{label.start}",
        doc_id=doc.doc_id,
        root_label=label,
        payload=serialize_subtree(doc, label),
    )
