"""Entity graph: canonicalized nodes, co-mention edges, sampling, and export.

Nodes are keyed by a canonical id (the first-seen variant, lowercased and
whitespace/punctuation-trimmed). The alias table additionally indexes every
variant's suffix-stripped form, so "AECOM", "Aecom Ltd." and "AECOM Corp."
resolve to one node while the stored aliases keep the three variants apart.
"""

from __future__ import annotations

import copy
import json
import random
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable
from xml.sax.saxutils import escape, quoteattr

from .corpus import StopwordLists, normalize_name
from .errors import ParseError, SameNode, SchemaVersionMismatch, UnknownNode

SCHEMA_VERSION = 1

EXPORT_FORMATS = ("graphml", "dot", "jsonl")


@dataclass
class EntityNode:
    canonical_id: str
    display_name: str
    aliases: set[str] = field(default_factory=set)
    descriptions: list[tuple[str, str]] = field(default_factory=list)
    categories: set[str] = field(default_factory=set)


@dataclass
class ComentionEdge:
    """Undirected edge; weight is defined as the number of provenance articles."""

    a: str
    b: str
    provenance: set[str] = field(default_factory=set)

    @property
    def weight(self) -> int:
        return len(self.provenance)


def _pair(x: str, y: str) -> tuple[str, str]:
    return (x, y) if x <= y else (y, x)


class SupplyChainGraph:
    def __init__(self, stopwords: StopwordLists | None = None):
        self.stopwords = stopwords if stopwords is not None else StopwordLists.default()
        self.nodes: dict[str, EntityNode] = {}
        self.edges: dict[tuple[str, str], ComentionEdge] = {}
        self.alias_table: dict[str, str] = {}

    # -- canonicalization -------------------------------------------------

    def _alias_key(self, raw_name: str) -> str:
        return normalize_name(raw_name)

    def _match_key(self, raw_name: str) -> str:
        return normalize_name(raw_name, self.stopwords)

    def canonicalize(self, raw_name: str) -> str | None:
        """Resolve a raw name to an existing canonical id, or None if new."""
        return self.alias_table.get(self._match_key(raw_name))

    def _register_variant(self, raw_name: str, canonical_id: str) -> None:
        node = self.nodes[canonical_id]
        alias = self._alias_key(raw_name)
        node.aliases.add(alias)
        self.alias_table[alias] = canonical_id
        self.alias_table[self._match_key(raw_name)] = canonical_id

    def upsert_entity(self, raw_name: str, description: str = "", article_id: str = "") -> str:
        """Insert or update the entity behind a raw name; returns its canonical id.

        A known variant adds the raw form as an alias and appends the
        (article_id, description) pair; an unseen name creates a node. Empty
        descriptions or article ids append nothing.
        """
        canonical_id = self.canonicalize(raw_name)
        if canonical_id is None:
            canonical_id = self._alias_key(raw_name)
            self.nodes[canonical_id] = EntityNode(
                canonical_id=canonical_id,
                display_name=raw_name.strip(),
                aliases={canonical_id},
            )
        self._register_variant(raw_name, canonical_id)
        node = self.nodes[canonical_id]
        if description and article_id:
            pair = (article_id, description)
            if pair not in node.descriptions:
                node.descriptions.append(pair)
        return canonical_id

    # -- edges -------------------------------------------------------------

    def add_comention(self, article_id: str, mentioned: Iterable[str]) -> int:
        """Record one article co-mentioning a set of canonical ids.

        Adds the article to the provenance of every unordered pair (creating
        edges as needed) and returns the number of pairs touched. Repeating an
        article is a no-op for weights.
        """
        ids = sorted(set(mentioned))
        for cid in ids:
            if cid not in self.nodes:
                raise UnknownNode(cid)
        touched = 0
        for x, y in combinations(ids, 2):
            key = _pair(x, y)
            edge = self.edges.get(key)
            if edge is None:
                edge = ComentionEdge(a=key[0], b=key[1])
                self.edges[key] = edge
            edge.provenance.add(article_id)
            touched += 1
        return touched

    def neighbors(self, canonical_id: str) -> list[str]:
        if canonical_id not in self.nodes:
            raise UnknownNode(canonical_id)
        out = []
        for a, b in self.edges:
            if a == canonical_id:
                out.append(b)
            elif b == canonical_id:
                out.append(a)
        return sorted(out)

    # -- merging -----------------------------------------------------------

    def merge_nodes(self, survivor: str, duplicate: str) -> None:
        """Fold the duplicate node into the survivor.

        Aliases, descriptions, and categories are unioned; edges are
        re-pointed with provenance unions; a resulting survivor-survivor
        self-loop is dropped; the alias table is re-targeted.
        """
        if survivor not in self.nodes:
            raise UnknownNode(survivor)
        if duplicate not in self.nodes:
            raise UnknownNode(duplicate)
        if survivor == duplicate:
            raise SameNode(survivor)
        surv = self.nodes[survivor]
        dup = self.nodes.pop(duplicate)
        surv.aliases |= dup.aliases
        for pair in dup.descriptions:
            if pair not in surv.descriptions:
                surv.descriptions.append(pair)
        surv.categories |= dup.categories
        for key in [k for k in self.edges if duplicate in k]:
            edge = self.edges.pop(key)
            other = edge.a if edge.b == duplicate else edge.b
            if other == survivor:
                continue  # self-loop after merge is dropped
            new_key = _pair(survivor, other)
            kept = self.edges.get(new_key)
            if kept is None:
                self.edges[new_key] = ComentionEdge(
                    a=new_key[0], b=new_key[1], provenance=set(edge.provenance)
                )
            else:
                kept.provenance |= edge.provenance
        for variant, target in list(self.alias_table.items()):
            if target == duplicate:
                self.alias_table[variant] = survivor

    # -- aliases from operators ---------------------------------------------

    def apply_aliases(self, mapping: dict[str, str]) -> None:
        """Apply operator-declared variant -> canonical-name pairs.

        Creates the canonical node when missing; when a variant already
        resolves to a different node, the two nodes are merged.
        """
        for variant, canonical_raw in mapping.items():
            target = self.canonicalize(canonical_raw)
            if target is None:
                target = self.upsert_entity(canonical_raw)
            existing = self.canonicalize(variant)
            if existing is not None and existing != target:
                self.merge_nodes(target, existing)
            self._register_variant(variant, target)

    # -- sampling ------------------------------------------------------------

    def sample_k_hop(self, seed: str, k: int, max_nodes: int, rng_seed: int) -> "SupplyChainGraph":
        """Induced subgraph of the k-hop neighborhood around a seed node.

        When the neighborhood exceeds max_nodes, a uniform seeded sample of
        max_nodes - 1 members is kept alongside the seed (which always stays).
        """
        if seed not in self.nodes:
            raise UnknownNode(seed)
        if k < 1:
            raise ValueError("k must be >= 1")
        if max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        reached: set[str] = {seed}
        frontier = deque([(seed, 0)])
        while frontier:
            cid, depth = frontier.popleft()
            if depth == k:
                continue
            for nb in self.neighbors(cid):
                if nb not in reached:
                    reached.add(nb)
                    frontier.append((nb, depth + 1))
        candidates = sorted(reached - {seed})
        if 1 + len(candidates) > max_nodes:
            rng = random.Random(rng_seed)
            keep = set(rng.sample(candidates, max_nodes - 1))
        else:
            keep = set(candidates)
        keep.add(seed)

        sub = SupplyChainGraph(self.stopwords)
        for cid in sorted(keep):
            sub.nodes[cid] = copy.deepcopy(self.nodes[cid])
        for (a, b), edge in self.edges.items():
            if a in keep and b in keep:
                sub.edges[(a, b)] = ComentionEdge(a=a, b=b, provenance=set(edge.provenance))
        for variant, target in self.alias_table.items():
            if target in keep:
                sub.alias_table[variant] = target
        return sub


def graph_equal(g1: SupplyChainGraph, g2: SupplyChainGraph) -> bool:
    """Structural equality: node contents, alias table, edges with provenance."""
    if set(g1.nodes) != set(g2.nodes) or g1.alias_table != g2.alias_table:
        return False
    for cid, node in g1.nodes.items():
        other = g2.nodes[cid]
        if (
            node.display_name != other.display_name
            or node.aliases != other.aliases
            or node.descriptions != other.descriptions
            or node.categories != other.categories
        ):
            return False
    if set(g1.edges) != set(g2.edges):
        return False
    return all(g1.edges[k].provenance == g2.edges[k].provenance for k in g1.edges)


# -- persistence -------------------------------------------------------------


def save_state(graph: SupplyChainGraph, path: str) -> None:
    """Write the full graph as versioned JSON with deterministic ordering."""
    state = {
        "schema_version": SCHEMA_VERSION,
        "stopwords": {
            "company_suffixes": sorted(graph.stopwords.company_suffixes),
            "general_stopwords": sorted(graph.stopwords.general_stopwords),
        },
        "nodes": [
            {
                "canonical_id": node.canonical_id,
                "display_name": node.display_name,
                "aliases": sorted(node.aliases),
                "descriptions": [list(p) for p in node.descriptions],
                "categories": sorted(node.categories),
            }
            for _, node in sorted(graph.nodes.items())
        ],
        "edges": [
            {"source": a, "target": b, "provenance": sorted(edge.provenance)}
            for (a, b), edge in sorted(graph.edges.items())
        ],
        "alias_table": {k: graph.alias_table[k] for k in sorted(graph.alias_table)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_state(path: str) -> SupplyChainGraph:
    """Load a graph saved by save_state; round-trips to an equal graph."""
    with open(path, encoding="utf-8") as fh:
        try:
            state = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad graph state JSON: {exc.msg}", path=str(path)) from exc
    if not isinstance(state, dict) or "schema_version" not in state:
        raise ParseError("graph state missing schema_version", path=str(path))
    if state["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"expected schema {SCHEMA_VERSION}, found {state['schema_version']}"
        )
    try:
        stopwords = StopwordLists(
            company_suffixes=frozenset(state["stopwords"]["company_suffixes"]),
            general_stopwords=frozenset(state["stopwords"]["general_stopwords"]),
        )
        graph = SupplyChainGraph(stopwords)
        for rec in state["nodes"]:
            graph.nodes[rec["canonical_id"]] = EntityNode(
                canonical_id=rec["canonical_id"],
                display_name=rec["display_name"],
                aliases=set(rec["aliases"]),
                descriptions=[tuple(p) for p in rec["descriptions"]],
                categories=set(rec["categories"]),
            )
        for rec in state["edges"]:
            key = _pair(rec["source"], rec["target"])
            graph.edges[key] = ComentionEdge(
                a=key[0], b=key[1], provenance=set(rec["provenance"])
            )
        graph.alias_table = dict(state["alias_table"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"graph state malformed: {exc}", path=str(path)) from exc
    return graph


def load_alias_file(path: str) -> dict[str, str]:
    """Read a TSV alias file: variant<TAB>canonical, one pair per line."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ParseError("alias line must be variant<TAB>canonical", path=str(path), line=lineno)
            mapping[parts[0].strip()] = parts[1].strip()
    return mapping


# -- exports -----------------------------------------------------------------


def _sorted_nodes(graph: SupplyChainGraph) -> list[EntityNode]:
    return [graph.nodes[cid] for cid in sorted(graph.nodes)]


def _sorted_edges(graph: SupplyChainGraph) -> list[ComentionEdge]:
    return [graph.edges[k] for k in sorted(graph.edges)]


def _to_graphml(graph: SupplyChainGraph) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="d0" for="node" attr.name="display_name" attr.type="string"/>',
        '  <key id="d1" for="node" attr.name="categories" attr.type="string"/>',
        '  <key id="d2" for="edge" attr.name="weight" attr.type="int"/>',
        '  <graph id="G" edgedefault="undirected">',
    ]
    for node in _sorted_nodes(graph):
        lines.append(f"    <node id={quoteattr(node.canonical_id)}>")
        lines.append(f"      <data key=\"d0\">{escape(node.display_name)}</data>")
        lines.append(f"      <data key=\"d1\">{escape(';'.join(sorted(node.categories)))}</data>")
        lines.append("    </node>")
    for edge in _sorted_edges(graph):
        lines.append(f"    <edge source={quoteattr(edge.a)} target={quoteattr(edge.b)}>")
        lines.append(f"      <data key=\"d2\">{edge.weight}</data>")
        lines.append("    </edge>")
    lines.append("  </graph>")
    lines.append("</graphml>")
    return "\n".join(lines) + "\n"


def _dot_quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _to_dot(graph: SupplyChainGraph) -> str:
    lines = ["graph supply_chain {"]
    for node in _sorted_nodes(graph):
        attrs = f"label={_dot_quote(node.display_name)}"
        if node.categories:
            attrs += f", categories={_dot_quote(';'.join(sorted(node.categories)))}"
        lines.append(f"  {_dot_quote(node.canonical_id)} [{attrs}];")
    for edge in _sorted_edges(graph):
        lines.append(f"  {_dot_quote(edge.a)} -- {_dot_quote(edge.b)} [weight={edge.weight}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _to_jsonl(graph: SupplyChainGraph) -> str:
    lines = []
    for node in _sorted_nodes(graph):
        lines.append(json.dumps(
            {
                "kind": "node",
                "id": node.canonical_id,
                "display_name": node.display_name,
                "categories": sorted(node.categories),
            },
            ensure_ascii=False,
        ))
    for edge in _sorted_edges(graph):
        lines.append(json.dumps(
            {"kind": "edge", "source": edge.a, "target": edge.b, "weight": edge.weight},
            ensure_ascii=False,
        ))
    return "".join(line + "\n" for line in lines)


_RENDERERS = {"graphml": _to_graphml, "dot": _to_dot, "jsonl": _to_jsonl}


def export_graph(graph: SupplyChainGraph, fmt: str, path: str) -> None:
    """Write the graph in one of graphml/dot/jsonl, byte-deterministically.

    Nodes are ordered by canonical id and edges by their ordered endpoint
    pair; an empty graph still yields a valid document.
    """
    if fmt not in _RENDERERS:
        raise ValueError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    text = _RENDERERS[fmt](graph)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
