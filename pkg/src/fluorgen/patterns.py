"""Restricted substructure query language for reaction role patterns.

The grammar is a small, documented subset of the usual substructure
notation (see docs/formats.md for the EBNF): bare element symbols
(uppercase aliphatic, lowercase aromatic), bracket expressions combining
primitives with ';' (AND) where an element list 'A,B,c' is an OR over
alternatives, degree D<n>, hydrogen count H<n>, ring membership R / R0,
and formal charge. Bonds: - = # : plus '~' for any order; a bare
juxtaposition means single-or-aromatic. Branches and single-digit ring
closures mirror SMILES structure.

Matching enumerates injective subgraph monomorphisms: query edges must
exist in the target with a satisfying order, extra target bonds are fine.
"""

from __future__ import annotations

from dataclasses import dataclass

from fluorgen.molgraph import SUPPORTED_ELEMENTS, BondOrder, MolecularGraph

_AROMATIC_LETTERS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_BOND_KINDS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic", "~": "any"}


class PatternError(ValueError):
    """Malformed pattern text; ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class AtomPattern:
    """Conjunction of primitives for one query node.

    ``elements`` holds (element, aromatic) alternatives, or None when the
    pattern does not constrain the element.
    """

    elements: tuple[tuple[str, bool], ...] | None = None
    degree: int | None = None
    h_count: int | None = None
    in_ring: bool | None = None
    charge: int | None = None

    def matches(self, graph: MolecularGraph, index: int) -> bool:
        atom = graph.atoms[index]
        if self.elements is not None:
            if not any(
                atom.element == el and atom.aromatic == arom
                for el, arom in self.elements
            ):
                return False
        if self.degree is not None and graph.degree(index) != self.degree:
            return False
        if self.h_count is not None and graph.total_h(index) != self.h_count:
            return False
        if self.in_ring is not None and graph.in_ring(index) != self.in_ring:
            return False
        if self.charge is not None and atom.formal_charge != self.charge:
            return False
        return True


@dataclass(frozen=True)
class BondPattern:
    a1: int
    a2: int
    kind: str  # single | double | triple | aromatic | any | default

    def matches(self, order: BondOrder) -> bool:
        if self.kind == "any":
            return True
        if self.kind == "default":
            return order in (BondOrder.SINGLE, BondOrder.AROMATIC)
        return {
            "single": BondOrder.SINGLE,
            "double": BondOrder.DOUBLE,
            "triple": BondOrder.TRIPLE,
            "aromatic": BondOrder.AROMATIC,
        }[self.kind] is order


@dataclass(frozen=True)
class PatternQuery:
    """Connected query graph; node count >= 1."""

    text: str
    atoms: tuple[AtomPattern, ...]
    bonds: tuple[BondPattern, ...]

    def __post_init__(self):
        if not self.atoms:
            raise PatternError("pattern has no atoms", 0)
        # Connectivity check over the query graph.
        seen = {0}
        frontier = [0]
        adj: dict[int, list[int]] = {}
        for bond in self.bonds:
            adj.setdefault(bond.a1, []).append(bond.a2)
            adj.setdefault(bond.a2, []).append(bond.a1)
        while frontier:
            node = frontier.pop()
            for nbr in adj.get(node, []):
                if nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        if len(seen) != len(self.atoms):
            raise PatternError("pattern must be connected", 0)


def parse_pattern(text: str) -> PatternQuery:
    """Parse query text into a PatternQuery.

    Raises:
        PatternError: on syntax errors or unsupported primitives, with the
            offending primitive named in the message.
    """
    if not text or not text.strip():
        raise PatternError("empty pattern", 0)
    atoms: list[AtomPattern] = []
    bonds: list[tuple[int, int, str]] = []
    prev: int | None = None
    pending: str | None = None
    pending_offset = 0
    branch_stack: list[int] = []
    ring_open: dict[int, tuple[int, str | None, int]] = {}
    i = 0
    n = len(text)

    def attach(idx: int) -> None:
        nonlocal prev, pending
        if prev is not None:
            bonds.append((prev, idx, pending if pending is not None else "default"))
        elif pending is not None:
            raise PatternError("bond with no preceding atom", pending_offset)
        pending = None
        prev = idx

    while i < n:
        ch = text[i]
        if ch in _BOND_KINDS:
            if pending is not None:
                raise PatternError("two bond symbols in a row", i)
            pending = _BOND_KINDS[ch]
            pending_offset = i
            i += 1
        elif ch == "(":
            if prev is None:
                raise PatternError("branch before any atom", i)
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise PatternError("unbalanced parenthesis", i)
            prev = branch_stack.pop()
            i += 1
        elif ch.isdigit():
            if prev is None:
                raise PatternError("ring closure before any atom", i)
            num = int(ch)
            if num in ring_open:
                other, other_kind, _ = ring_open.pop(num)
                kind = pending or other_kind or "default"
                if pending and other_kind and pending != other_kind:
                    raise PatternError("ring closure bond symbols disagree", i)
                if other == prev:
                    raise PatternError("ring closure to the same atom", i)
                bonds.append((other, prev, kind))
            else:
                ring_open[num] = (prev, pending, i)
            pending = None
            i += 1
        elif ch == "[":
            pattern, consumed = _parse_bracket_pattern(text, i)
            atoms.append(pattern)
            attach(len(atoms) - 1)
            i += consumed
        elif ch.isupper():
            two = text[i: i + 2]
            if two in ("Cl", "Br", "Si"):
                atoms.append(AtomPattern(elements=((two, False),)))
                attach(len(atoms) - 1)
                i += 2
            elif ch in SUPPORTED_ELEMENTS:
                atoms.append(AtomPattern(elements=((ch, False),)))
                attach(len(atoms) - 1)
                i += 1
            else:
                raise PatternError(f"unsupported primitive {ch!r}", i)
        elif ch in _AROMATIC_LETTERS:
            atoms.append(AtomPattern(elements=((_AROMATIC_LETTERS[ch], True),)))
            attach(len(atoms) - 1)
            i += 1
        else:
            raise PatternError(f"unsupported primitive {ch!r}", i)

    if pending is not None:
        raise PatternError("dangling bond at end of pattern", pending_offset)
    if branch_stack:
        raise PatternError("unbalanced parenthesis", n - 1)
    if ring_open:
        num, (_, _, off) = min(ring_open.items(), key=lambda kv: kv[1][2])
        raise PatternError(f"unmatched ring closure {num}", off)
    return PatternQuery(
        text=text,
        atoms=tuple(atoms),
        bonds=tuple(BondPattern(a, b, kind) for a, b, kind in bonds),
    )


def _parse_bracket_pattern(text: str, start: int) -> tuple[AtomPattern, int]:
    end = text.find("]", start)
    if end == -1:
        raise PatternError("unterminated bracket", start)
    body = text[start + 1: end]
    if not body:
        raise PatternError("empty bracket", start)
    elements: list[tuple[str, bool]] = []
    degree = h_count = charge = None
    in_ring = None
    offset = start + 1
    for part in body.split(";"):
        if not part:
            raise PatternError("empty primitive", offset)
        if _looks_like_element_list(part):
            for sym in part.split(","):
                if sym in ("Cl", "Br", "Si") or (len(sym) == 1 and sym in SUPPORTED_ELEMENTS):
                    elements.append((sym, False))
                elif sym in _AROMATIC_LETTERS:
                    elements.append((_AROMATIC_LETTERS[sym], True))
                else:
                    raise PatternError(f"unsupported primitive {sym!r}", offset)
        elif part[0] == "D":
            if len(part) < 2 or not part[1:].isdigit():
                raise PatternError(f"unsupported primitive {part!r}", offset)
            degree = int(part[1:])
        elif part[0] == "H":
            if len(part) == 1:
                h_count = 1
            elif part[1:].isdigit():
                h_count = int(part[1:])
            else:
                raise PatternError(f"unsupported primitive {part!r}", offset)
        elif part == "R":
            in_ring = True
        elif part == "R0":
            in_ring = False
        elif part[0] in "+-":
            sign = 1 if part[0] == "+" else -1
            if len(part) == 1:
                charge = sign
            elif part[1:].isdigit():
                charge = sign * int(part[1:])
            elif all(c == part[0] for c in part):
                charge = sign * len(part)
            else:
                raise PatternError(f"unsupported primitive {part!r}", offset)
        else:
            raise PatternError(f"unsupported primitive {part!r}", offset)
        offset += len(part) + 1
    return (
        AtomPattern(
            elements=tuple(elements) if elements else None,
            degree=degree,
            h_count=h_count,
            in_ring=in_ring,
            charge=charge,
        ),
        end - start + 1,
    )


def _looks_like_element_list(part: str) -> bool:
    pieces = part.split(",")
    if len(pieces) > 1:
        return True
    p = pieces[0]
    if p in ("Cl", "Br", "Si"):
        return True
    if len(p) == 1 and (p in SUPPORTED_ELEMENTS or p in _AROMATIC_LETTERS):
        # Bare 'H', 'R', 'D' never reach here: H/R are not in the supported
        # element set and D is not an element at all.
        return p not in ("H",)
    return False


def match_pattern(
    query: PatternQuery, graph: MolecularGraph, limit: int | None = None
) -> list[tuple[int, ...]]:
    """All injective mappings of query nodes onto graph atoms.

    Entry k of a result tuple is the target atom matched to query node k.
    Results are sorted; passing ``limit`` stops the search early once that
    many mappings exist (used for cheap any-match checks).
    """
    n_query = len(query.atoms)
    adj: dict[int, list[tuple[int, BondPattern]]] = {k: [] for k in range(n_query)}
    for bond in query.bonds:
        adj[bond.a1].append((bond.a2, bond))
        adj[bond.a2].append((bond.a1, bond))

    # Visit order: BFS from node 0 so every later node touches a mapped one.
    order = [0]
    seen = {0}
    queue = [0]
    while queue:
        node = queue.pop(0)
        for nbr, _ in adj[node]:
            if nbr not in seen:
                seen.add(nbr)
                order.append(nbr)
                queue.append(nbr)

    results: list[tuple[int, ...]] = []
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def backtrack(pos: int) -> bool:
        if pos == n_query:
            results.append(tuple(mapping[k] for k in range(n_query)))
            return limit is not None and len(results) >= limit
        q = order[pos]
        mapped_nbrs = [(nbr, bond) for nbr, bond in adj[q] if nbr in mapping]
        if mapped_nbrs:
            anchor, _ = mapped_nbrs[0]
            candidates = sorted(j for j, _ in graph.neighbors(mapping[anchor]))
        else:
            candidates = range(len(graph))
        for j in candidates:
            if j in used or not query.atoms[q].matches(graph, j):
                continue
            ok = True
            for nbr, bond in mapped_nbrs:
                target_bond = graph.bond_between(j, mapping[nbr])
                if target_bond is None or not bond.matches(target_bond.order):
                    ok = False
                    break
            if not ok:
                continue
            mapping[q] = j
            used.add(j)
            if backtrack(pos + 1):
                return True
            del mapping[q]
            used.remove(j)
        return False

    backtrack(0)
    return sorted(results)


def has_match(query: PatternQuery, graph: MolecularGraph) -> bool:
    return bool(match_pattern(query, graph, limit=1))
