"""SMILES reading and canonical writing for the supported organic subset.

Covers the organic subset plus bracket atoms (charge, hydrogen count,
isotopes), aromatic lowercase notation, single/double/triple/aromatic
bonds, branches, ring closures (including %nn), and dot-separated
fragments. Stereo markers (/, \\, @, @@) and isotope labels are accepted
and discarded; the graph model carries no stereochemistry.

Parse errors report a 0-based character offset into the input string.
"""

from __future__ import annotations

import heapq

from fluorgen.molgraph import (
    SUPPORTED_ELEMENTS,
    ATOMIC_NUMBER,
    Atom,
    Bond,
    BondOrder,
    MolecularGraph,
    MoleculeError,
    _fill_valences,
)

_ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
_AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_TWO_LETTER = ("Cl", "Br", "Si")
_BOND_CHARS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE,
               "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


class SmilesError(ValueError):
    """Malformed SMILES input; ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a molecular graph.

    Args:
        text: SMILES within the supported subset.

    Returns:
        The parsed graph, hydrogens implicit where the notation allows.

    Raises:
        SmilesError: on syntax problems, unknown elements, unbalanced
            parentheses, unmatched ring closures, or valence violations.
    """
    if not text or not text.strip():
        raise SmilesError("empty SMILES", 0)
    atoms: list[Atom] = []
    atom_offsets: list[int] = []
    bonds: list[Bond] = []
    bond_pairs: set[tuple[int, int]] = set()
    prev_atom: int | None = None
    pending: BondOrder | None = None
    pending_offset = 0
    branch_stack: list[tuple[int, int]] = []
    ring_open: dict[int, tuple[int, BondOrder | None, int]] = {}
    fragment_has_atom = False
    i = 0
    n = len(text)

    def add_bond(a: int, b: int, order: BondOrder, offset: int) -> None:
        if a == b:
            raise SmilesError("ring closure bonds an atom to itself", offset)
        pair = (min(a, b), max(a, b))
        if pair in bond_pairs:
            raise SmilesError("duplicate bond between the same atoms", offset)
        bond_pairs.add(pair)
        bonds.append(Bond(a, b, order))

    def add_atom(atom: Atom, offset: int) -> None:
        nonlocal prev_atom, pending, fragment_has_atom
        atoms.append(atom)
        atom_offsets.append(offset)
        idx = atom.index
        if prev_atom is not None:
            order = pending
            if order is None:
                both_aromatic = atoms[prev_atom].aromatic and atom.aromatic
                order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
            add_bond(prev_atom, idx, order, offset)
        elif pending is not None:
            raise SmilesError("bond symbol with no preceding atom", pending_offset)
        pending = None
        prev_atom = idx
        fragment_has_atom = True

    while i < n:
        ch = text[i]
        if ch in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two bond symbols in a row", i)
            pending = _BOND_CHARS[ch]
            pending_offset = i
            i += 1
        elif ch in "/\\":
            # Directional single bond; geometry is discarded.
            if pending is not None:
                raise SmilesError("two bond symbols in a row", i)
            pending = BondOrder.SINGLE
            pending_offset = i
            i += 1
        elif ch == "(":
            if prev_atom is None:
                raise SmilesError("branch before any atom", i)
            if pending is not None:
                raise SmilesError("bond symbol before branch open", pending_offset)
            branch_stack.append((prev_atom, i))
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced parenthesis", i)
            if pending is not None:
                raise SmilesError("dangling bond before branch close", pending_offset)
            prev_atom, _ = branch_stack.pop()
            i += 1
        elif ch == ".":
            if branch_stack:
                raise SmilesError("dot inside a branch", i)
            if pending is not None:
                raise SmilesError("bond symbol before dot", pending_offset)
            if not fragment_has_atom:
                raise SmilesError("empty fragment", i)
            prev_atom = None
            fragment_has_atom = False
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = text[i + 1: i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("% ring closure needs two digits", i)
                num = int(digits)
                width = 3
            else:
                num = int(ch)
                width = 1
            if prev_atom is None:
                raise SmilesError("ring closure before any atom", i)
            if num in ring_open:
                other, other_order, other_off = ring_open.pop(num)
                order = pending
                if order is not None and other_order is not None and order is not other_order:
                    raise SmilesError("ring closure bond symbols disagree", i)
                if order is None:
                    order = other_order
                if order is None:
                    both = atoms[other].aromatic and atoms[prev_atom].aromatic
                    order = BondOrder.AROMATIC if both else BondOrder.SINGLE
                add_bond(other, prev_atom, order, i)
            else:
                ring_open[num] = (prev_atom, pending, i)
            pending = None
            i += width
        elif ch == "[":
            atom, consumed = _parse_bracket(text, i, len(atoms))
            add_atom(atom, i)
            i += consumed
        elif ch.isupper():
            sym = text[i: i + 2]
            if sym == "Cl" or sym == "Br":
                add_atom(Atom(index=len(atoms), element=sym), i)
                i += 2
            elif ch in _ORGANIC_SUBSET:
                add_atom(Atom(index=len(atoms), element=ch), i)
                i += 1
            else:
                raise SmilesError(f"unknown element {ch!r}", i)
        elif ch in _AROMATIC_ORGANIC:
            add_atom(
                Atom(index=len(atoms), element=_AROMATIC_ORGANIC[ch], aromatic=True), i
            )
            i += 1
        elif ch.isspace():
            raise SmilesError("whitespace inside SMILES", i)
        else:
            raise SmilesError(f"unexpected character {ch!r}", i)

    if pending is not None:
        raise SmilesError("dangling bond at end of input", pending_offset)
    if branch_stack:
        raise SmilesError("unbalanced parenthesis", branch_stack[-1][1])
    if ring_open:
        num, (_, _, off) = min(ring_open.items(), key=lambda kv: kv[1][2])
        raise SmilesError(f"unmatched ring closure {num}", off)
    if not fragment_has_atom:
        raise SmilesError("empty fragment", n - 1)
    try:
        return MolecularGraph(tuple(atoms), tuple(bonds))
    except MoleculeError as exc:
        offset = atom_offsets[exc.atom_index] if exc.atom_index is not None else 0
        raise SmilesError(str(exc), offset) from exc


def _parse_bracket(text: str, start: int, index: int) -> tuple[Atom, int]:
    """Parse one bracket atom beginning at ``text[start] == '['``.

    Returns the atom and the number of characters consumed. Isotope labels
    and chirality marks are skipped.
    """
    i = start + 1
    n = len(text)
    while i < n and text[i].isdigit():
        i += 1  # isotope, discarded
    if i >= n:
        raise SmilesError("unterminated bracket atom", start)
    element = None
    aromatic = False
    two = text[i: i + 2]
    if two in _TWO_LETTER:
        element = two
        i += 2
    elif text[i].isupper() and text[i] in SUPPORTED_ELEMENTS:
        element = text[i]
        i += 1
    elif text[i] in _AROMATIC_ORGANIC:
        element = _AROMATIC_ORGANIC[text[i]]
        aromatic = True
        i += 1
    else:
        raise SmilesError(f"unknown element in bracket: {text[i]!r}", i)
    while i < n and text[i] == "@":
        i += 1  # chirality, discarded
    h_count = 0
    if i < n and text[i] == "H":
        i += 1
        digits = ""
        while i < n and text[i].isdigit():
            digits += text[i]
            i += 1
        h_count = int(digits) if digits else 1
    charge = 0
    if i < n and text[i] in "+-":
        sign = 1 if text[i] == "+" else -1
        symbol = text[i]
        i += 1
        digits = ""
        while i < n and text[i].isdigit():
            digits += text[i]
            i += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while i < n and text[i] == symbol:
                charge += sign
                i += 1
    if i < n and text[i] == ":":
        i += 1
        if i >= n or not text[i].isdigit():
            raise SmilesError("atom class expects digits", i if i < n else start)
        while i < n and text[i].isdigit():
            i += 1  # atom map class, discarded
    if i >= n or text[i] != "]":
        raise SmilesError("unterminated bracket atom", start)
    atom = Atom(
        index=index,
        element=element,
        aromatic=aromatic,
        formal_charge=charge,
        explicit_h=h_count,
    )
    return atom, i - start + 1


# --- canonical writing -----------------------------------------------------

_CANONICAL_BRANCH_LIMIT = 256


def write_canonical_smiles(graph: MolecularGraph) -> str:
    """Serialize a graph to a canonical SMILES string.

    Atom output order comes from iterative neighborhood refinement over
    (element, charge, degree, hydrogen count, aromaticity); remaining ties
    are broken by exploring each symmetric choice and keeping the
    lexicographically smallest string, so isomorphic graphs serialize
    identically. Fragments are sorted and joined with dots.
    """
    if len(graph) == 0:
        raise ValueError("cannot write SMILES for an empty graph")
    pieces = [_fragment_canonical(graph, comp) for comp in connected_components(graph)]
    return ".".join(sorted(pieces))


def connected_components(graph: MolecularGraph) -> list[list[int]]:
    """Atom index lists of the connected components, in first-atom order."""
    seen = [False] * len(graph)
    comps = []
    for start in range(len(graph)):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            node = stack.pop()
            comp.append(node)
            for nbr, _ in graph.neighbors(node):
                if not seen[nbr]:
                    seen[nbr] = True
                    stack.append(nbr)
        comps.append(sorted(comp))
    return comps


def _initial_keys(graph: MolecularGraph, subset: list[int]) -> dict[int, tuple]:
    keys = {}
    for i in subset:
        atom = graph.atoms[i]
        keys[i] = (
            ATOMIC_NUMBER[atom.element],
            atom.formal_charge,
            graph.degree(i),
            graph.total_h(i),
            atom.aromatic,
        )
    return keys


def _dense_ranks(keys: dict[int, tuple]) -> dict[int, int]:
    order = {key: rank for rank, key in enumerate(sorted(set(keys.values())))}
    return {i: order[key] for i, key in keys.items()}


def _refine(graph: MolecularGraph, ranks: dict[int, int]) -> dict[int, int]:
    while True:
        n_classes = len(set(ranks.values()))
        keys = {}
        for i in ranks:
            nbr_part = sorted(
                (bond.order.value, ranks[j]) for j, bond in graph.neighbors(i)
            )
            keys[i] = (ranks[i], tuple(nbr_part))
        new_ranks = _dense_ranks(keys)
        if len(set(new_ranks.values())) == n_classes:
            return new_ranks
        ranks = new_ranks


def _fragment_canonical(graph: MolecularGraph, subset: list[int]) -> str:
    ranks = _refine(graph, _dense_ranks(_initial_keys(graph, subset)))
    best: list[str | None] = [None]
    leaves = [0]

    def explore(current: dict[int, int]) -> None:
        by_rank: dict[int, list[int]] = {}
        for i, r in current.items():
            by_rank.setdefault(r, []).append(i)
        tied = sorted(r for r, members in by_rank.items() if len(members) > 1)
        if not tied:
            leaves[0] += 1
            s = _emit(graph, current)
            if best[0] is None or s < best[0]:
                best[0] = s
            return
        members = sorted(by_rank[tied[0]])
        for chosen in members:
            if leaves[0] >= _CANONICAL_BRANCH_LIMIT and best[0] is not None:
                break
            keys = {i: (r, 0 if i == chosen else 1) for i, r in current.items()}
            explore(_refine(graph, _dense_ranks(keys)))

    explore(ranks)
    assert best[0] is not None
    return best[0]


def _emit(graph: MolecularGraph, ranks: dict[int, int]) -> str:
    start = min(ranks, key=lambda i: ranks[i])
    parent: dict[int, int | None] = {start: None}
    children: dict[int, list[int]] = {i: [] for i in ranks}
    visit_order: dict[int, int] = {}
    back_bonds: list[Bond] = []
    back_seen: set[int] = set()
    counter = 0
    stack = [start]
    claimed = {start}
    while stack:
        node = stack.pop()
        visit_order[node] = counter
        counter += 1
        nbrs = sorted(
            ((j, bond) for j, bond in graph.neighbors(node)), key=lambda t: ranks[t[0]]
        )
        fresh = []
        for j, bond in nbrs:
            if j == parent[node]:
                continue
            if j in claimed:
                if id(bond) not in back_seen:
                    back_seen.add(id(bond))
                    back_bonds.append(bond)
            else:
                claimed.add(j)
                parent[j] = node
                children[node].append(j)
                fresh.append(j)
        for j in reversed(fresh):
            stack.append(j)

    ring_at: dict[int, list[Bond]] = {i: [] for i in ranks}
    for bond in back_bonds:
        ring_at[bond.a1].append(bond)
        ring_at[bond.a2].append(bond)
    for i in ring_at:
        ring_at[i].sort(key=lambda b: visit_order[b.a2 if b.a1 == i else b.a1])

    free_digits = list(range(1, 100))
    heapq.heapify(free_digits)
    open_digit: dict[int, int] = {}

    def ring_tokens(node: int) -> str:
        out = []
        for bond in ring_at[node]:
            bid = id(bond)
            if bid in open_digit:
                digit = open_digit.pop(bid)
                out.append(_digit_token(digit))
                heapq.heappush(free_digits, digit)
            else:
                digit = heapq.heappop(free_digits)
                open_digit[bid] = digit
                out.append(_bond_symbol(graph, bond) + _digit_token(digit))
        return "".join(out)

    def build(node: int) -> str:
        parts = [_atom_token(graph, node), ring_tokens(node)]
        kids = children[node]
        for pos, child in enumerate(kids):
            bond = graph.bond_between(node, child)
            assert bond is not None
            sym = _bond_symbol(graph, bond)
            sub = build(child)
            if pos < len(kids) - 1:
                parts.append("(" + sym + sub + ")")
            else:
                parts.append(sym + sub)
        return "".join(parts)

    return build(start)


def _digit_token(digit: int) -> str:
    return str(digit) if digit <= 9 else f"%{digit:02d}"


def _bond_symbol(graph: MolecularGraph, bond: Bond) -> str:
    a = graph.atoms[bond.a1]
    b = graph.atoms[bond.a2]
    if bond.order is BondOrder.SINGLE:
        return "-" if (a.aromatic and b.aromatic) else ""
    if bond.order is BondOrder.DOUBLE:
        return "="
    if bond.order is BondOrder.TRIPLE:
        return "#"
    return "" if (a.aromatic and b.aromatic) else ":"


def _bare_inferred_h(graph: MolecularGraph, index: int) -> int:
    """Hydrogen count a reader would infer for this atom written bare."""
    atom = graph.atoms[index]
    k = 0
    other = 0
    for _, bond in graph.neighbors(index):
        if bond.order is BondOrder.AROMATIC:
            k += 1
        else:
            other += bond.order.value
    if k == 0:
        used = other
    elif atom.element in ("C", "B"):
        used = other + k + 1
    elif atom.element in ("N", "P"):
        used = other + (k + 1 if (k == 2 and other == 0) else k)
    else:
        used = other + k
    for v in _fill_valences(atom.element, 0):
        if v >= used:
            return v - used
    return 0


def _atom_token(graph: MolecularGraph, index: int) -> str:
    atom = graph.atoms[index]
    total_h = graph.total_h(index)
    bare_allowed = (
        atom.formal_charge == 0
        and atom.element in _ORGANIC_SUBSET
        and _bare_inferred_h(graph, index) == total_h
    )
    symbol = atom.element.lower() if atom.aromatic else atom.element
    if bare_allowed:
        return symbol
    if total_h == 0:
        h_part = ""
    elif total_h == 1:
        h_part = "H"
    else:
        h_part = f"H{total_h}"
    q = atom.formal_charge
    if q == 0:
        q_part = ""
    elif q == 1:
        q_part = "+"
    elif q == -1:
        q_part = "-"
    elif q > 1:
        q_part = f"+{q}"
    else:
        q_part = f"-{-q}"
    return f"[{symbol}{h_part}{q_part}]"
