"""Synthesis-constrained generation of fluorophore scaffolds.

Assembles candidate emitters from purchasable building blocks through a
library of reaction templates, steers the search with property predictors
trained on solvent-aware optical data, and filters the output down to a
diverse, novel shortlist.
"""

__version__ = "0.1.0"

from fluorgen.molgraph import (
    Atom,
    Bond,
    BondOrder,
    Hybridization,
    MolecularGraph,
    MoleculeError,
    perceive_hybridization,
    sp2_network_size,
)
from fluorgen.smiles import SmilesError, parse_smiles, write_canonical_smiles

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "Hybridization",
    "MolecularGraph",
    "MoleculeError",
    "SmilesError",
    "parse_smiles",
    "perceive_hybridization",
    "sp2_network_size",
    "write_canonical_smiles",
    "__version__",
]
