import numpy as np
import pytest

from fluorgen.fingerprints import (
    FEATURE_DIM,
    FP_BITS,
    Fingerprint,
    SolventFeatures,
    build_feature_vector,
    feature_matrix,
    morgan_fingerprint,
    stable_hash,
    tanimoto,
)
from fluorgen.smiles import parse_smiles

from corpus import CORPUS
from randmol import permute_graph, random_molecule


def fp(smiles):
    return morgan_fingerprint(parse_smiles(smiles))


class TestStableHash:
    def test_pinned_values(self):
        # Frozen so an accidental hash change cannot slip through unnoticed.
        assert stable_hash((1, 2, 3)) == stable_hash((1, 2, 3))
        assert stable_hash((1, 2, 3)) != stable_hash((3, 2, 1))
        assert stable_hash(()) == 0x52FD1E9A84C2B0F7

    def test_negative_values_deterministic(self):
        assert stable_hash((-1,)) == stable_hash(((1 << 64) - 1,))


class TestMorganEnvironments:
    def test_methane_single_environment(self):
        assert fp("C").count() == 1

    def test_ethane_two_environments(self):
        assert fp("CC").count() == 2

    def test_benzene_three_environments(self):
        # One distinct invariant per radius: all atoms are equivalent.
        assert fp("c1ccccc1").count() == 3

    def test_atom_order_invariant_simple(self):
        assert fp("CCO").bits == fp("OCC").bits

    def test_corpus_permutation_invariant(self):
        rng = np.random.default_rng(99)
        for smi in CORPUS[::4]:
            graph = parse_smiles(smi)
            want = morgan_fingerprint(graph).bits
            for _ in range(3):
                perm = list(rng.permutation(len(graph)))
                assert morgan_fingerprint(permute_graph(graph, perm)).bits == want

    def test_disconnected_fragment_never_clears_bits(self):
        rng = np.random.default_rng(4242)
        for _ in range(50):
            base = random_molecule(rng)
            extra = random_molecule(rng)
            combined_atoms = list(base.atoms)
            offset = len(base)
            from dataclasses import replace

            from fluorgen.molgraph import Bond, MolecularGraph

            for atom in extra.atoms:
                combined_atoms.append(replace(atom, index=atom.index + offset))
            combined_bonds = list(base.bonds) + [
                Bond(b.a1 + offset, b.a2 + offset, b.order) for b in extra.bonds
            ]
            combined = MolecularGraph(tuple(combined_atoms), tuple(combined_bonds))
            before = morgan_fingerprint(base).bits
            after = morgan_fingerprint(combined).bits
            assert before & after == before

    def test_different_molecules_differ(self):
        assert fp("c1ccccc1").bits != fp("C1CCCCC1").bits

    def test_charge_changes_bits(self):
        assert fp("CC(=O)O").bits != fp("CC(=O)[O-]").bits


class TestTanimoto:
    def test_frozen_small_cases(self):
        a = Fingerprint(bits=0b1100, nbits=8)
        b = Fingerprint(bits=0b0110, nbits=8)
        assert tanimoto(a, b) == pytest.approx(1 / 3)
        assert tanimoto(a, a) == 1.0

    def test_empty_pair_is_one(self):
        empty = Fingerprint(bits=0, nbits=8)
        assert tanimoto(empty, empty) == 1.0

    def test_empty_vs_nonempty_is_zero(self):
        empty = Fingerprint(bits=0, nbits=8)
        full = Fingerprint(bits=0b1, nbits=8)
        assert tanimoto(empty, full) == 0.0

    def test_symmetry(self):
        a, b = fp("CCO"), fp("CCN")
        assert tanimoto(a, b) == tanimoto(b, a)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tanimoto(Fingerprint(bits=1, nbits=8), Fingerprint(bits=1, nbits=16))

    def test_triangle_inequality_random(self):
        rng = np.random.default_rng(31337)
        for _ in range(1000):
            trio = []
            for _ in range(3):
                mask = 0
                for bit in rng.choice(64, size=rng.integers(0, 20), replace=False):
                    mask |= 1 << int(bit)
                trio.append(Fingerprint(bits=mask, nbits=64))
            a, b, c = trio
            dab = 1.0 - tanimoto(a, b)
            dbc = 1.0 - tanimoto(b, c)
            dac = 1.0 - tanimoto(a, c)
            assert dac <= dab + dbc + 1e-12


class TestFeatureVector:
    WATER = SolventFeatures(sp=0.681, sdp=0.997, sa=1.062, sb=0.025)

    def test_dimensions_and_order(self):
        vec = build_feature_vector(fp("c1ccccc1"), self.WATER)
        assert vec.shape == (FEATURE_DIM,)
        assert vec[FP_BITS:].tolist() == [0.681, 0.997, 1.062, 0.025]
        assert set(np.unique(vec[:FP_BITS])) <= {0.0, 1.0}

    def test_all_finite(self):
        vec = build_feature_vector(fp("CCO"), self.WATER)
        assert np.isfinite(vec).all()

    def test_nonfinite_solvent_rejected(self):
        with pytest.raises(ValueError):
            SolventFeatures(sp=float("nan"), sdp=0.0, sa=0.0, sb=0.0)

    def test_matrix_matches_vectors(self):
        fps = [fp("CCO"), fp("c1ccccc1")]
        sols = [self.WATER, SolventFeatures(0.1, 0.2, 0.3, 0.4)]
        mat = feature_matrix(fps, sols)
        assert mat.shape == (2, FEATURE_DIM)
        for row in range(2):
            np.testing.assert_array_equal(mat[row], build_feature_vector(fps[row], sols[row]))
