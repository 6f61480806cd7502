import numpy as np
import pytest

from ieprot.chemistry import detect_hydrogen_bonds, infer_covalent_bonds, place_amide_hydrogens
from ieprot.multigraph import build_multigraph
from ieprot.pooling import build_hierarchy

from synth import ala_structure, coil_structure, helix_structure, make_backbone, STRAND


def pipeline(structure, include_inter_chain=True):
    """structure -> (graph, hierarchy) through the real ingestion path."""
    covalent = infer_covalent_bonds(structure)
    hydrogens, _ = place_amide_hydrogens(structure)
    hbonds = detect_hydrogen_bonds(structure, hydrogens, include_inter_chain)
    graph = build_multigraph(structure, covalent, hbonds)
    return graph, build_hierarchy(graph, structure)


@pytest.fixture(scope="session")
def ala():
    return ala_structure()


@pytest.fixture(scope="session")
def dipeptide():
    return make_backbone([STRAND] * 2)


@pytest.fixture(scope="session")
def dipeptide_hierarchy(dipeptide):
    return pipeline(dipeptide)[1]


@pytest.fixture(scope="session")
def helix():
    return helix_structure(12, with_cb=True)


@pytest.fixture(scope="session")
def helix_hierarchy(helix):
    return pipeline(helix)[1]


@pytest.fixture(scope="session")
def coil_hierarchy():
    rng = np.random.default_rng(11)
    return pipeline(coil_structure(rng, 10, with_cb=True))[1]
