"""Generate the 6-31G FCIDUMP fixtures used by the test suite.

Integrals are written in the symmetrically orthonormalized AO basis
(S^-1/2), so the files do not depend on any SCF solution.

    python3 tools/gen_fcidumps.py [outdir]
"""
import os
import sys

import numpy as np
from pyscf import ao2mo, gto
from pyscf.tools import fcidump

BOHR = "Bohr"


def lih(r):
    return f"Li 0 0 0; H 0 0 {r}"


def be2(r):
    return f"Be 0 0 0; Be 0 0 {r}"


def h4(r1):
    # two H2 units of bond length r1 separated by r2, with r1 + r2 = 4.9
    r2 = 4.9 - r1
    x, y = r1 / 2, r2 / 2
    return f"H {-x} {-y} 0; H {x} {-y} 0; H {-x} {y} 0; H {x} {y} 0"


def systems():
    yield "be", "Be 0 0 0"
    yield "c", "C 0 0 0"
    for r in [2.0, 2.5, 2.75, 3.0, 3.5, 3.8, 3.9, 4.0, 4.1, 4.2, 4.3, 4.4,
              4.5, 5.0, 5.5, 6.0, 7.0]:
        yield f"lih_{r:.2f}", lih(r)
    for r1 in [1.40, 2.00, 2.45, 2.50]:
        yield f"h4_{r1:.2f}", h4(r1)
    for r in [4.00, 5.75]:
        yield f"be2_{r:.2f}", be2(r)


def write(name, atom, outdir):
    mol = gto.M(atom=atom, basis="6-31g", unit=BOHR, spin=0, verbose=0)
    s = mol.intor("int1e_ovlp")
    w, u = np.linalg.eigh(s)
    x = u @ np.diag(w ** -0.5) @ u.T
    h = x.T @ mol.intor("int1e_kin") @ x + x.T @ mol.intor("int1e_nuc") @ x
    eri = ao2mo.kernel(mol, x, compact=True)
    path = os.path.join(outdir, f"{name}.fcidump")
    fcidump.from_integrals(path, h, eri, x.shape[1], mol.nelectron,
                           nuc=mol.energy_nuc(), ms=0, tol=1e-12)
    print(path, x.shape[1], mol.nelectron)


if __name__ == "__main__":
    outdir = sys.argv[1] if len(sys.argv) > 1 else "data/fcidump"
    os.makedirs(outdir, exist_ok=True)
    for name, atom in systems():
        write(name, atom, outdir)
