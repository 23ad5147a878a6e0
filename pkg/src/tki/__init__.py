"""Z2 invariants of time-reversal symmetric band Hamiltonians.

Subpackages
-----------
linalg      dense kernels: Hermitian eigensolver wrapper, Pfaffian, polar, phase tracking
models      registry of gapped Bloch Hamiltonian families + sampled-Hamiltonian ingest
bloch       BZ grids, frame fields, smooth gauges, sewing matrices, Berry connections
eqforms     cubical cochain calculus and the fixed-point localisation descent
invariants  the five Kane-Mele routes and the cross-validated report
sphere      S3 angular meshes and the hemisphere descent for continuum Dirac models
cli         command line front end (`tki`)
"""

__version__ = "0.1.0"
