"""Kane-Mele invariant of a gapped time-reversal symmetric band model.

Five independent routes to the same Z2 parity:

* ``km_trim_pfaffian``  — product of sewing-matrix Pfaffians over the
  inversion-fixed momenta of an SU-reduced sewing field;
* ``km_plane_invariant`` / ``km_weak_strong`` — the 2D invariant of each
  inversion-stable plane from Berry fluxes over half the plane and boundary
  Berry phases in a time-reversal-constrained ring gauge, combined into weak
  and strong 3D indices;
* ``km_wzw`` — the degree integral of the sewing map, whose parity is the
  invariant;
* ``km_winding`` — the same integral resummed as a one-parameter family of
  slice contributions;
* ``km_chern_simons`` — the Chern-Simons integral of the quaternionically
  averaged Berry connection, related to the degree integral by a factor -1/2.

``assemble_report`` collects any subset of method outputs into a
cross-validated report with a consensus flag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grids import BZGrid
from .linalg import pfaffian, polar_unitary, phase_continue, kramers_canonical
from .bloch import (FrameField, SewingField, ConnectionField, _mm, _dag,
                    wzw_density, plane_flux_sum)

_W0 = np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex)


class InvariantError(ValueError):
    pass


class NonSkewTrim(InvariantError):
    pass


class PfaffianOffCircle(InvariantError):
    pass


class BoundaryGaugeFailure(InvariantError):
    pass


class AxisInconsistency(InvariantError):
    pass


class NonConvergent(InvariantError):
    pass


class UnaveragedConnection(InvariantError):
    pass


def _round_parity(raw: float, lattice: float = 1.0, slack: float = 0.25):
    """Round raw/lattice to the nearest integer and return ((-1)^n, residual);
    refuse to round when the distance exceeds the slack."""
    x = raw / lattice
    n = int(round(x))
    resid = abs(x - n)
    if resid > slack:
        raise NonConvergent(
            f"value {raw:.4f} is {resid:.3f} lattice units from the nearest "
            "admissible point")
    return (-1) ** (n % 2), resid


def km_trim_pfaffian(wfield: SewingField):
    """Parity from the sewing-matrix Pfaffians at the inversion-fixed nodes.

    Requires an SU-reduced field (unit determinant everywhere); each Pfaffian
    then lies on the unit circle and, being real at a fixed node, equals ±1
    up to discretization noise.  Returns (parity, pfaffians in the order of
    grid.trims).
    """
    grid = wfield.grid
    pfs = []
    for t in grid.trims:
        W = wfield.w[t]
        if np.abs(W + W.T).max() > 1e-8:
            raise NonSkewTrim(f"sewing matrix at fixed node {t} is not skew")
        pf = pfaffian(0.5 * (W - W.T))
        if abs(abs(pf) - 1.0) > 1e-4:
            raise PfaffianOffCircle(
                f"|pf| = {abs(pf):.6f} at fixed node {t}; gauge too rough")
        pfs.append(complex(pf))
    signs = [1 if p.real > 0 else -1 for p in pfs]
    parity = int(np.prod(signs))
    return parity, pfs


def _ring_tr_gauge(ring: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Impose a time-reversal-constrained gauge on a closed inversion-stable
    ring of frames (index j ~ momentum, inversion j -> -j mod N).

    At the two fixed points the sewing matrix is rotated to the standard
    symplectic form; between them the gauge is parallel-transported with the
    endpoint mismatch spread evenly along the path, and the second half of
    the ring is the time-reversal mirror of the first.
    """
    N, m = ring.shape[0], ring.shape[-1]
    half = N // 2
    v = ring.copy()
    for t_ in (0, half):
        s = v[t_].conj().T @ U @ v[t_].conj()
        if np.abs(s + s.T).max() > 1e-6:
            raise BoundaryGaugeFailure(
                "sewing matrix at a ring fixed point is not skew; the ring "
                "is not inversion-stable or the bands are not gapped on it")
        v[t_] = v[t_] @ kramers_canonical(s)
    # transport the canonical frame at j=0 along the half ring
    for j in range(1, half + 1):
        v[j] = v[j] @ polar_unitary(v[j].conj().T @ v[j - 1])
    # spread the endpoint mismatch so both fixed-point frames stay canonical
    canon = ring[half] @ kramers_canonical(
        ring[half].conj().T @ U @ ring[half].conj())
    mism = v[half].conj().T @ canon
    ev, P = np.linalg.eig(mism)
    L = P @ np.diag(np.log(ev)) @ np.linalg.inv(P)
    for j in range(1, half + 1):
        corr = P @ np.diag(np.exp((j / half) * np.log(ev))) @ np.linalg.inv(P)
        v[j] = v[j] @ polar_unitary(corr)
    # mirror half: the partner of j is N - j
    for j in range(1, half):
        v[N - j] = -(U @ v[j].conj()) @ _trivial_sewing(m)
    return v


def _trivial_sewing(m: int) -> np.ndarray:
    blocks = [_W0] * (m // 2)
    out = np.zeros((m, m), dtype=complex)
    for i in range(m // 2):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = _W0
    return out


def _ring_phase_sum(v: np.ndarray) -> float:
    """Total Berry phase of a ring gauge: sum of principal link-det phases."""
    link = np.einsum("jba,jbc->jac", v.conj(), np.roll(v, -1, axis=0))
    dets = np.linalg.det(link)
    if np.abs(dets).min() < 1e-8:
        raise BoundaryGaugeFailure("degenerate ring link; undersampled ring")
    return float(np.angle(dets).sum())


def km_plane_invariant(frames2d: FrameField, theta) -> tuple:
    """The 2D invariant of an inversion-stable plane.

    Berry fluxes are summed over the half plane n1 in [N/2, N-1] (they are
    gauge independent, so the raw frames suffice), while the two boundary
    rings n1 = N/2 and n1 = 0 get time-reversal-constrained gauges whose
    Berry phases close the Stokes balance.  The total is 2*pi times an
    integer whose parity is the invariant.  Returns (parity, raw integer
    estimate before rounding).
    """
    grid = frames2d.grid
    if grid.dim != 2:
        raise InvariantError("plane invariant expects a 2-d frame field")
    u = frames2d.frames
    n1 = grid.sizes[1]
    U = theta.U
    a_bottom = _ring_phase_sum(_ring_tr_gauge(u[:, n1 // 2], U))
    a_top = _ring_phase_sum(_ring_tr_gauge(u[:, 0], U))
    link0 = np.einsum("ijba,ijbc->ijac", u.conj(), np.roll(u, -1, axis=0))
    link1 = np.einsum("ijba,ijbc->ijac", u.conj(), np.roll(u, -1, axis=1))
    d0 = np.linalg.det(link0)
    d1 = np.linalg.det(link1)
    plaq = d0 * np.roll(d1, -1, axis=0) * np.roll(d0, -1, axis=1).conj() \
        * d1.conj()
    flux = np.angle(plaq)
    fsum = float(flux[:, n1 // 2:].sum())
    raw = (a_top - a_bottom - fsum) / (2 * np.pi)
    parity, _ = _round_parity(raw)
    return parity, raw


def km_plane_pfaffian(wfield: SewingField) -> tuple:
    """Oracle for the 2D invariant: fixed-node Pfaffians against the
    path-continued square root of the sewing determinant.

    Needs a smooth (not necessarily determinant-reduced) 2D sewing field.
    The determinant phase is continued from (0,0) to the other three fixed
    nodes along grid lines; each ratio pf(w)/exp(i*phi/2) is then ±1 and
    their product is the invariant.  Returns (parity, the four ratios).
    """
    grid = wfield.grid
    if grid.dim != 2:
        raise InvariantError("expected a 2-d sewing field")
    n0, n1 = grid.sizes
    det = np.linalg.det(wfield.w)
    phi = {}
    phi[(0, 0)] = float(np.angle(det[0, 0]))
    p, _ = phase_continue(det[:n0 // 2 + 1, 0])
    phi[(n0 // 2, 0)] = phi[(0, 0)] + float(p[-1] - p[0])
    for start in ((0, 0), (n0 // 2, 0)):
        p, _ = phase_continue(det[start[0], :n1 // 2 + 1])
        phi[(start[0], n1 // 2)] = phi[start] + float(p[-1] - p[0])
    deltas = []
    for t in grid.trims:
        W = wfield.w[t]
        if np.abs(W + W.T).max() > 1e-8:
            raise NonSkewTrim(f"sewing matrix at fixed node {t} is not skew")
        delta = pfaffian(0.5 * (W - W.T)) * np.exp(-0.5j * phi[t])
        if abs(abs(delta) - 1.0) > 1e-4 or abs(delta.imag) > 1e-2:
            raise PfaffianOffCircle(
                f"pf/sqrt(det) = {delta:.6f} at {t} is not a sign")
        deltas.append(1 if delta.real > 0 else -1)
    return int(np.prod(deltas)), deltas


def km_weak_strong(raw: FrameField, theta) -> tuple:
    """Weak and strong indices from the six inversion-stable planes.

    For each axis the invariants of its two stable planes (momentum 0 and
    pi) multiply to the strong index; the three axis estimates must agree.
    weak[a] is the invariant of the momentum-pi plane normal to axis a.
    Returns (strong, weak triple, per-plane dict keyed by (axis, index)).
    """
    grid = raw.grid
    if grid.dim != 3:
        raise InvariantError("weak/strong indices require a 3-d frame field")
    nu = {}
    for a in range(3):
        for idx in (0, grid.sizes[a] // 2):
            plane = raw.restrict_plane(a, idx)
            nu[(a, idx)], _ = km_plane_invariant(plane, theta)
    strong_by_axis = [nu[(a, 0)] * nu[(a, grid.sizes[a] // 2)]
                      for a in range(3)]
    if len(set(strong_by_axis)) != 1:
        raise AxisInconsistency(
            f"strong index differs between axis pairings: {strong_by_axis}")
    weak = tuple(nu[(a, 0)] for a in range(3))  # momentum-pi planes
    return strong_by_axis[0], weak, nu


def km_wzw(wfield: SewingField) -> tuple:
    """Degree integral of the sewing map and its parity.

    Returns (integral, parity); the integral must land within 0.25 of an
    integer, and its parity is the invariant.
    """
    integral = float(wzw_density(wfield).sum())
    parity, _ = _round_parity(integral)
    return integral, parity


def km_winding(wfield: SewingField, family_axis: int = 2) -> tuple:
    """The degree integral resummed as a family of slice contributions.

    Slices transverse to family_axis each contribute s_j; the rounded total
    is the winding index, identical by construction to the rounding in
    km_wzw.  Returns (index, parity, per-slice series).
    """
    dens = wzw_density(wfield)
    a = family_axis % 3
    axes = tuple(b for b in range(3) if b != a)
    series = dens.sum(axis=axes)
    total = float(series.sum())
    parity, resid = _round_parity(total)
    return int(round(total)), parity, series


def km_chern_simons(conn: ConnectionField, wfield: SewingField) -> tuple:
    """Chern-Simons integral of a quaternionically averaged connection.

    cs = -(1/8 pi^2) * integral of tr(A dA + (2/3) A^3), the sign fixed so
    that cs = -(1/2) * (degree integral) for an averaged connection; the
    derivative is taken spectrally (the averaged field is smooth and
    periodic, so Fourier differentiation is far more accurate than any local
    stencil here).  cs sits within discretization error of a half-integer.
    Returns (cs, parity, relation_residual).
    """
    if not conn.quaternionic_residual <= 1e-6:  # also catches NaN
        raise UnaveragedConnection(
            f"connection residual {conn.quaternionic_residual:.2e} exceeds "
            "1e-6; average it first")
    grid = conn.grid
    A = conn.A  # (3, *sizes, m, m), anti-Hermitian

    def dmu(f, mu):
        n = grid.sizes[mu]
        wave = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers, period 2pi
        shape = [1] * f.ndim
        shape[mu] = n
        return np.fft.ifft(np.fft.fft(f, axis=mu) * (1j * wave.reshape(shape)),
                           axis=mu)

    total = 0.0 + 0.0j
    perms = [((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
             ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)]
    for (m0, m1, m2), s in perms:
        t1 = np.einsum("...ab,...ba->...", A[m0], dmu(A[m2], m1))
        t2 = np.einsum("...ab,...bc,...ca->...", A[m0], A[m1], A[m2])
        total += s * (t1 + (2.0 / 3.0) * t2).sum()
    cs = -float((total * grid.cell_volume()).real) / (8 * np.pi ** 2)
    wzw_integral = float(wzw_density(wfield).sum())
    relation_residual = abs(cs + 0.5 * wzw_integral)
    if relation_residual > 0.1:
        raise NonConvergent(
            f"Chern-Simons / degree relation off by {relation_residual:.3f}")
    # parity is exp(2 pi i cs) rounded: odd multiples of 1/2 give -1
    n_half = int(round(cs / 0.5))
    if abs(cs / 0.5 - n_half) > 0.25:
        raise NonConvergent(f"cs = {cs:.4f} is not near a half-integer")
    parity = (-1) ** (n_half % 2)
    return cs, parity, relation_residual


def km_s3(model, mesh_size: int = 48) -> dict:
    """Invariant of a sphere-domain model by quadrature and localisation.

    Integrates the degree density of the sewing map over the whole sphere
    (upsilon estimate) and localises it onto the two poles; the pole values
    add up to the quadrature exactly, the north pole carrying the full
    integer in this descent convention.  Returns a dict with parity,
    upsilon, rho0_N, rho0_S and the discarded asymmetric 1-norm.
    """
    from .sphere import (SphereMesh, sphere_frames, sphere_sewing,
                         sphere_wzw_density, hemisphere_descent)
    mesh = SphereMesh.cubic(mesh_size)
    frames = sphere_frames(model, mesh)
    w = sphere_sewing(frames, model.theta, mesh)
    dens, discarded = sphere_wzw_density(w, mesh)
    trace = hemisphere_descent(dens, mesh)
    upsilon = trace["total"]
    parity, resid = _round_parity(upsilon)
    return {
        "parity": parity,
        "upsilon": upsilon,
        "residual": resid,
        "rho0_N": trace["rho0_N"],
        "rho0_S": trace["rho0_S"],
        "discarded": discarded,
        "level_integrals": trace["level_integrals"],
    }


@dataclass(frozen=True)
class InvariantReport:
    model: dict
    grid: tuple
    methods: dict = field(default_factory=dict)
    trim_pfaffians: list = field(default_factory=list)
    weak_indices: list = field(default_factory=list)
    strong: int = None
    consensus: bool = False
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        pf = [[p.real, p.imag] for p in self.trim_pfaffians]
        return {
            "model": self.model,
            "grid": list(self.grid),
            "methods": self.methods,
            "trim_pfaffians": pf,
            "weak": list(self.weak_indices),
            "strong": self.strong,
            "consensus": self.consensus,
            "notes": list(self.notes),
        }


def assemble_report(model_desc: dict, grid: BZGrid, method_outputs: dict,
                    notes=()) -> InvariantReport:
    """Combine per-method outputs into a cross-validated report.

    method_outputs maps method name to a dict with at least {"parity", "raw",
    "residual", "runtime_ms"}; non-convergent methods may instead carry an
    {"error"} entry.  Consensus is true iff all computed parities agree.
    """
    methods = {}
    parities = []
    notes = list(notes)
    for name, out in method_outputs.items():
        if "error" in out:
            methods[name] = {"error": out["error"]}
            notes.append(f"{name}: {out['error']}")
            continue
        methods[name] = {
            "parity": int(out["parity"]),
            "raw": float(out["raw"]),
            "residual": float(out["residual"]),
            "runtime_ms": float(out.get("runtime_ms", 0.0)),
        }
        parities.append(int(out["parity"]))
    consensus = bool(parities) and len(set(parities)) == 1
    return InvariantReport(
        model=model_desc,
        grid=grid.sizes,
        methods=methods,
        trim_pfaffians=list(method_outputs.get(
            "pfaffian", {}).get("pfaffians", [])),
        weak_indices=list(method_outputs.get(
            "planes", {}).get("weak", [])),
        strong=method_outputs.get("planes", {}).get("parity"),
        consensus=consensus,
        notes=notes,
    )
