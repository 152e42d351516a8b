"""Symbolic-basis state vectors, reflection products and phase-zero statistics.

The operator of interest is U = (2 Pi_A - I)(2 Pi_B - I) for two subspaces
spanned by families of states. Phase estimation of U on psi0 for T steps
returns phase 0 with probability

    p0 = || (1/T) sum_{t<T} U^t psi0 ||^2,

which we evaluate either from an eigendecomposition (closed form, any T) or
by accumulating the sum directly (large sparse instances, moderate T).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

ZERO_PHASE_TOL = 1e-9
RANK_TOL = 1e-10
OVERLAP_TOL = 1e-12
DEFAULT_DIM_CAP = 4000


class SpectralError(ValueError):
    pass


class CrossBlockOverlap(SpectralError):
    pass


class BasisMismatch(SpectralError):
    pass


class NonUnitInitialState(SpectralError):
    pass


class Undecided(SpectralError):
    pass


class LemmaViolation(AssertionError):
    pass


def dim_cap() -> int:
    return int(os.environ.get("MDQW_DIM_CAP", DEFAULT_DIM_CAP))


# ------------------------------------------------------------------ states


class StateVector:
    """Finite map from basis labels to complex amplitudes."""

    __slots__ = ("amps",)

    def __init__(self, amps: dict | None = None):
        self.amps = {k: v for k, v in (amps or {}).items() if v != 0}

    @classmethod
    def basis(cls, label) -> "StateVector":
        return cls({label: 1.0})

    def __getitem__(self, label):
        return self.amps.get(label, 0.0)

    def __add__(self, other: "StateVector") -> "StateVector":
        out = dict(self.amps)
        for k, v in other.amps.items():
            out[k] = out.get(k, 0.0) + v
        return StateVector(out)

    def __sub__(self, other: "StateVector") -> "StateVector":
        return self + other * -1.0

    def __mul__(self, c) -> "StateVector":
        return StateVector({k: c * v for k, v in self.amps.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def inner(self, other: "StateVector") -> complex:
        """<self|other>, conjugate-linear in self."""
        a, b = (self.amps, other.amps) if len(self.amps) <= len(other.amps) else (other.amps, self.amps)
        s = 0.0
        for k in a:
            if k in b:
                s += np.conj(self.amps[k]) * other.amps[k]
        return s

    def norm2(self) -> float:
        return float(sum(abs(v) ** 2 for v in self.amps.values()))

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def support(self) -> set:
        return set(self.amps)

    def is_real(self) -> bool:
        return all(np.imag(v) == 0 for v in self.amps.values())

    def to_array(self, basis: "Basis", dtype=complex) -> np.ndarray:
        x = np.zeros(len(basis), dtype=dtype)
        for k, v in self.amps.items():
            try:
                x[basis.index[k]] = v
            except KeyError:
                raise BasisMismatch(f"label {k!r} not in basis") from None
        return x

    def to_json(self) -> list:
        return [{"label": str(k), "re": float(np.real(v)), "im": float(np.imag(v))} for k, v in self.amps.items()]

    def __repr__(self):
        return f"StateVector({self.amps!r})"


def state_from_json(data: Sequence[dict]) -> StateVector:
    return StateVector({d["label"]: complex(d["re"], d["im"]) for d in data})


class Basis:
    """Ordered list of labels with a reverse index."""

    def __init__(self, labels: Iterable):
        self.labels = list(dict.fromkeys(labels))
        self.index = {k: i for i, k in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def vector(self, x: np.ndarray, tol: float = 0.0) -> StateVector:
        return StateVector({self.labels[i]: x[i] for i in np.flatnonzero(np.abs(x) > tol)})


@dataclass
class StateFamily:
    """States grouped into blocks; distinct blocks are promised orthogonal."""

    blocks: list = field(default_factory=list)  # [(block_id, [StateVector, ...])]

    def add(self, block_id, states: Sequence[StateVector]):
        self.blocks.append((block_id, list(states)))

    def states(self):
        for _, vs in self.blocks:
            yield from vs

    def __len__(self):
        return sum(len(vs) for _, vs in self.blocks)

    def labels(self) -> set:
        out = set()
        for v in self.states():
            out |= v.support()
        return out

    def is_real(self) -> bool:
        return all(v.is_real() for v in self.states())

    def __or__(self, other: "StateFamily") -> "StateFamily":
        return StateFamily(self.blocks + other.blocks)


def _validate_blocks(F: StateFamily, tol: float = OVERLAP_TOL):
    owner: dict = {}
    clashes: set = set()
    for b, (_, vs) in enumerate(F.blocks):
        for v in vs:
            for k in v.amps:
                o = owner.setdefault(k, b)
                if o != b:
                    clashes.add((min(o, b), max(o, b)))
    for a, b in clashes:
        for x in F.blocks[a][1]:
            for y in F.blocks[b][1]:
                if abs(x.inner(y)) > tol:
                    raise CrossBlockOverlap(f"blocks {F.blocks[a][0]!r} and {F.blocks[b][0]!r} overlap")


def orthonormalize_family(F: StateFamily, validate: bool = True) -> StateFamily:
    """Replace each block by an orthonormal basis of its span."""
    if validate:
        _validate_blocks(F)
    out = StateFamily()
    for bid, vs in F.blocks:
        vs = [v for v in vs if v.amps]
        if not vs:
            continue
        if len(vs) == 1:
            n = vs[0].norm()
            if n > RANK_TOL:
                out.add(bid, [vs[0] * (1.0 / n)])
            continue
        labels = list(dict.fromkeys(k for v in vs for k in v.amps))
        pos = {k: i for i, k in enumerate(labels)}
        real = all(v.is_real() for v in vs)
        M = np.zeros((len(labels), len(vs)), dtype=float if real else complex)
        for c, v in enumerate(vs):
            for k, a in v.amps.items():
                M[pos[k], c] = a
        Uq, s, _ = np.linalg.svd(M, full_matrices=False)
        if s.size == 0 or s[0] <= RANK_TOL:
            continue
        r = int(np.sum(s > RANK_TOL * max(1.0, s[0])))
        basis = []
        for c in range(r):
            col = Uq[:, c]
            basis.append(StateVector({labels[i]: col[i] for i in np.flatnonzero(np.abs(col) > 1e-15)}))
        out.add(bid, basis)
    return out


# ---------------------------------------------------------- projectors


class Subspace:
    """Span of an orthonormal family, stored as a sparse column matrix Q."""

    def __init__(self, F: StateFamily, basis: Basis, orthonormal: bool = False):
        if not orthonormal:
            F = orthonormalize_family(F)
        self.family = F
        self.basis = basis
        self.real = F.is_real()
        dtype = float if self.real else complex
        rows, cols, vals = [], [], []
        c = 0
        for v in F.states():
            for k, a in v.amps.items():
                if k not in basis.index:
                    raise BasisMismatch(f"label {k!r} not in basis")
                rows.append(basis.index[k])
                cols.append(c)
                vals.append(a)
            c += 1
        self.rank = c
        self.Q = sp.csr_matrix((np.asarray(vals, dtype=dtype), (rows, cols)), shape=(len(basis), c))
        self.QH = self.Q.conj().T.tocsr()

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ (self.QH @ x)

    def reflect(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.project(x) - x

    def dense_projector(self) -> np.ndarray:
        Q = self.Q.toarray()
        return Q @ Q.conj().T


class ReflectionProduct:
    """U = (2 Pi_A - I)(2 Pi_B - I), applied lazily."""

    def __init__(self, A: Subspace, B: Subspace):
        if A.basis is not B.basis and A.basis.labels != B.basis.labels:
            raise BasisMismatch("A and B live on different bases")
        self.A, self.B = A, B
        self.basis = A.basis
        self.real = A.real and B.real

    @property
    def dim(self) -> int:
        return len(self.basis)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.A.reflect(self.B.reflect(x))

    def matrix(self) -> np.ndarray:
        RA = 2 * self.A.dense_projector() - np.eye(self.dim)
        RB = 2 * self.B.dense_projector() - np.eye(self.dim)
        return RA @ RB


class DenseUnitary:
    """Wrap an explicit unitary matrix so it can be used like a ReflectionProduct."""

    def __init__(self, M: np.ndarray):
        self.M = np.asarray(M)
        self.real = np.isrealobj(self.M)

    @property
    def dim(self):
        return self.M.shape[0]

    def apply(self, x):
        return self.M @ x

    def matrix(self):
        return self.M


def build_uab(A: StateFamily, B: StateFamily, basis: Basis) -> ReflectionProduct:
    return ReflectionProduct(Subspace(A, basis), Subspace(B, basis))


# -------------------------------------------------------- phase statistics


@dataclass
class PhaseSpectrum:
    phases: np.ndarray  # per eigenvector, in (-pi, pi]
    weights: np.ndarray  # |<z_j|psi0>|^2 per eigenvector
    vectors: np.ndarray | None = None  # eigenvectors as columns

    def grouped(self, tol: float = ZERO_PHASE_TOL) -> list[tuple[float, float]]:
        """Distinct phases with their total weight ||Pi_j psi0||^2."""
        order = np.argsort(self.phases)
        out: list[list[float]] = []
        for i in order:
            th, wt = float(self.phases[i]), float(self.weights[i])
            if out and abs(th - out[-1][0]) <= tol:
                out[-1][1] += wt
            else:
                out.append([th, wt])
        return [(a, b) for a, b in out]

    def lambda_projector(self, Theta: float) -> np.ndarray:
        Z = self.vectors[:, np.abs(self.phases) <= Theta]
        return Z @ Z.conj().T


def eigen_phases(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phases and an orthonormal eigenbasis of a unitary matrix.

    Complex Schur form of a normal matrix is diagonal, so the Schur vectors
    are an orthonormal eigenbasis even for degenerate eigenvalues.
    """
    Tm, Z = sla.schur(np.asarray(M, dtype=complex), output="complex")
    phases = np.angle(np.diag(Tm))
    phases[phases <= -math.pi] += 2 * math.pi
    return phases, Z


def phase_spectrum(U, psi0: np.ndarray, keep_vectors: bool = False) -> PhaseSpectrum:
    phases, Z = eigen_phases(U.matrix())
    weights = np.abs(Z.conj().T @ psi0) ** 2
    return PhaseSpectrum(phases, weights, Z if keep_vectors else None)


def fejer(theta: np.ndarray, T: int) -> np.ndarray:
    """sin^2(T theta/2) / (T^2 sin^2(theta/2)), equal to 1 on the zero bin."""
    theta = np.asarray(theta, dtype=float)
    out = np.ones_like(theta)
    nz = np.abs(theta) > ZERO_PHASE_TOL
    t = theta[nz]
    out[nz] = np.sin(T * t / 2) ** 2 / (T**2 * np.sin(t / 2) ** 2)
    return out


def p0_from_spectrum(spec: PhaseSpectrum, T: int) -> float:
    return float(np.sum(fejer(spec.phases, T) * spec.weights))


def _as_array(psi0, basis: Basis | None):
    if isinstance(psi0, StateVector):
        if basis is None:
            raise BasisMismatch("a basis is needed to embed a StateVector")
        return psi0.to_array(basis)
    return np.asarray(psi0)


def _accumulate_python(U, x: np.ndarray, T: int) -> np.ndarray:
    acc = np.zeros_like(x)
    for _ in range(T):
        acc += x
        x = U.apply(x)
    return acc


try:  # optional JIT path for large sparse instances
    import numba

    @numba.njit(cache=True)
    def _reflect(ip, ix, dv, ipH, ixH, dvH, x, c, y):
        # c = Q^H x ; y = 2 Q c - x
        for r in range(ipH.size - 1):
            s = 0.0 * x[0]
            for p in range(ipH[r], ipH[r + 1]):
                s += dvH[p] * x[ixH[p]]
            c[r] = s
        for r in range(ip.size - 1):
            s = 0.0 * x[0]
            for p in range(ip[r], ip[r + 1]):
                s += dv[p] * c[ix[p]]
            y[r] = 2.0 * s - x[r]

    @numba.njit(cache=True)
    def _accumulate_kernel(A, AH, B, BH, x, T):
        acc = np.zeros_like(x)
        y = np.empty_like(x)
        cA = np.empty(AH[0].size - 1, dtype=x.dtype)
        cB = np.empty(BH[0].size - 1, dtype=x.dtype)
        for _ in range(T):
            acc += x
            _reflect(B[0], B[1], B[2], BH[0], BH[1], BH[2], x, cB, y)
            _reflect(A[0], A[1], A[2], AH[0], AH[1], AH[2], y, cA, x)
        return acc

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _csr_parts(M, dtype):
    M = M.tocsr()
    return (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data.astype(dtype))


def accumulate_sum(U, psi0: np.ndarray, T: int) -> np.ndarray:
    """sum_{t<T} U^t psi0."""
    if np.iscomplexobj(psi0) and not np.any(psi0.imag):
        psi0 = psi0.real
    if HAVE_NUMBA and isinstance(U, ReflectionProduct):
        dtype = np.float64 if (U.real and np.isrealobj(psi0)) else np.complex128
        A = _csr_parts(U.A.Q, dtype)
        AH = _csr_parts(U.A.QH, dtype)
        B = _csr_parts(U.B.Q, dtype)
        BH = _csr_parts(U.B.QH, dtype)
        return _accumulate_kernel(A, AH, B, BH, psi0.astype(dtype).copy(), int(T))
    x = psi0.astype(complex if not (getattr(U, "real", False) and np.isrealobj(psi0)) else float)
    return _accumulate_python(U, x.copy(), T)


def phase_zero_probability(U, psi0, T: int, mode: str = "spectral", basis: Basis | None = None) -> float:
    """Probability that T-step phase estimation of U on psi0 reads phase 0."""
    if T < 1:
        raise ValueError("T must be a positive integer")
    x = _as_array(psi0, basis if basis is not None else getattr(U, "basis", None))
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise NonUnitInitialState(f"||psi0|| = {np.linalg.norm(x)}")
    if mode == "spectral":
        return p0_from_spectrum(phase_spectrum(U, x), T)
    if mode == "accumulate":
        s = accumulate_sum(U, x, T) / T
        return float(np.real(np.vdot(s, s)))
    raise ValueError(f"unknown mode {mode!r}")


# ------------------------------------------------------------------ witnesses


def _subspace_residuals(x: np.ndarray, S: Subspace) -> tuple[float, float]:
    p = S.project(x)
    return float(np.real(np.vdot(p, p))), float(np.real(np.vdot(x - p, x - p)))


def check_positive_witness(w, psi0, A: Subspace, B: Subspace, delta: float = 0.0, basis: Basis | None = None) -> dict:
    basis = basis or A.basis
    wv, p = _as_array(w, basis), _as_array(psi0, basis)
    n2 = float(np.real(np.vdot(wv, wv)))
    ov = complex(np.vdot(p, wv))
    pa, _ = _subspace_residuals(wv, A)
    pb, _ = _subspace_residuals(wv, B)
    errA, errB = (pa / n2, pb / n2) if n2 > 0 else (0.0, 0.0)
    ok = abs(ov) > 1e-12 and errA <= delta + 1e-12 and errB <= delta + 1e-12
    return {
        "overlap": abs(ov) ** 2,
        "ratio": n2 / abs(ov) ** 2 if abs(ov) > 0 else math.inf,
        "errA": errA,
        "errB": errB,
        "norm2": n2,
        "pass": bool(ok),
    }


def check_negative_witness(wA, wB, psi0, A: Subspace, B: Subspace, delta_prime: float = 0.0, basis: Basis | None = None) -> dict:
    basis = basis or A.basis
    a, b, p = _as_array(wA, basis), _as_array(wB, basis), _as_array(psi0, basis)
    recon = float(np.linalg.norm(p - (a + b)))
    _, ra = _subspace_residuals(a, A)
    _, rb = _subspace_residuals(b, B)
    ok = recon <= 1e-10 and ra <= delta_prime + 1e-12 and rb <= delta_prime + 1e-12
    return {
        "reconstruction": recon,
        "residualA": ra,
        "residualB": rb,
        "normA2": float(np.real(np.vdot(a, a))),
        "pass": bool(ok),
    }


# -------------------------------------------------------------------- decider


@dataclass(frozen=True)
class DeciderParams:
    c_plus: float
    C_minus: float
    delta: float = 0.0
    delta_prime: float = 0.0
    T: int = 0

    def __post_init__(self):
        if not 1 <= self.c_plus <= 50:
            raise ValueError("c_plus must lie in [1, 50]")
        if self.C_minus < 1:
            raise ValueError("C_minus must be >= 1")
        if self.delta > self.delta_max(self.c_plus, self.C_minus) * (1 + 1e-12):
            raise ValueError("delta exceeds the positive-error bound")
        if self.delta_prime > self.delta_prime_max(self.c_plus) * (1 + 1e-12):
            raise ValueError("delta_prime exceeds the negative-error bound")
        if self.T == 0:
            object.__setattr__(self, "T", self.steps(self.c_plus, self.C_minus))

    @staticmethod
    def steps(c_plus: float, C_minus: float) -> int:
        return int(math.ceil(math.sqrt(8) * math.pi**4 * c_plus * math.sqrt(C_minus)))

    @staticmethod
    def delta_max(c_plus, C_minus) -> float:
        return 1.0 / ((8 * c_plus) ** 3 * math.pi**8 * C_minus)

    @staticmethod
    def delta_prime_max(c_plus) -> float:
        return 0.75 / (math.pi**4 * c_plus)

    @property
    def positive_threshold(self) -> float:
        return 2.25 / (math.pi**2 * self.c_plus)

    @property
    def negative_threshold(self) -> float:
        return 2.0 / (math.pi**2 * self.c_plus)

    @property
    def margin(self) -> float:
        return 0.05 / (math.pi**2 * self.c_plus)


@dataclass
class Decision:
    outcome: str  # "positive" | "negative" | "undecided"
    p0: float
    params: DeciderParams
    mode: str

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "p0": self.p0,
            "T": self.params.T,
            "c_plus": self.params.c_plus,
            "C_minus": self.params.C_minus,
            "positive_threshold": self.params.positive_threshold,
            "negative_threshold": self.params.negative_threshold,
            "margin": self.params.margin,
            "mode": self.mode,
        }


def classify(p0: float, params: DeciderParams) -> str:
    if p0 >= params.positive_threshold - params.margin:
        return "positive"
    if p0 <= params.negative_threshold + params.margin:
        return "negative"
    return "undecided"


def decide(U, psi0, params: DeciderParams, mode: str | None = None, basis: Basis | None = None) -> Decision:
    if mode is None:
        mode = "spectral" if U.dim <= dim_cap() else "accumulate"
    if mode == "spectral" and U.dim > dim_cap():
        raise SpectralError(f"dimension {U.dim} exceeds the dense cap {dim_cap()}")
    p0 = phase_zero_probability(U, psi0, params.T, mode=mode, basis=basis)
    return Decision(classify(p0, params), p0, params, mode)


# ---------------------------------------------------------- lemma checking


def random_family(dim: int, rank: int, rng: np.random.Generator, block_id="R") -> StateFamily:
    M = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    F = StateFamily()
    F.add(block_id, [StateVector({i: M[i, c] for i in range(dim)}) for c in range(rank)])
    return F


def random_instance(dim: int, rng: np.random.Generator) -> tuple[Basis, StateFamily, StateFamily]:
    basis = Basis(range(dim))
    ra, rb = rng.integers(1, dim // 2 + 1, size=2)
    return basis, random_family(dim, int(ra), rng, "A"), random_family(dim, int(rb), rng, "B")


def _haar_in(S: Subspace, rng) -> np.ndarray:
    c = rng.normal(size=S.rank) + 1j * rng.normal(size=S.rank)
    return S.Q @ c


def verify_spectral_lemmas(
    U: ReflectionProduct,
    samples: int = 20,
    seed: int = 0,
    thetas: Sequence[float] = (0.1, 0.5, 1.0),
    tol: float = 1e-10,
    raise_on_violation: bool = True,
) -> dict:
    """Sample-check the effective spectral gap and effectively zero bounds."""
    rng = np.random.default_rng(seed)
    n = U.dim
    spec = phase_spectrum(U, np.eye(n, dtype=complex)[:, 0], keep_vectors=True)
    PA, PB = U.A.dense_projector(), U.B.dense_projector()
    I = np.eye(n)
    # orthogonal complement of A + B, for near-kernel samples
    stack = np.hstack([U.A.Q.toarray(), U.B.Q.toarray()]).astype(complex)
    if stack.shape[1]:
        u_, s_, _ = np.linalg.svd(stack, full_matrices=True)
        r = int(np.sum(s_ > 1e-10))
        kernel = u_[:, r:]
    else:
        kernel = np.eye(n, dtype=complex)
    gap_slack, zero_slack = math.inf, math.inf
    violations = []
    for Theta in thetas:
        L = spec.lambda_projector(Theta)
        for _ in range(samples):
            if U.A.rank:
                psiA = _haar_in(U.A, rng)
                lhs = np.linalg.norm(L @ ((I - PB) @ psiA))
                rhs = Theta / 2 * np.linalg.norm(psiA)
                gap_slack = min(gap_slack, rhs - lhs)
                if lhs > rhs + tol:
                    violations.append(("effective_spectral_gap", Theta, lhs, rhs))
            # near-kernel sample: kernel vector plus a small random kick
            if kernel.shape[1]:
                base = kernel @ (rng.normal(size=kernel.shape[1]) + 1j * rng.normal(size=kernel.shape[1]))
            else:
                base = np.zeros(n, dtype=complex)
            kick = rng.normal(size=n) + 1j * rng.normal(size=n)
            psi = base + 10 ** rng.uniform(-4, 0) * kick * (np.linalg.norm(base) or 1.0) / np.linalg.norm(kick)
            nn = np.vdot(psi, psi).real
            delta = max(np.vdot(PA @ psi, PA @ psi).real, np.vdot(PB @ psi, PB @ psi).real) / nn
            r_ = psi - L @ psi
            lhs = np.vdot(r_, r_).real
            rhs = 4 * math.pi**2 * delta * nn / Theta**2
            zero_slack = min(zero_slack, rhs - lhs)
            if lhs > rhs + tol * nn:
                violations.append(("effectively_zero", Theta, lhs, rhs))
    report = {
        "effective_spectral_gap_min_slack": gap_slack,
        "effectively_zero_min_slack": zero_slack,
        "violations": len(violations),
        "samples": samples * len(thetas),
    }
    if violations and raise_on_violation:
        raise LemmaViolation(str(violations[:3]))
    return report


def unitarity_defect(M: np.ndarray) -> float:
    return float(np.max(np.abs(M.conj().T @ M - np.eye(M.shape[0]))))


def report_json(obj: Any) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, complex):
            return {"re": o.real, "im": o.imag}
        return str(o)

    return json.dumps(obj, indent=1, sort_keys=True, default=default)
