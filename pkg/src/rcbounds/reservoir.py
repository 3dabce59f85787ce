"""Random echo state networks: generation, driving, the closed-loop map and
its Jacobian, Lipschitz constants, and JSON persistence."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .dynsys import Trajectory
from .errors import GenerationError, NumericalError, UsageError
from .jsonio import read_json, write_json

POWER_TOL = 1e-8
POWER_MAXITER = 10_000


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EsnParams:
    """State map ``F(x, z) = tanh(A x + gamma C z + zeta)``.

    ``A`` is kept in CSR form; ``gamma`` is stored apart from ``C`` so a grid
    search can rescale the input without regenerating the mask.
    """
    A: sp.csr_matrix
    C: np.ndarray
    zeta: np.ndarray
    gamma: float
    seed: int = 0
    spectral_radius: float = float("nan")
    activation: str = "tanh"

    def __post_init__(self):
        A = sp.csr_matrix(self.A, dtype=float)
        A.sort_indices()
        for arr in (A.data, A.indices, A.indptr):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", _frozen(np.atleast_2d(self.C)))
        object.__setattr__(self, "zeta", _frozen(self.zeta))
        L = A.shape[0]
        if A.shape != (L, L) or self.C.shape[0] != L or self.zeta.shape != (L,):
            raise UsageError("inconsistent reservoir dimensions")
        if self.activation != "tanh":
            raise UsageError(f"unsupported activation {self.activation!r}")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(self.C))
                and np.all(np.isfinite(self.zeta)) and math.isfinite(self.gamma)):
            raise UsageError("reservoir parameters must be finite")

    @property
    def L(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.C.shape[1]

    def csr(self):
        return self.A.indptr, self.A.indices, self.A.data

    def with_scaling(self, gamma=None, spectral_radius=None):
        """Same draw, new input scaling and/or spectral radius."""
        A = self.A
        rho = self.spectral_radius
        if spectral_radius is not None:
            A = A * (spectral_radius / self.spectral_radius)
            rho = spectral_radius
        return EsnParams(A, self.C, self.zeta, self.gamma if gamma is None else float(gamma),
                         self.seed, rho, self.activation)


@dataclass(frozen=True, eq=False)
class Readout:
    W: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", _frozen(np.atleast_2d(self.W)))
        object.__setattr__(self, "a", _frozen(np.atleast_1d(self.a)))
        if self.a.shape != (self.W.shape[0],):
            raise UsageError("readout bias does not match W")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.W.T + self.a


@dataclass(frozen=True)
class LipschitzConstants:
    L_x: float
    L_z: float
    L_h: float


@dataclass(frozen=True, eq=False)
class TrainedEsn:
    params: EsnParams
    readout: Readout
    lipschitz: LipschitzConstants

    @classmethod
    def build(cls, params, readout):
        if readout.W.shape != (params.d, params.L):
            raise UsageError(f"readout W is {readout.W.shape}, expected {(params.d, params.L)}")
        return cls(params, readout, lipschitz_constants(params, readout))


# -- generation ----------------------------------------------------------------

def _is_acyclic(A):
    """Kahn's algorithm on the sparsity digraph; acyclic means nilpotent."""
    L = A.shape[0]
    coo = A.tocoo()
    indeg = np.bincount(coo.col, minlength=L)
    out = [[] for _ in range(L)]
    for r, c in zip(coo.row, coo.col):
        out[r].append(c)
    stack = [i for i in range(L) if indeg[i] == 0]
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        for j in out[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(j)
    return seen == L


def spectral_radius(A):
    """Largest eigenvalue modulus of a square (sparse or dense) matrix."""
    A = sp.csr_matrix(A)
    if A.shape[0] <= 3000:
        return float(np.max(np.abs(np.linalg.eigvals(A.toarray()))))
    from scipy.sparse.linalg import eigs
    vals = eigs(A, k=6, which="LM", return_eigenvectors=False, tol=1e-12)
    return float(np.max(np.abs(vals)))


_spectral_radius = spectral_radius


def generate(seed, L, d, spectral_radius=1.0, gamma=1.0, density=0.01):
    """Draw a reservoir: ``round(density*L^2)`` entries of A at distinct
    positions, U[-1, 1] values, rescaled to the target spectral radius;
    C dense U[-1, 1]; zeta = 0.  Seeds go through ``SeedSequence`` so the
    A and C streams are independent."""
    L, d = int(L), int(d)
    if L < 1 or d < 1:
        raise UsageError("L and d must be >= 1")
    if not spectral_radius > 0:
        raise UsageError("spectral_radius must be positive")
    if not 0 < density <= 1:
        raise UsageError("density must be in (0, 1]")
    ss_a, ss_c = np.random.SeedSequence(int(seed)).spawn(2)
    rng_a = np.random.Generator(np.random.PCG64(ss_a))
    rng_c = np.random.Generator(np.random.PCG64(ss_c))

    nnz = int(math.floor(density * L * L + 0.5))
    pos = np.sort(rng_a.choice(L * L, size=nnz, replace=False))
    vals = rng_a.uniform(-1.0, 1.0, size=nnz)
    A = sp.csr_matrix((vals, (pos // L, pos % L)), shape=(L, L))
    if nnz == 0 or _is_acyclic(A):
        raise GenerationError(f"seed {seed}: connectivity matrix is nilpotent (zero spectral "
                              "radius); try a different seed or a higher density")
    rho = _spectral_radius(A)
    if not rho > 0:
        raise GenerationError(f"seed {seed}: zero spectral radius; try a different seed")
    A = A * (spectral_radius / rho)
    C = rng_c.uniform(-1.0, 1.0, size=(L, d))
    return EsnParams(A, C, np.zeros(L), float(gamma), int(seed), float(spectral_radius))


# -- dynamics ------------------------------------------------------------------

def _check_x(params, x):
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (params.L,):
        raise UsageError(f"state has shape {x.shape}, reservoir size is {params.L}")
    return x


def step(params, x, y):
    x = _check_x(params, x)
    y = np.ascontiguousarray(y, dtype=float)
    if y.shape != (params.d,):
        raise UsageError(f"input has shape {y.shape}, expected ({params.d},)")
    return kernels.esn_drive(*params.csr(), params.C, params.gamma, params.zeta, x, y[None, :])[0]


def drive(params, x0, inputs):
    """States ``x_{t+1} = F(x_t, y_t)`` for each input row (x0 excluded).

    Accepts a Trajectory (result keeps its dt, shifted by one step) or a
    plain T x d array (result is an array)."""
    x0 = _check_x(params, x0)
    is_traj = isinstance(inputs, Trajectory)
    Y = np.ascontiguousarray(inputs.data if is_traj else np.atleast_2d(inputs), dtype=float)
    if Y.shape[1] != params.d:
        raise UsageError(f"inputs have {Y.shape[1]} columns, reservoir expects {params.d}")
    X = kernels.esn_drive(*params.csr(), params.C, params.gamma, params.zeta, x0, Y)
    if is_traj:
        return Trajectory(X, inputs.dt, inputs.t0 + inputs.dt)
    return X


def closed_loop_step(te, x):
    """Phi(x) = F(x, W x + a)."""
    p, r = te.params, te.readout
    x = _check_x(p, x)
    return kernels.esn_phi(*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a, x)


def jacobian_phi(te, x):
    """diag(1 - tanh(u)^2) (A + gamma C W) with u the pre-activation at x."""
    p, r = te.params, te.readout
    x = _check_x(p, x)
    u = p.A @ x + p.gamma * (p.C @ (r.W @ x + r.a)) + p.zeta
    g = 1.0 - np.tanh(u) ** 2
    M = p.A.toarray() + p.gamma * (p.C @ r.W)
    return g[:, None] * M


# -- Lipschitz constants ---------------------------------------------------------

def top_singular_value(M, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=0):
    """Largest singular value by power iteration on M^T M.

    Stops once the eigen-residual ||M^T M v - s v|| is below ``tol * s``,
    which pins ``s`` to within ``tol`` of an eigenvalue of M^T M.
    """
    M = M if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.shape[0] == 0 or n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(maxiter):
        w = M.T @ (M @ v)
        s = float(v @ w)
        if s <= 0.0:
            if not np.any(w):
                return 0.0
            s = float(np.linalg.norm(w))
        res = np.linalg.norm(w - s * v)
        nw = np.linalg.norm(w)
        if res <= tol * s:
            return math.sqrt(s)
        v = w / nw
    raise NumericalError(f"power iteration did not converge in {maxiter} iterations")


def lipschitz_constants(params, readout):
    """L_x = |||A|||_2, L_z = gamma |||C|||_2, L_h = |||W|||_2 (tanh has slope <= 1)."""
    if readout.W.shape[1] != params.L:
        raise UsageError("readout does not match reservoir")
    return LipschitzConstants(
        L_x=top_singular_value(params.A),
        L_z=abs(params.gamma) * top_singular_value(params.C),
        L_h=top_singular_value(readout.W),
    )


# -- persistence -----------------------------------------------------------------

def to_dict(te_or_params):
    if isinstance(te_or_params, TrainedEsn):
        p, r = te_or_params.params, te_or_params.readout
    else:
        p, r = te_or_params, None
    doc = {
        "L": p.L, "d": p.d, "gamma": p.gamma, "seed": p.seed,
        "spectral_radius": p.spectral_radius,
        "A": {"row_ptr": p.A.indptr.tolist(), "col_idx": p.A.indices.tolist(),
              "values": p.A.data.tolist()},
        "C": p.C.ravel().tolist(), "zeta": p.zeta.tolist(), "activation": p.activation,
    }
    if r is not None:
        doc["W"] = r.W.ravel().tolist()
        doc["a"] = r.a.tolist()
    return doc


def from_dict(doc):
    L, d = int(doc["L"]), int(doc["d"])
    A = sp.csr_matrix((np.asarray(doc["A"]["values"], dtype=float),
                       np.asarray(doc["A"]["col_idx"], dtype=np.int32),
                       np.asarray(doc["A"]["row_ptr"], dtype=np.int32)), shape=(L, L))
    p = EsnParams(A, np.asarray(doc["C"], dtype=float).reshape(L, d),
                  np.asarray(doc["zeta"], dtype=float), float(doc["gamma"]), int(doc["seed"]),
                  float(doc["spectral_radius"]), doc.get("activation", "tanh"))
    if "W" not in doc:
        return p
    W = np.asarray(doc["W"], dtype=float).reshape(d, L)
    return TrainedEsn.build(p, Readout(W, np.asarray(doc["a"], dtype=float)))


def save_model(te, path):
    write_json(path, to_dict(te))


def load_model(path):
    return from_dict(read_json(path))
