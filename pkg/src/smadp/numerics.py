"""Deterministic numeric substrate: keyed random substreams and a dense
symmetric eigensolver.

Every random draw in the package flows through :class:`RandomStream`, a
counter-based descriptor keyed by (seed, step, group, purpose). Draws are a
pure function of the key, so per-group noise is identical no matter in which
order groups are processed, and a rerun with the same seed reproduces every
release bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ParameterError, StructuralError

PURPOSES = ("noise", "sampling", "init", "data")
_PURPOSE_CODE = {name: code for code, name in enumerate(PURPOSES)}

_STEP_BITS = 40
_GROUP_BITS = 16
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Immutable descriptor of one keyed random substream.

    The Philox key packs (step << 24) | (group << 8) | purpose into the second
    key word; the seed fills the first. Gaussian variates are produced by
    Box-Muller over the stream's uniforms (first half cosines, second half
    sines), so values depend only on the documented uniform mapping and never
    on a library's normal() implementation.
    """

    seed: int
    step_index: int = 0
    group_index: int = 0
    purpose: str = "noise"

    def __post_init__(self):
        if self.purpose not in _PURPOSE_CODE:
            raise ParameterError(
                f"unknown stream purpose {self.purpose!r}; expected one of {PURPOSES}"
            )
        if not 0 <= int(self.step_index) < (1 << _STEP_BITS):
            raise ParameterError(f"step_index {self.step_index} outside [0, 2^{_STEP_BITS})")
        if not 0 <= int(self.group_index) < (1 << _GROUP_BITS):
            raise ParameterError(f"group_index {self.group_index} outside [0, 2^{_GROUP_BITS})")

    def at(self, step_index=None, group_index=None, purpose=None) -> "RandomStream":
        """Derive a stream with some key coordinates replaced."""
        return replace(
            self,
            step_index=self.step_index if step_index is None else step_index,
            group_index=self.group_index if group_index is None else group_index,
            purpose=self.purpose if purpose is None else purpose,
        )

    def _generator(self) -> np.random.Generator:
        key_hi = np.uint64(int(self.seed) & _MASK64)
        packed = (int(self.step_index) << 24) | (int(self.group_index) << 8)
        packed |= _PURPOSE_CODE[self.purpose]
        return np.random.Generator(np.random.Philox(key=[key_hi, np.uint64(packed)]))

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 uniforms in [0, 1)."""
        if n < 0:
            raise ParameterError("sample count must be non-negative")
        return self._generator().random(n)


def gaussian_vector(stream: RandomStream, dim: int, std: float) -> np.ndarray:
    """Vector of `dim` independent N(0, std^2) samples, deterministic in the stream."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    std = float(std)
    if not math.isfinite(std) or std < 0.0:
        raise ParameterError(f"std must be finite and >= 0, got {std}")
    if std == 0.0:
        return np.zeros(dim)
    pairs = (dim + 1) // 2
    u = stream.uniforms(2 * pairs)
    # 1 - u lies in (0, 1], so the log is finite.
    radius = np.sqrt(-2.0 * np.log1p(-u[:pairs]))
    angle = (2.0 * np.pi) * u[pairs:]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:dim]
    return std * z


def bernoulli_mask(stream: RandomStream, n: int, p: float) -> np.ndarray:
    """Boolean vector of n independent Bernoulli(p) trials."""
    if n < 0:
        raise ParameterError("n must be non-negative")
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"probability must lie in [0, 1], got {p}")
    return stream.uniforms(n) < p


def check_matrix(m, square: bool = False) -> np.ndarray:
    """Validate a dense real matrix and return it as a float64 array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise StructuralError(f"expected a 2-d matrix, got ndim={a.ndim}")
    if a.size == 0:
        raise StructuralError("matrix must be non-empty")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix contains non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {a.shape}")
    return a


def sym_eig(m, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as matching columns).
    Convergence: off-diagonal Frobenius mass <= 1e-12 * ||m||_F.
    """
    a = check_matrix(m, square=True)
    if not np.allclose(a, a.T, rtol=1e-9, atol=1e-9):
        raise StructuralError("matrix is not symmetric within tolerance 1e-9")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    vecs = np.eye(n)
    fro = float(np.linalg.norm(a))
    if n > 1 and fro > 0.0:
        tol = 1e-12 * fro
        for _ in range(max_sweeps):
            off_entries = a.copy()
            np.fill_diagonal(off_entries, 0.0)
            if float(np.linalg.norm(off_entries)) <= tol:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = float(a[p, q])
                    if apq == 0.0:
                        continue
                    gap = float(a[q, q] - a[p, p])
                    if abs(gap) + 100.0 * abs(apq) == abs(gap):
                        # Pivot negligible next to the diagonal gap: the exact
                        # rotation angle underflows, so take its leading term.
                        t = apq / gap
                    else:
                        theta = 0.5 * gap / apq
                        t = 1.0 / (abs(theta) + math.sqrt(1.0 + theta * theta))
                        if theta < 0.0:
                            t = -t
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    col_p = a[:, p].copy()
                    col_q = a[:, q].copy()
                    a[:, p] = c * col_p - s * col_q
                    a[:, q] = s * col_p + c * col_q
                    row_p = a[p, :].copy()
                    row_q = a[q, :].copy()
                    a[p, :] = c * row_p - s * row_q
                    a[q, :] = s * row_p + c * row_q
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    vec_p = vecs[:, p].copy()
                    vec_q = vecs[:, q].copy()
                    vecs[:, p] = c * vec_p - s * vec_q
                    vecs[:, q] = s * vec_p + c * vec_q
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], vecs[:, order]


def sym_eigvals(m) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, sorted descending."""
    values, _ = sym_eig(m)
    return values
