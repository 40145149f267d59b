"""Effective bending tensors from cell solves.

The quadratic form Q_h(x, .) on symmetric 2x2 matrices is stored as a 3x3
Voigt matrix C acting on vec(A) = (A11, A22, A12 + A21), i.e.
Q(A) = C vec(A) . vec(A).  Entries are obtained by polarisation from six
cell solves sharing one factorisation.
"""

import csv
import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from homoplate import microcell, numcore
from homoplate.errors import InvalidParameter

log = logging.getLogger(__name__)

CACHE_ENV = "HOMOPLATE_CACHE_DIR"

# Column order of every tensor CSV written by this package.
VOIGT_COLUMNS = ("C11", "C22", "C33", "C12", "C13", "C23")
_VOIGT_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


vec = numcore.sym_to_voigt


@dataclass(frozen=True)
class VoigtTensor:
    """Symmetric 3x3 matrix of a quadratic form on symmetric matrices."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise InvalidParameter(f"Voigt tensor must be 3x3, got {m.shape}")
        object.__setattr__(self, "m", m)

    def q(self, A):
        v = vec(A)
        return float(v @ self.m @ v)

    def bilinear(self, A, B):
        return float(vec(A) @ self.m @ vec(B))

    def is_pd(self):
        return bool(np.linalg.eigvalsh(0.5 * (self.m + self.m.T)).min() > 0.0)

    def entries(self):
        """The six independent entries in :data:`VOIGT_COLUMNS` order."""
        return np.array([self.m[i, j] for i, j in _VOIGT_INDEX])

    @classmethod
    def from_entries(cls, e):
        m = np.zeros((3, 3))
        for val, (i, j) in zip(e, _VOIGT_INDEX):
            m[i, j] = m[j, i] = val
        return cls(m)


# Basis matrices and their pairwise sums used for the polarisation.
_A1, _A2, _A3 = microcell.SYM_BASIS
POLARIZATION_MATRICES = (_A1, _A2, _A3, _A1 + _A2, _A1 + _A3, _A2 + _A3)


def voigt_from_values(q):
    """Voigt matrix from Q on the three basis matrices and pairwise sums.

    With vec(A3) = (0, 0, 2) the shear entries carry factors 1/4 and 1/2.
    """
    q1, q2, q3, q12, q13, q23 = q
    m = np.empty((3, 3))
    m[0, 0] = q1
    m[1, 1] = q2
    m[2, 2] = q3 / 4.0
    m[0, 1] = m[1, 0] = 0.5 * (q12 - q1 - q2)
    m[0, 2] = m[2, 0] = 0.25 * (q13 - q1 - q3)
    m[1, 2] = m[2, 1] = 0.25 * (q23 - q2 - q3)
    return VoigtTensor(m)


def compute_effective_tensor(material, x=(0.5, 0.5), gamma=1.0, n=16, method="direct",
                             reduce=True):
    """Voigt matrix of Q_h^{2,gamma}(x, .) on an n^3 cell mesh."""
    if int(n) != n or n < 1:
        raise InvalidParameter(f"need a positive number of subdivisions, got {n!r}")
    system = microcell.assemble_cell_system(microcell.HexMesh(int(n)), material, x=x,
                                            gamma=gamma, reduce=reduce)
    correctors = microcell.solve_correctors(system, POLARIZATION_MATRICES, method=method)
    C = voigt_from_values([microcell.evaluate_Qh(c) for c in correctors])
    log.debug("tensor for %s gamma=%g n=%d: %s", material.key, gamma, n, C.entries())
    return C


def rotation_matrix(alpha):
    """3x3 matrix T with vec(R^T A R) = T vec(A), R the rotation by alpha."""
    c, s = np.cos(alpha), np.sin(alpha)
    R = np.array([[c, -s], [s, c]])
    cols = []
    for E in (np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]]),
              np.array([[0.0, 0.5], [0.5, 0.0]])):
        cols.append(vec(R.T @ E @ R))
    return np.column_stack(cols)


def rotate_tensor(C, alpha):
    """Tensor of A -> Q(A_alpha) with A_alpha = R(alpha)^T A R(alpha).

    Implemented as the congruence T^T C T with the Voigt rotation matrix.
    """
    m = C.m if isinstance(C, VoigtTensor) else np.asarray(C, dtype=float)
    T = rotation_matrix(alpha)
    out = T.T @ m @ T
    return VoigtTensor(0.5 * (out + out.T))


def gamma_grid(count=32):
    """Log-spaced gamma_i = 10^(-1 + 2 i / (count - 1)), i = 0..count-1."""
    i = np.arange(count)
    return 10.0 ** (-1.0 + 2.0 * i / (count - 1))


def gamma_sweep(material, gammas, n, x=(0.5, 0.5), method="direct", cache=None):
    """One effective tensor per gamma."""
    gammas = [float(g) for g in gammas]
    for g in gammas:
        if not np.isfinite(g) or g <= 0.0:
            raise InvalidParameter(f"gamma must be positive, got {g!r}")
    cache = cache if cache is not None else TensorCache()
    return [cache.get_or_compute(material, x, g, n, method=method) for g in gammas]


def write_tensor_csv(path, rows, key_names, keys):
    """Write one CSV row per tensor: key columns then the Voigt entries."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(key_names) + list(VOIGT_COLUMNS))
        for k, C in zip(keys, rows):
            k = k if isinstance(k, (tuple, list)) else (k,)
            w.writerow([_fmt(v) for v in k] + [_fmt(v) for v in C.entries()])


def read_tensor_csv(path, num_keys=1):
    keys, rows = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for line in r:
            keys.append(tuple(float(v) for v in line[:num_keys]))
            rows.append(VoigtTensor.from_entries([float(v) for v in line[num_keys:]]))
    return keys, rows


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


class TensorCache:
    """Memoises tensors keyed by (material key, x key, gamma to 12 digits, n).

    If ``directory`` is given (default: the directory named by the
    ``HOMOPLATE_CACHE_DIR`` environment variable, if set) tensors are also
    stored there as small text files.
    """

    SCHEMA = 1

    def __init__(self, directory=None, use_env=True):
        if directory is None and use_env:
            directory = os.environ.get(CACHE_ENV) or None
        self.directory = directory
        self._mem = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(material, x, gamma, n, method="direct"):
        return (TensorCache.SCHEMA, material.cache_key(x), round(float(gamma), 12), int(n))

    def _path(self, key):
        digest = hashlib.sha256(repr(key).encode()).hexdigest()[:32]
        return os.path.join(self.directory, f"tensor-{digest}.txt")

    def get_or_compute(self, material, x, gamma, n, method="direct"):
        k = self.key(material, x, gamma, n)
        if k in self._mem:
            self.hits += 1
            return self._mem[k]
        if self.directory:
            p = self._path(k)
            if os.path.exists(p):
                with open(p) as fh:
                    head = fh.readline().strip()
                    vals = [float(v) for v in fh.readline().split()]
                if head == repr(k) and len(vals) == 6:
                    C = VoigtTensor.from_entries(vals)
                    self._mem[k] = C
                    self.hits += 1
                    return C
        self.misses += 1
        C = compute_effective_tensor(material, x=x, gamma=gamma, n=n, method=method)
        self._mem[k] = C
        if self.directory:
            os.makedirs(self.directory, exist_ok=True)
            tmp = self._path(k) + f".{os.getpid()}.tmp"
            with open(tmp, "w") as fh:
                fh.write(repr(k) + "\n")
                fh.write(" ".join(repr(float(v)) for v in C.entries()) + "\n")
            os.replace(tmp, self._path(k))
        return C


# ---------------------------------------------------------------------------
# Gamma profiles and tensor fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaProfile:
    """Constant gamma, or gamma(x) = a |x - center| + b."""

    kind: str = "constant"
    value: float = 1.0
    a: float = 0.0
    b: float = 1.0
    center: tuple = (0.0, 0.5)

    def __post_init__(self):
        if self.kind not in ("constant", "affine_radius"):
            raise InvalidParameter(f"unknown gamma profile {self.kind!r}")
        if self.kind == "constant" and not (np.isfinite(self.value) and self.value > 0):
            raise InvalidParameter(f"gamma must be positive, got {self.value!r}")

    @classmethod
    def constant(cls, value):
        return cls("constant", float(value))

    @classmethod
    def radial(cls, r0=0.2, g0=1.0, r1=np.sqrt(5.0) / 2.0, g1=0.1, center=(0.0, 0.5)):
        """Affine profile through (r0, g0) and (r1, g1)."""
        a = (g0 - g1) / (r0 - r1)
        b = g0 - a * r0
        return cls("affine_radius", a=float(a), b=float(b), center=tuple(center))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return self.a * r + self.b


@dataclass
class TensorField:
    """Voigt matrices at the quadrature points of a macroscopic mesh.

    ``m`` has shape (num_triangles, points_per_triangle, 3, 3).
    """

    m: np.ndarray
    constant: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def num_entries(self):
        return self.m.shape[0] * self.m.shape[1]

    def entry(self, t, i):
        return VoigtTensor(self.m[t, i])


def build_tensor_field(preset, points, gamma_profile, n, cache=None, method="direct"):
    """Evaluate the effective tensor at macroscopic quadrature points.

    ``points`` has shape (T, q, 2).  ``preset`` provides ``material``
    (a :class:`MicroMaterial`, possibly x-dependent through ``key_of_x``),
    ``constant`` (microstructure independent of x) and ``angle(x)`` (the
    in-plane rotation of the prototype microstructure, radians).
    """
    points = np.asarray(points, dtype=float)
    gam = np.asarray(gamma_profile(points))
    if np.any(~np.isfinite(gam)) or np.any(gam <= 0.0):
        raise InvalidParameter(f"gamma profile is not positive on the mesh (min {gam.min():.3g})")
    cache = cache if cache is not None else TensorCache()
    T, q = points.shape[:2]
    out = np.empty((T, q, 3, 3))
    material = preset.material
    if preset.constant and gamma_profile.kind == "constant" and not preset.rotated:
        C = cache.get_or_compute(material, (0.5, 0.5), gam.flat[0], n, method=method)
        out[:] = C.m
        return TensorField(out, constant=True, meta=dict(gamma=float(gam.flat[0]), n=int(n)))
    for t in range(T):
        for i in range(q):
            x = tuple(points[t, i])
            C = cache.get_or_compute(material, x, float(gam[t, i]), n, method=method)
            if preset.rotated:
                C = rotate_tensor(C, preset.angle(points[t, i]))
            out[t, i] = C.m
    return TensorField(out, constant=False, meta=dict(n=int(n)))
