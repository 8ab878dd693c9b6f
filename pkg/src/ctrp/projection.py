"""Generalized tensor random projection (GTRP).

A projection maps a tensor of shape ``(p_1, ..., p_N)`` to shape
``(q_1, ..., q_M)``: the first ``R`` modes are multiplied by random
``q_m x p_m`` matrices, and modes ``R+1..N`` are contracted against a random
block of shape ``(q_{R+1}, ..., q_M, p_{R+1}, ..., p_N)``. A purely mode-wise
projection has ``R = M = N`` and no block.

Entries are i.i.d. ``sqrt(psi) * {+1, 0, -1}`` with probabilities
``1/(2 psi), 1 - 1/psi, 1/(2 psi)``: mean zero, unit variance, fourth
moment ``psi``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, mode_product

DEFAULT_PSI = 3.0


class ProjectionError(ValueError):
    """Raised for inconsistent projection parameters."""


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for projection ``index`` of an ensemble.

    Splitting rule: the first 64-bit word of
    ``SeedSequence([master_seed, index])``. Streams are independent of the
    order in which members are built.
    """
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_projection_entries(shape, psi: float, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. sparse sign entries of the given shape."""
    if not psi >= 1:
        raise ProjectionError(f"psi must be >= 1, got {psi}")
    u = rng.random(shape)
    half = 1.0 / (2.0 * psi)
    out = np.zeros(np.shape(u))
    out[u < half] = 1.0
    out[(u >= half) & (u < 2 * half)] = -1.0
    return out * math.sqrt(psi)


@dataclass(frozen=True)
class GtrpSpec:
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    mode_matrices: tuple[np.ndarray, ...]
    tensor_block: np.ndarray | None
    psi: float = DEFAULT_PSI
    seed: int | None = None
    preserve_modes: tuple[int, ...] = ()
    scale_on_apply: bool = False
    # free-form label ("TW", "MW", "MW(1)", ...) carried into reports
    kind: str = field(default="", compare=False)

    @property
    def n_modewise(self) -> int:
        return len(self.mode_matrices)

    @property
    def isometry_scale(self) -> float:
        """Factor making the projection an isometry in expectation, ``1/sqrt(q(M))``."""
        return 1.0 / math.sqrt(math.prod(self.output_shape))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply(self, x)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for mat in self.mode_matrices:
            h.update(np.ascontiguousarray(mat, dtype=float).tobytes())
        if self.tensor_block is not None:
            h.update(np.ascontiguousarray(self.tensor_block, dtype=float).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        """Serializable description; entries are regenerated from the seed."""
        return {
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "n_modewise": self.n_modewise,
            "psi": self.psi,
            "seed": self.seed,
            "preserve_modes": [m + 1 for m in self.preserve_modes],
            "scale_on_apply": self.scale_on_apply,
            "kind": self.kind,
            "content_hash": self.content_hash(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GtrpSpec":
        spec = build_gtrp(
            doc["input_shape"],
            doc["output_shape"],
            doc["n_modewise"],
            psi=doc.get("psi", DEFAULT_PSI),
            seed=doc["seed"],
            preserve_modes=[m - 1 for m in doc.get("preserve_modes", [])],
            scale_on_apply=doc.get("scale_on_apply", False),
            kind=doc.get("kind", ""),
        )
        expected = doc.get("content_hash")
        if expected is not None and spec.content_hash() != expected:
            raise ProjectionError("regenerated projection does not match recorded content hash")
        return spec


def build_gtrp(
    input_shape: Sequence[int],
    output_shape: Sequence[int],
    n_modewise: int,
    psi: float = DEFAULT_PSI,
    seed: int | None = None,
    preserve_modes: Sequence[int] = (),
    scale_on_apply: bool = False,
    kind: str = "",
) -> GtrpSpec:
    """Draw a projection.

    Parameters
    ----------
    input_shape, output_shape : sequences of int
        ``(p_1, ..., p_N)`` and ``(q_1, ..., q_M)``.
    n_modewise : int
        Number ``R`` of leading modes projected by matrices. ``R == M == N``
        gives a pure mode-wise projection; otherwise ``0 <= R < M <= N`` and
        modes ``R..N-1`` (zero-based) go through a tensor block.
    preserve_modes : sequence of int
        Zero-based mode-wise modes whose matrix is an exact identity
        (requires ``q_m == p_m``). No random entries are drawn for them.
    """
    p = tuple(int(v) for v in input_shape)
    q = tuple(int(v) for v in output_shape)
    n, m, r = len(p), len(q), int(n_modewise)
    if min(p + q, default=0) < 1 or n == 0 or m == 0:
        raise ProjectionError(f"shapes must be nonempty and positive: {p} -> {q}")
    pure_modewise = r == m == n
    if not pure_modewise and not (0 <= r < m <= n):
        raise ProjectionError(f"need 0 <= R < M <= N or R = M = N; got R={r}, M={m}, N={n}")
    preserve = tuple(sorted({int(k) for k in preserve_modes}))
    for k in preserve:
        if not 0 <= k < r:
            raise ProjectionError(f"preserved mode {k + 1} is not a mode-wise mode")
        if p[k] != q[k]:
            raise ProjectionError(f"preserved mode {k + 1} needs q == p, got {q[k]} != {p[k]}")
    if not psi >= 1:
        raise ProjectionError(f"psi must be >= 1, got {psi}")

    rng = np.random.default_rng(seed)
    mats = []
    for k in range(r):
        if k in preserve:
            mats.append(np.eye(p[k]))
        else:
            mats.append(sample_projection_entries((q[k], p[k]), psi, rng))
    block = None
    if not pure_modewise:
        block = sample_projection_entries(q[r:] + p[r:], psi, rng)
    return GtrpSpec(p, q, tuple(mats), block, float(psi), seed, preserve, scale_on_apply, kind)


def identity_spec(shape: Sequence[int]) -> GtrpSpec:
    """Pure mode-wise projection with identity matrices: the uncompressed model."""
    shape = tuple(int(v) for v in shape)
    return build_gtrp(shape, shape, len(shape), psi=1.0, seed=0,
                      preserve_modes=range(len(shape)), kind="identity")


def apply(spec: GtrpSpec, x: np.ndarray) -> np.ndarray:
    """Project one tensor, or a batch with a leading observation axis."""
    x = np.asarray(x, dtype=float)
    n = len(spec.input_shape)
    batched = x.ndim == n + 1
    if x.shape[batched:] != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match projection {spec.input_shape}")
    out = x
    for k, mat in enumerate(spec.mode_matrices):
        if k in spec.preserve_modes:
            continue
        out = mode_product(out, mat, k + batched)
    if spec.tensor_block is not None:
        r = spec.n_modewise
        n_out = len(spec.output_shape) - r
        block = spec.tensor_block
        axes_x = list(range(r + batched, n + batched))
        axes_h = list(range(n_out, block.ndim))
        out = np.tensordot(out, block, axes=(axes_x, axes_h))
    if spec.scale_on_apply:
        out = out * spec.isometry_scale
    return out


def apply_blockwise_via_matricization(spec: GtrpSpec, x: np.ndarray) -> np.ndarray:
    """Tensor-wise path computed as ``vec(x) @ mat(H)``.

    Only for ``R = 0, M = 1`` projections; kept as an independent route for
    cross-checking :func:`apply`.
    """
    if spec.n_modewise != 0 or len(spec.output_shape) != 1:
        raise ProjectionError("matricized path needs R = 0 and M = 1")
    q1 = spec.output_shape[0]
    block = spec.tensor_block
    # rows of mat(H) run over (p_1..p_N) first-fastest, columns over q_1
    mat_h = np.transpose(block, list(range(1, block.ndim)) + [0]).reshape(-1, q1, order="F")
    x = np.asarray(x, dtype=float)
    flat = x.reshape(x.shape[: x.ndim - len(spec.input_shape)] + (-1,), order="F")
    out = flat @ mat_h
    return out * spec.isometry_scale if spec.scale_on_apply else out


def compression_rate(spec: GtrpSpec) -> float:
    """``q(M) / p(N)``."""
    return math.prod(spec.output_shape) / math.prod(spec.input_shape)


# -- low-rank projections for matrices ------------------------------------


def _check_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"CP/TT projections are defined for 2-mode inputs, got {x.ndim} modes")
    return x


def cprp_factors(p1: int, p2: int, rank: int, q1: int, psi: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Factor arrays ``A1 (q1, p1, D)`` and ``A2 (q1, p2, D)`` of a CP projection."""
    if rank < 1:
        raise ProjectionError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    a1 = sample_projection_entries((q1, p1, rank), psi, rng)
    a2 = sample_projection_entries((q1, p2, rank), psi, rng)
    return a1, a2


def apply_cprp(x: np.ndarray, rank: int, q1: int, psi: float = DEFAULT_PSI, seed=None) -> np.ndarray:
    """Entry ``i`` is ``<sum_d A1[i,:,d] o A2[i,:,d], x>``."""
    x = _check_matrix(x)
    a1, a2 = cprp_factors(x.shape[0], x.shape[1], rank, q1, psi, seed)
    return np.einsum("iad,ibd,ab->i", a1, a2, x)


def apply_ttrp(x: np.ndarray, rank: int, q1: int, psi: float = DEFAULT_PSI, seed=None) -> np.ndarray:
    """Entry ``i`` is ``<G1_i x G2_i, x>`` with cores ``(1, p1, D)`` and ``(D, p2, 1)``.

    Cores are drawn from the same stream layout as :func:`cprp_factors`, so
    at equal seeds the two projections coincide (the core contraction over
    the bond index is the CP sum over components).
    """
    x = _check_matrix(x)
    a1, a2 = cprp_factors(x.shape[0], x.shape[1], rank, q1, psi, seed)
    g1 = a1[:, None, :, :]                      # (q1, 1, p1, D)
    g2 = np.transpose(a2, (0, 2, 1))[..., None]  # (q1, D, p2, 1)
    cores = np.einsum("iuad,idbv->iab", g1, g2)
    return np.einsum("iab,ab->i", cores, x)
