"""Dense tensor algebra.

Tensors are plain ``numpy.ndarray`` objects. The canonical linearization is
first-mode-fastest (column-major, ``order="F"``): the entry at zero-based
index ``(j1, ..., jN)`` sits at ``j1 + p1*j2 + p1*p2*j3 + ...`` of the flat
buffer. ``vec``, ``matricize`` and the tensor literal format all use it.

Mode arguments are zero-based here; the CLI and config files use one-based
mode numbers and convert at the boundary.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor operands have incompatible shapes or modes."""


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build a float tensor, optionally from a flat buffer in canonical layout."""
    arr = np.asarray(data, dtype=float)
    if shape is None:
        return arr
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"shape entries must be >= 1, got {shape}")
    if arr.size != int(np.prod(shape)):
        raise ShapeError(f"buffer of length {arr.size} does not fill shape {shape}")
    return arr.reshape(shape, order="F")


def vec(t: np.ndarray) -> np.ndarray:
    """Vectorize with the first mode varying fastest."""
    return np.asarray(t).reshape(-1, order="F")


def unvec(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    return as_tensor(v, shape)


def _check_mode(ndim: int, mode: int) -> int:
    if not -ndim <= mode < ndim:
        raise ShapeError(f"mode {mode} out of range for a {ndim}-mode tensor")
    return mode % ndim


def mode_product(t: np.ndarray, h: np.ndarray, mode: int) -> np.ndarray:
    """n-mode product ``t x_mode h``.

    Entry ``(i1, ..., iN)`` of the result is ``sum_j t[..., j, ...] * h[i_mode, j]``
    so ``h`` must have ``t.shape[mode]`` columns.
    """
    t = np.asarray(t, dtype=float)
    h = np.atleast_2d(np.asarray(h, dtype=float))
    mode = _check_mode(t.ndim, mode)
    if h.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"matrix with {h.shape[1]} columns cannot act on mode {mode} of size {t.shape[mode]}"
        )
    out = np.tensordot(t, h, axes=([mode], [1]))
    return np.moveaxis(out, -1, mode)


def mode_range_product(
    t: np.ndarray, h: np.ndarray, start: int, stop: int, n_out: int
) -> np.ndarray:
    """Contract modes ``start..stop`` (inclusive) of ``t`` against a tensor block.

    ``h`` has shape ``(q_1, ..., q_{n_out}, p_start, ..., p_stop)``. The
    contracted modes of ``t`` are replaced, in place, by the ``n_out`` leading
    modes of ``h``. With ``start=0, stop=t.ndim-1`` the result entry
    ``(i1, ..., iM)`` equals ``inner(t, h[i1, ..., iM])``.
    """
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    if not (0 <= start <= stop < t.ndim):
        raise ShapeError(f"mode range {start}..{stop} invalid for a {t.ndim}-mode tensor")
    if n_out < 0 or h.ndim != n_out + (stop - start + 1):
        raise ShapeError(f"block of order {h.ndim} does not match {n_out} output modes")
    if h.shape[n_out:] != t.shape[start : stop + 1]:
        raise ShapeError(
            f"block trailing shape {h.shape[n_out:]} != contracted shape {t.shape[start:stop + 1]}"
        )
    k = stop - start + 1
    out = np.tensordot(t, h, axes=(list(range(start, stop + 1)), list(range(n_out, n_out + k))))
    # tensordot puts the new modes last; move them to where the contracted ones were
    new_axes = list(range(out.ndim - n_out, out.ndim))
    return np.moveaxis(out, new_axes, list(range(start, start + n_out)))


def inner(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"inner product of shapes {a.shape} and {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(t, dtype=float).ravel()))


def matricize(t: np.ndarray, row_modes: Sequence[int]) -> np.ndarray:
    """Unfold ``t`` so that ``row_modes`` index rows, remaining modes index columns.

    Both row and column indices follow the canonical first-fastest rule over
    their own mode lists, so ``matricize(t, all_modes)`` is ``vec(t)`` as a column.
    """
    t = np.asarray(t, dtype=float)
    rows = [_check_mode(t.ndim, m) for m in row_modes]
    if not rows:
        raise ShapeError("row_modes must be nonempty")
    if len(set(rows)) != len(rows):
        raise ShapeError(f"duplicate modes in {tuple(row_modes)}")
    cols = [m for m in range(t.ndim) if m not in rows]
    n_rows = int(np.prod([t.shape[m] for m in rows]))
    return np.transpose(t, rows + cols).reshape(n_rows, -1, order="F")


def unmatricize(mat: np.ndarray, row_modes: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for a target ``shape``."""
    shape = tuple(shape)
    rows = [m % len(shape) for m in row_modes]
    cols = [m for m in range(len(shape)) if m not in rows]
    perm = rows + cols
    permuted = np.asarray(mat).reshape([shape[m] for m in perm], order="F")
    return np.transpose(permuted, np.argsort(perm))


# -- PARAFAC --------------------------------------------------------------
#
# A margin set of rank D for a target of shape (q_1, ..., q_M) is a list of M
# factor matrices, factors[m] of shape (q_m, D); column d of factors[m] is the
# margin gamma_m^(d).


def check_margins(factors: Sequence[np.ndarray], shape: Sequence[int] | None = None) -> int:
    """Validate a margin set and return its rank."""
    if not factors:
        raise ShapeError("empty margin set")
    ranks = {np.shape(f)[1] for f in factors}
    if len(ranks) != 1 or any(np.ndim(f) != 2 for f in factors):
        raise ShapeError("every factor must be a (q_m, D) matrix with a common D")
    if shape is not None and tuple(np.shape(f)[0] for f in factors) != tuple(shape):
        raise ShapeError(
            f"margin lengths {tuple(np.shape(f)[0] for f in factors)} != tensor shape {tuple(shape)}"
        )
    return ranks.pop()


def parafac_compose(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Sum over d of the outer products gamma_1^(d) o ... o gamma_M^(d)."""
    check_margins(factors)
    letters = "abcdefghijklmnopqrstuvwxy"
    spec = ",".join(f"{letters[m]}z" for m in range(len(factors)))
    return np.einsum(f"{spec}->{letters[:len(factors)]}", *factors)


def parafac_component(factors: Sequence[np.ndarray], d: int) -> np.ndarray:
    return parafac_compose([np.asarray(f)[:, d : d + 1] for f in factors])


def partial_parafac_contract(
    x: np.ndarray, factors: Sequence[np.ndarray], d: int, skip_mode: int
) -> np.ndarray:
    """Contract ``x`` with every margin of component ``d`` except ``skip_mode``.

    ``x`` may carry a leading batch axis (shape ``(T, q_1, ..., q_M)``), in
    which case a ``(T, q_skip)`` array is returned. For a single tensor the
    result ``v`` satisfies ``inner(component_d, x) == factors[skip_mode][:, d] @ v``.
    """
    x = np.asarray(x, dtype=float)
    n_modes = len(factors)
    rank = check_margins(factors)
    if not 0 <= d < rank:
        raise IndexError(f"component {d} out of range for rank {rank}")
    if not 0 <= skip_mode < n_modes:
        raise IndexError(f"mode {skip_mode} out of range for {n_modes} modes")
    batched = x.ndim == n_modes + 1
    if x.shape[batched:] != tuple(f.shape[0] for f in factors):
        raise ShapeError(f"tensor shape {x.shape} does not match margins")
    out = x
    # contract from the last mode down so earlier axis positions stay valid
    for m in reversed(range(n_modes)):
        if m == skip_mode:
            continue
        axis = m + batched
        if axis == out.ndim - 1:
            out = np.tensordot(out, factors[m][:, d], axes=([axis], [0]))
        else:
            out = np.moveaxis(out, axis, -1) @ factors[m][:, d]
    return out


# -- tensor literal files ---------------------------------------------------


def to_literal(t: np.ndarray) -> dict:
    t = np.asarray(t, dtype=float)
    return {"shape": list(t.shape), "data": vec(t).tolist()}


def from_literal(doc: dict) -> np.ndarray:
    try:
        return as_tensor(doc["data"], doc["shape"])
    except KeyError as exc:
        raise ShapeError(f"tensor literal missing key {exc}") from None


def save_tensor(path: str | Path, t: np.ndarray) -> None:
    Path(path).write_text(json.dumps(to_literal(t)))


def load_tensor(path: str | Path) -> np.ndarray:
    return from_literal(json.loads(Path(path).read_text()))
