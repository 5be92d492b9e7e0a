"""Residual vector quantization with an EMA-updated codebook.

quantize snaps each node representation to its nearest code (ties to the
lowest index) and returns H' = Q(H) + H with the quantized branch
gradient-stopped, so the residual path carries gradient with coefficient
exactly 1.  The codebook learns by exponential moving averages, not
gradients; every code decays each step, assigned or not, and dead codes
are never restarted.

Ablations: no_vq passes H through untouched; no_residual keeps only the
quantized rows with a straight-through gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError

EPS_DEN = 1e-5  # denominator floor for never-used codes
MODES = ("full", "no_vq", "no_residual")
_CHUNK = 512


@dataclass
class Codebook:
    codes: np.ndarray  # (|C|, d) code vectors e_k
    counts: np.ndarray  # (|C|,) EMA counts N_k
    sums: np.ndarray  # (|C|, d) EMA sums m_k
    eta: float
    usage: np.ndarray  # (|C|,) lifetime assignment counts

    @property
    def size(self) -> int:
        return int(self.codes.shape[0])


@dataclass
class QuantizeResult:
    h_prime: ad.Tensor
    assignments: np.ndarray | None  # None when quantization is bypassed
    commitment: ad.Tensor  # scalar, tape-recorded


def init_codebook(first_rows: np.ndarray, size: int, eta: float) -> Codebook:
    """Seed codes from the first batch's node representations, cycling if
    the batch is smaller than the codebook; N_k = 1 and m_k = e_k keep the
    e = m / max(N, eps) invariant true from step 0."""
    if size < 1:
        raise ContractError("codebook size must be >= 1")
    if not 0.0 < eta < 1.0:
        raise ContractError(f"eta must be in (0,1), got {eta}")
    if first_rows.ndim != 2 or first_rows.shape[0] == 0:
        raise ContractError("codebook init needs a non-empty row matrix")
    codes = first_rows[np.arange(size) % first_rows.shape[0]].astype(np.float64).copy()
    return Codebook(
        codes=codes,
        counts=np.ones(size),
        sums=codes.copy(),
        eta=float(eta),
        usage=np.zeros(size, dtype=np.int64),
    )


def nearest_codes(codes: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Index of the nearest code per row; ties resolve to the lowest index.

    Distances use the direct (row - code)^2 form, chunked over rows: the
    expanded |h|^2 - 2h.e + |e|^2 form can flip constructed ties by a ulp.
    """
    out = np.empty(rows.shape[0], dtype=np.int64)
    for lo in range(0, rows.shape[0], _CHUNK):
        chunk = rows[lo : lo + _CHUNK]
        d2 = ((chunk[:, None, :] - codes[None, :, :]) ** 2).sum(axis=-1)
        out[lo : lo + _CHUNK] = np.argmin(d2, axis=1)
    return out


def quantize(book: Codebook, h: ad.Tensor) -> QuantizeResult:
    """Full-mode RVQ: H' = Q(H) + H, plus the commitment penalty."""
    if book.size == 0:
        raise ContractError("quantize: empty codebook")
    if h.data.ndim != 2 or h.data.shape[1] != book.codes.shape[1]:
        raise ContractError(f"quantize: H shape {h.data.shape} does not match codebook d={book.codes.shape[1]}")
    assignments = nearest_codes(book.codes, h.data)
    quantized = ad.Tensor(book.codes[assignments])  # constant w.r.t. gradients
    return QuantizeResult(
        h_prime=ad.add(h, quantized),
        assignments=assignments,
        commitment=ad.squared_error(h, quantized),
    )


def apply_rvq(book: Codebook, h: ad.Tensor, mode: str = "full") -> QuantizeResult:
    """Mode-dispatched quantization: full, bypass (no_vq), or straight-through
    codes without the residual connection (no_residual)."""
    if mode not in MODES:
        raise ContractError(f"unknown rvq mode {mode!r}; expected one of {MODES}")
    if mode == "no_vq":
        return QuantizeResult(h_prime=h, assignments=None, commitment=ad.Tensor(0.0))
    full = quantize(book, h)
    if mode == "full":
        return full
    # no_residual: forward is the quantized rows alone, gradient passes straight through
    st = ad.straight_through(h, book.codes[full.assignments])
    return QuantizeResult(h_prime=st, assignments=full.assignments, commitment=full.commitment)


def ema_update(book: Codebook, h_rows: np.ndarray, assignments: np.ndarray) -> Codebook:
    """One EMA step over all codes (unassigned codes decay too); training only."""
    if assignments.shape != (h_rows.shape[0],):
        raise ContractError("ema_update: assignments must pair with H rows")
    n_k = np.bincount(assignments, minlength=book.size).astype(np.float64)
    batch_sums = np.zeros_like(book.sums)
    np.add.at(batch_sums, assignments, h_rows)
    book.counts = book.counts * book.eta + n_k * (1.0 - book.eta)
    book.sums = book.sums * book.eta + batch_sums * (1.0 - book.eta)
    book.codes = book.sums / np.maximum(book.counts, EPS_DEN)[:, None]
    book.usage = book.usage + n_k.astype(np.int64)
    return book


def copy_codebook(book: Codebook) -> Codebook:
    return Codebook(
        codes=book.codes.copy(),
        counts=book.counts.copy(),
        sums=book.sums.copy(),
        eta=book.eta,
        usage=book.usage.copy(),
    )
