"""Eigenpairs of estimated operators and their tracking across data or dictionary growth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "EigenPair",
    "Tracking",
    "eigensystem",
    "track_eigenvalues",
    "eigenfunction_error",
    "weak_projections",
    "write_trajectories",
]


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue and coefficients of ``f = sum_n c_n psi_n``.

    ``flagged`` marks pairs whose residual exceeds ``1e-8 (|lambda| + 1)`` or
    which belong to a numerically defective eigenbasis.
    """

    value: complex
    coeffs: np.ndarray
    residual: float
    normalization: str
    flagged: bool = False


def _matrix(est) -> np.ndarray:
    return np.asarray(getattr(est, "A", est))


def _sort_key(lam):
    return np.lexsort((-lam.imag, -lam.real))


def eigensystem(est, ref=None, normalization: str = "L2") -> list[EigenPair]:
    """All eigenpairs of ``A_hat``, by descending real part then descending imaginary part.

    Parameters
    ----------
    est : EstimationResult or ndarray
        Estimated operator (its matrix ``A``).
    ref : ReferenceMatrices, optional
        Supplies ``G`` (and ``T``) for normalisation.
    normalization : {"L2", "D", "euclidean"}
        ``c^H G c = 1``, ``c^H (G + T) c = 1`` or ``|c| = 1``.
    """
    A = _matrix(est)
    lam, V = np.linalg.eig(A)
    if normalization == "L2":
        if ref is None:
            raise ValueError("L2 normalisation needs the Gram matrix")
        W = np.asarray(ref.G)
    elif normalization == "D":
        if ref is None or ref.T is None:
            raise ValueError("D normalisation needs G and T")
        W = np.asarray(ref.G) + np.asarray(ref.T)
    elif normalization == "euclidean":
        W = None
    else:
        raise ValueError(f"unknown normalisation {normalization!r}")
    defective = np.linalg.cond(V) > 1e12 if V.size else False
    pairs = []
    for i in _sort_key(lam):
        c = V[:, i]
        if W is not None:
            c = c / np.sqrt(np.real(np.conj(c) @ W @ c))
        res = float(np.linalg.norm(A @ c - lam[i] * c) / max(np.linalg.norm(c), 1e-300))
        bad = bool(defective or res > 1e-8 * (abs(lam[i]) + 1))
        pairs.append(EigenPair(complex(lam[i]), c, res, normalization, bad))
    return pairs


@dataclass(frozen=True)
class Tracking:
    """``values[s, j]`` is trajectory ``j`` at step ``s``; ``costs[s]`` the matching cost into step ``s``."""

    values: np.ndarray
    residuals: np.ndarray
    costs: np.ndarray


def track_eigenvalues(sequence, k: int) -> Tracking:
    """Follow the ``k`` leading eigenvalues through a sequence of estimates.

    Consecutive steps are matched by the assignment of minimal total
    ``|Delta lambda|``.
    """
    mats = [_matrix(e) for e in sequence]
    if not mats:
        raise ValueError("empty sequence")
    if k > min(m.shape[0] for m in mats):
        raise ValueError("k exceeds the smallest dictionary size in the sequence")
    vals = np.empty((len(mats), k), complex)
    ress = np.empty((len(mats), k))
    costs = np.zeros(len(mats))
    for s, A in enumerate(mats):
        pairs = eigensystem(A, normalization="euclidean")[:k]
        lam = np.array([p.value for p in pairs])
        res = np.array([p.residual for p in pairs])
        if s == 0:
            vals[0], ress[0] = lam, res
            continue
        cost = np.abs(vals[s - 1][:, None] - lam[None, :])
        rows, cols = linear_sum_assignment(cost)
        vals[s, rows], ress[s, rows] = lam[cols], res[cols]
        costs[s] = cost[rows, cols].sum()
    return Tracking(vals, ress, costs)


def eigenfunction_error(pair, reference_coeffs, G) -> float:
    """``min_{|alpha| = 1} || f - alpha f_ref ||_{L^2(mu)}`` through the Gram matrix."""
    c = np.asarray(getattr(pair, "coeffs", pair), complex)
    r = np.asarray(reference_coeffs, complex)
    G = np.asarray(G)
    sq = np.real(np.conj(c) @ G @ c) + np.real(np.conj(r) @ G @ r) - 2 * abs(np.conj(r) @ G @ c)
    return float(np.sqrt(max(sq, 0.0)))


def weak_projections(pair, panel, G, T) -> np.ndarray:
    """``<f, g_j>_D`` for test functions given as coefficient columns of ``panel``."""
    c = np.asarray(getattr(pair, "coeffs", pair), complex)
    return np.conj(np.asarray(panel, complex)).T @ (np.asarray(G) + np.asarray(T)) @ c


def write_trajectories(tracking: Tracking, path, steps=None) -> None:
    """CSV with columns ``step,index,re,im,residual``."""
    steps = range(tracking.values.shape[0]) if steps is None else steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "index", "re", "im", "residual"])
        for s, step in enumerate(steps):
            for j in range(tracking.values.shape[1]):
                v = tracking.values[s, j]
                w.writerow([step, j, repr(float(v.real)), repr(float(v.imag)), repr(float(tracking.residuals[s, j]))])
