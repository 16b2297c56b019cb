"""Mean-reverting portfolio objective: problem matrices, predictability and
support selection.

The objective minimised over the L1 sphere is ``x' (D - S + beta I) x`` where
``D`` is a predicted covariance and ``S`` the measured one.  Two predicted
covariances are supported:

* ``PA``: ``D = A S_prev A'`` from an autoregressive coefficient matrix,
* ``PC``: ``D = Sigma`` the covariance implied by the graphical model.

``U3`` (``A S_prev A' - Sigma``) can be built for inspection but is not
offered by the command line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, SolverError

PROBLEM_KINDS = ("PA", "PC", "U3")


def _symmetrize(m):
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class MrpProblem:
    """Restricted objective matrices for one solve.

    ``d_matrix`` and ``sigma_tilde`` are already restricted to ``support``.
    For ``U3`` the ``sigma_tilde`` slot holds the model covariance.
    """

    kind: str
    d_matrix: np.ndarray
    sigma_tilde: np.ndarray
    beta: float
    support: tuple
    m_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.asarray(self.d_matrix, dtype=float)
        s = np.asarray(self.sigma_tilde, dtype=float)
        if d.shape != s.shape or d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ConfigError(f"objective matrices must be square and conformable, got {d.shape} and {s.shape}")
        if len(self.support) != d.shape[0]:
            raise ConfigError("support size does not match matrix dimension")
        if len(set(self.support)) != len(self.support):
            raise ConfigError("support indices must be distinct")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        object.__setattr__(self, "d_matrix", d)
        object.__setattr__(self, "sigma_tilde", s)
        object.__setattr__(self, "support", tuple(int(i) for i in self.support))
        m = _symmetrize(d - s) + self.beta * np.eye(d.shape[0])
        object.__setattr__(self, "m_matrix", m)

    @property
    def k(self):
        return len(self.support)

    @property
    def base_matrix(self):
        """Symmetrized ``D - S`` without the L2 term."""
        return _symmetrize(self.d_matrix - self.sigma_tilde)

    def with_beta(self, beta):
        return MrpProblem(self.kind, self.d_matrix, self.sigma_tilde, float(beta), self.support)

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.m_matrix @ x)

    @classmethod
    def from_matrix(cls, base, beta=0.0, support=None, kind="custom"):
        """Wrap an explicit ``D - S`` matrix (``S`` taken as zero)."""
        base = np.asarray(base, dtype=float)
        k = base.shape[0]
        if support is None:
            support = tuple(range(k))
        return cls(kind, base, np.zeros_like(base), float(beta), tuple(support))

    def to_frame(self, assets=None):
        """Tabular dump of ``M`` labelled by support (or asset names)."""
        import pandas as pd

        labels = [assets[i] for i in self.support] if assets is not None else list(self.support)
        return pd.DataFrame(self.m_matrix, index=labels, columns=labels)


def build_problem(kind, a=None, sigma_model=None, sigma_tilde_prev=None, sigma_tilde=None,
                  beta=0.0, support=None):
    """Assemble the restricted objective for ``kind`` in {PA, PC, U3}.

    Only the inputs needed by ``kind`` are read: PC never touches ``a`` or
    ``sigma_tilde_prev``; PA never touches ``sigma_model``.
    """
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")

    def _mat(m, name):
        if m is None:
            raise ConfigError(f"problem {kind} requires {name}")
        m = np.asarray(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"{name} must be a square matrix, got shape {m.shape}")
        return m

    if kind == "PC":
        ref = _mat(sigma_model, "sigma_model")
    else:
        ref = _mat(a, "a")
    n = ref.shape[0]
    if support is None:
        support = tuple(range(n))
    idx = np.asarray(support, dtype=int)
    if idx.size == 0:
        raise ConfigError("support must be nonempty")
    if idx.min() < 0 or idx.max() >= n:
        raise ConfigError(f"support index out of range for dimension {n}")

    if kind == "PC":
        st = _mat(sigma_tilde, "sigma_tilde")
        if st.shape != (n, n):
            raise ConfigError("dimension mismatch between sigma_model and sigma_tilde")
        d = ref[np.ix_(idx, idx)]
        sub = st[np.ix_(idx, idx)]
    else:
        prev = _mat(sigma_tilde_prev, "sigma_tilde_prev")
        if prev.shape != (n, n):
            raise ConfigError("dimension mismatch between a and sigma_tilde_prev")
        rows = ref[idx, :]
        d = rows @ prev @ rows.T
        if kind == "PA":
            st = _mat(sigma_tilde, "sigma_tilde")
        else:
            st = _mat(sigma_model, "sigma_model")
        if st.shape != (n, n):
            raise ConfigError("dimension mismatch in subtracted covariance")
        sub = st[np.ix_(idx, idx)]
    return MrpProblem(kind, _symmetrize(d), _symmetrize(sub), float(beta), tuple(idx.tolist()))


@dataclass(frozen=True)
class Predictability:
    nu: float
    numerator: float
    denominator: float


def predictability(x, d, sigma_tilde):
    """Box-Tiao ratio ``x'Dx / x'Sx`` of predicted over measured variance."""
    x = np.asarray(getattr(x, "weights", x), dtype=float)
    num = float(x @ np.asarray(d) @ x)
    den = float(x @ np.asarray(sigma_tilde) @ x)
    if not den > 0:
        raise SolverError("portfolio has zero measured variance; predictability undefined")
    return Predictability(num / den, num, den)


def select_support(graph, k):
    """Greedy dense-subgraph selection on ``|G_ij| + |G_ji|``.

    Seeds with the node of largest weighted degree, then repeatedly adds the
    node with the largest total weight into the current subset.  Ties go to
    the lower index, so an empty graph yields ``0..k-1``.

    ``graph`` is either a ParentGraph or its coefficient matrix.
    """
    gamma = np.asarray(getattr(graph, "gamma", graph), dtype=float)
    n = gamma.shape[0]
    if k > n:
        raise ConfigError(f"support size k={k} exceeds universe size {n}")
    if k < 1:
        raise ConfigError("support size must be positive")
    w = np.abs(gamma) + np.abs(gamma.T)
    np.fill_diagonal(w, 0.0)
    chosen = [int(np.argmax(w.sum(axis=1)))]
    in_set = np.zeros(n, dtype=bool)
    in_set[chosen[0]] = True
    link = w[chosen[0]].copy()
    while len(chosen) < k:
        score = np.where(in_set, -np.inf, link)
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        in_set[nxt] = True
        link += w[nxt]
    return tuple(chosen)


def _fix_sign(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def generalized_eig_oracle(d, sigma_tilde, rtol=1e-9):
    """Smallest generalized eigenpair of ``(D, S)``.

    The eigenvector is L2-normalised with its largest-magnitude entry
    positive.  If the smallest eigenvalue is repeated, the returned vector is
    the S-orthogonal projection of the first coordinate axis with a nonzero
    component in that eigenspace.
    """
    d = _symmetrize(np.asarray(d, dtype=float))
    s = _symmetrize(np.asarray(sigma_tilde, dtype=float))
    try:
        vals, vecs = linalg.eigh(d, s)
    except linalg.LinAlgError as exc:
        raise SolverError(f"measured covariance is singular or not positive definite: {exc}") from exc
    lo = vals[0]
    tie = np.abs(vals - lo) <= rtol * max(1.0, abs(lo))
    if tie.sum() == 1:
        v = vecs[:, 0]
    else:
        basis = vecs[:, tie]
        proj = basis @ (basis.T @ s)
        v = None
        for i in range(d.shape[0]):
            cand = proj[:, i]
            if np.linalg.norm(cand) > 1e-8:
                v = cand
                break
        if v is None:  # pragma: no cover - basis spans a nonzero space
            v = basis[:, 0]
    v = v / np.linalg.norm(v)
    return float(lo), _fix_sign(v)
