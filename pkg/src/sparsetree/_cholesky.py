"""Lower Cholesky factor of a growing/shrinking Gram matrix."""

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_MIN = 1e-8


class NumericalError(ArithmeticError):
    pass


class GramCholesky:
    """Maintains ``L`` with ``L @ L.T == G + ridge * I`` under row/column edits."""

    def __init__(self, ridge: float = 1e-10):
        self.ridge = ridge
        self.G = np.zeros((0, 0))
        self.L = np.zeros((0, 0))

    def __len__(self):
        return self.G.shape[0]

    def refactor(self):
        k = len(self)
        try:
            self.L = np.linalg.cholesky(self.G + self.ridge * np.eye(k))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Gram matrix not positive definite after ridge") from exc

    def append(self, cross: np.ndarray, diag: float):
        """Add a row/column with off-diagonal ``cross`` and diagonal ``diag``."""
        k = len(self)
        G = np.empty((k + 1, k + 1))
        G[:k, :k] = self.G
        G[:k, k] = G[k, :k] = cross
        G[k, k] = diag
        self.G = G
        if k == 0:
            self.refactor()
            return
        row = solve_triangular(self.L, cross, lower=True)
        pivot2 = diag + self.ridge - row @ row
        if pivot2 < PIVOT_MIN ** 2:
            self.refactor()
            return
        L = np.zeros((k + 1, k + 1))
        L[:k, :k] = self.L
        L[k, :k] = row
        L[k, k] = np.sqrt(pivot2)
        self.L = L

    def delete(self, i: int):
        """Remove row/column ``i``; the trailing block absorbs a rank-one update."""
        keep = np.arange(len(self)) != i
        self.G = self.G[np.ix_(keep, keep)]
        L = self.L
        x = L[i + 1:, i].copy()
        L22 = L[i + 1:, i + 1:].copy()
        ok = _rank_one_update(L22, x)
        top = np.delete(np.delete(L[:i + 1, :], i, axis=0), i, axis=1)
        k = len(self)
        newL = np.zeros((k, k))
        newL[:i, :] = top[:i]
        newL[i:, :i] = L[i + 1:, :i]
        newL[i:, i:] = L22
        self.L = newL
        if not ok:
            self.refactor()

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = solve_triangular(self.L, b, lower=True)
        return solve_triangular(self.L.T, y, lower=False)

    def inverse(self) -> np.ndarray:
        Z = self.solve(np.eye(len(self)))
        return 0.5 * (Z + Z.T)


def _rank_one_update(L: np.ndarray, x: np.ndarray) -> bool:
    """In place: ``L L^T + x x^T``. Returns False if a pivot got too small."""
    k = len(x)
    for j in range(k):
        r = np.hypot(L[j, j], x[j])
        if r < PIVOT_MIN:
            return False
        c, s = r / L[j, j], x[j] / L[j, j]
        L[j, j] = r
        if j + 1 < k:
            L[j + 1:, j] = (L[j + 1:, j] + s * x[j + 1:]) / c
            x[j + 1:] = c * x[j + 1:] - s * L[j + 1:, j]
    return True
