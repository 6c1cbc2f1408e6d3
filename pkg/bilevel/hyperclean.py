"""Data hyper-cleaning on a synthetic Gaussian-cluster classification task.

   The upper variable lam in R^{n_tr} holds one weight logit per training
   sample and the lower variable is a linear classifier W (k x dim, stored
   flattened row-major):

     g(lam, W) = 1/n_tr sum_i sigmoid(lam_i) CE(W x_i, y_i) + C_r |W|^2
     f(lam, W) = 1/n_val sum_j CE(W x_j, y_j)

   Training labels are corrupted with probability p; the mask is kept for
   evaluation only.
"""

import math
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import expit, logsumexp, softmax

from bilevel.errors import require
from bilevel.problem import (LOWER, UPPER, Batch, BilevelProblem,
                             SmoothnessConstants)
from bilevel.quadratic import random_orthogonal

# distance between any two class means
CLASS_SEPARATION = 3.0


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row softmax cross-entropy."""
    return logsumexp(logits, axis=1) - logits[np.arange(len(labels)), labels]


# pylint: disable=too-many-instance-attributes
class HyperCleanProblem(BilevelProblem):
    """Weighted multinomial logistic regression with per-sample weights."""

    family = 'hyperclean'

    # pylint: disable=too-many-arguments
    def __init__(self,
                 X_tr,
                 y_tr,
                 X_val,
                 y_val,
                 k: int,
                 C_r: float,
                 corruption_rate: float = 0.0,
                 corrupt_mask=None,
                 y_clean=None,
                 constants: Optional[SmoothnessConstants] = None) -> None:
        self.X_tr = np.array(X_tr, dtype=np.float64)
        self.y_tr = np.array(y_tr, dtype=np.int64)
        self.X_val = np.array(X_val, dtype=np.float64)
        self.y_val = np.array(y_val, dtype=np.int64)
        self.k = int(k)
        self.C_r = float(C_r)
        self.corruption_rate = float(corruption_rate)
        self.n_tr, self.dim = self.X_tr.shape
        self.n_val = self.X_val.shape[0]
        require(self.k >= 2, 'need at least two classes')
        require(self.C_r > 0.0 and math.isfinite(self.C_r), 'C_r must be positive')
        require(self.X_val.shape[1] == self.dim, 'train and validation widths differ')
        if corrupt_mask is None:
            corrupt_mask = np.zeros(self.n_tr, dtype=bool)
        self.corrupt_mask = np.array(corrupt_mask, dtype=bool)
        self.y_clean = self.y_tr.copy() if y_clean is None else np.array(y_clean,
                                                                        dtype=np.int64)
        if constants is None:
            constants = self.estimate_constants()
        super().__init__(self.n_tr, self.k * self.dim, constants)

    def estimate_constants(self) -> SmoothnessConstants:
        """mu = 2 C_r exactly. L bounds the softmax curvature (at most 1/2)
           times the second moment of the features; M, tau and rho are
           crude feature-norm bounds.
        """
        mu = 2.0 * self.C_r
        gram_top = scipy.linalg.eigvalsh(self.X_tr.T @ self.X_tr)[-1]
        L = mu + 0.5 * gram_top / self.n_tr
        val_norm = float(np.max(np.linalg.norm(self.X_val, axis=1)))
        tr_norm = float(np.max(np.linalg.norm(self.X_tr, axis=1)))
        M = math.sqrt(2.0) * val_norm
        tau = 0.5 * tr_norm**2 / self.n_tr
        rho = tr_norm**3 / self.n_tr
        return SmoothnessConstants(M=M,
                                   L=float(L),
                                   mu=mu,
                                   tau=tau,
                                   rho=rho,
                                   sigma=tr_norm,
                                   estimated=('M', 'L', 'tau', 'rho', 'sigma'))

    def population_size(self, level: str = LOWER) -> int:
        return self.n_tr if level == LOWER else self.n_val

    def weights(self, W) -> np.ndarray:
        """Views the flattened lower variable as the k x dim classifier."""
        return np.asarray(W, dtype=np.float64).reshape(self.k, self.dim)

    def _lower_rows(self, batch: Optional[Batch]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.arange(self.n_tr) if batch is None else batch.indices
        return idx, self.X_tr[idx], self.y_tr[idx]

    def _upper_rows(self, batch: Optional[Batch]) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self.n_val) if batch is None else batch.indices
        return self.X_val[idx], self.y_val[idx]

    def _residual(self, W, X, labels) -> np.ndarray:
        """softmax(W x_i) - e_{y_i} for each row."""
        resid = softmax(X @ self.weights(W).T, axis=1)
        resid[np.arange(len(labels)), labels] -= 1.0
        return resid

    def upper_value(self, x, y, batch: Optional[Batch] = None) -> float:
        X, labels = self._upper_rows(batch)
        return float(np.mean(cross_entropy(X @ self.weights(y).T, labels)))

    def lower_value(self, x, y, batch: Optional[Batch] = None) -> float:
        idx, X, labels = self._lower_rows(batch)
        W = self.weights(y)
        ce = cross_entropy(X @ W.T, labels)
        return float(np.mean(expit(np.asarray(x)[idx]) * ce) + self.C_r * np.sum(W * W))

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        return np.zeros(self.n_tr)

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        X, labels = self._upper_rows(batch)
        resid = self._residual(y, X, labels)
        return (resid.T @ X / len(labels)).ravel()

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        idx, X, labels = self._lower_rows(batch)
        resid = self._residual(y, X, labels) * expit(np.asarray(x)[idx])[:, None]
        grad = resid.T @ X / len(idx) + 2.0 * self.C_r * self.weights(y)
        return grad.ravel()

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        idx, X, labels = self._lower_rows(batch)
        lam = np.asarray(x)[idx]
        resid = self._residual(y, X, labels)
        proj = X @ self.weights(v).T
        sig = expit(lam)
        contrib = sig * (1.0 - sig) * np.sum(resid * proj, axis=1) / len(idx)
        out = np.zeros(self.n_tr)
        np.add.at(out, idx, contrib)
        return out

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        idx, X, _ = self._lower_rows(batch)
        probs = softmax(X @ self.weights(y).T, axis=1)
        proj = X @ self.weights(v).T
        # (diag(p) - p p') u for each row
        curv = probs * proj - probs * np.sum(probs * proj, axis=1, keepdims=True)
        curv *= expit(np.asarray(x)[idx])[:, None]
        hvp = curv.T @ X / len(idx) + 2.0 * self.C_r * self.weights(v)
        return hvp.ravel()

    def validation_accuracy(self, y) -> float:
        """Fraction of validation samples classified correctly by W."""
        pred = np.argmax(self.X_val @ self.weights(y).T, axis=1)
        return float(np.mean(pred == self.y_val))

    def weight_split(self, x) -> Tuple[float, float]:
        """Mean sigmoid(lam) over (corrupted, clean) training samples."""
        sig = expit(np.asarray(x))
        mask = self.corrupt_mask
        corrupted = float(np.mean(sig[mask])) if mask.any() else float('nan')
        clean = float(np.mean(sig[~mask])) if (~mask).any() else float('nan')
        return corrupted, clean

    def to_dict(self) -> Dict:
        return {
            'family': self.family,
            'p': self.p,
            'q': self.q,
            'k': self.k,
            'C_r': self.C_r,
            'corruption_rate': self.corruption_rate,
            'X_tr': self.X_tr.tolist(),
            'y_tr': self.y_tr.tolist(),
            'X_val': self.X_val.tolist(),
            'y_val': self.y_val.tolist(),
            'corrupt_mask': self.corrupt_mask.tolist(),
            'y_clean': self.y_clean.tolist(),
            'constants': self.constants.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'HyperCleanProblem':
        """Rebuilds an instance from to_dict output."""
        return cls(data['X_tr'],
                   data['y_tr'],
                   data['X_val'],
                   data['y_val'],
                   data['k'],
                   data['C_r'],
                   corruption_rate=data.get('corruption_rate', 0.0),
                   corrupt_mask=data.get('corrupt_mask'),
                   y_clean=data.get('y_clean'),
                   constants=SmoothnessConstants.from_dict(data['constants']))


def class_means(dim: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k class means with pairwise distance CLASS_SEPARATION (exact when dim >= k)."""
    radius = CLASS_SEPARATION / math.sqrt(2.0)
    if dim >= k:
        return radius * random_orthogonal(dim, rng)[:, :k].T
    gauss = rng.standard_normal((k, dim))
    return radius * gauss / np.linalg.norm(gauss, axis=1, keepdims=True)


# pylint: disable=too-many-arguments,too-many-locals
def make_hyperclean(n_tr: int, n_val: int, dim: int, k: int, p: float, C_r: float,
                    seed: int) -> HyperCleanProblem:
    """Synthesizes unit-variance Gaussian clusters, then replaces each
       training label with probability p by one of the other k-1 classes.
    """
    for name, value in (('n_tr', n_tr), ('n_val', n_val), ('dim', dim)):
        require(int(value) == value and value >= 1, f'{name} must be a positive integer')
    require(int(k) == k and k >= 2, 'k must be an integer >= 2')
    require(math.isfinite(p) and 0.0 <= p < 1.0, f'corruption rate must lie in [0, 1), got {p}')
    require(math.isfinite(C_r) and C_r > 0.0, f'C_r must be positive, got {C_r}')
    rng = np.random.default_rng(seed)
    means = class_means(dim, k, rng)
    y_clean = rng.integers(0, k, size=n_tr)
    X_tr = means[y_clean] + rng.standard_normal((n_tr, dim))
    y_val = rng.integers(0, k, size=n_val)
    X_val = means[y_val] + rng.standard_normal((n_val, dim))
    mask = rng.random(n_tr) < p
    shift = rng.integers(1, k, size=n_tr)
    y_tr = np.where(mask, (y_clean + shift) % k, y_clean)
    return HyperCleanProblem(X_tr,
                             y_tr,
                             X_val,
                             y_val,
                             k,
                             C_r,
                             corruption_rate=p,
                             corrupt_mask=mask,
                             y_clean=y_clean)
