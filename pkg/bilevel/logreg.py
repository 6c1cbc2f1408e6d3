"""Regularization tuning for multinomial logistic regression.

   The upper variable lam in R^{dim} holds one log regularization strength
   per feature and the lower variable is the classifier W (k x dim, stored
   flattened row-major):

     g(lam, W) = 1/n_tr sum_i CE(W x_i, y_i) + 1/(k dim) sum_ij exp(lam_j) W_ij^2
     f(lam, W) = 1/n_val sum_j CE(W x_j, y_j)

   lam only enters the regularizer, so grad_lam f is zero and the mixed
   derivative does not depend on the sampled rows. The synthetic data
   carries its class signal in the first `informative` features only.
"""

import math
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import softmax

from bilevel.errors import require
from bilevel.hyperclean import cross_entropy
from bilevel.problem import LOWER, Batch, BilevelProblem, SmoothnessConstants
from bilevel.quadratic import random_orthogonal

# distance between any two class means within the informative features
CLASS_SEPARATION = 3.0


# pylint: disable=too-many-instance-attributes
class LogRegProblem(BilevelProblem):
    """Per-feature L2 regularization weights of a linear classifier.

       The smoothness constants hold for lam inside [lam_low, lam_high]^dim:
       mu = 2 exp(lam_low) / (k dim) and the regularizer adds
       2 exp(lam_high) / (k dim) to L.
    """

    family = 'logreg'

    # pylint: disable=too-many-arguments
    def __init__(self,
                 X_tr,
                 y_tr,
                 X_val,
                 y_val,
                 k: int,
                 informative: Optional[int] = None,
                 lam_low: float = -4.0,
                 lam_high: float = 4.0,
                 constants: Optional[SmoothnessConstants] = None) -> None:
        self.X_tr = np.array(X_tr, dtype=np.float64)
        self.y_tr = np.array(y_tr, dtype=np.int64)
        self.X_val = np.array(X_val, dtype=np.float64)
        self.y_val = np.array(y_val, dtype=np.int64)
        self.k = int(k)
        self.n_tr, self.dim = self.X_tr.shape
        self.n_val = self.X_val.shape[0]
        self.informative = self.dim if informative is None else int(informative)
        self.lam_low = float(lam_low)
        self.lam_high = float(lam_high)
        require(self.k >= 2, 'need at least two classes')
        require(self.X_val.shape[1] == self.dim, 'train and validation widths differ')
        require(1 <= self.informative <= self.dim,
                f'informative must lie in [1, {self.dim}], got {self.informative}')
        require(math.isfinite(self.lam_low) and math.isfinite(self.lam_high) and
                self.lam_low <= self.lam_high, 'need finite lam_low <= lam_high')
        self.reg_scale = 1.0 / (self.k * self.dim)
        if constants is None:
            constants = self.estimate_constants()
        super().__init__(self.dim, self.k * self.dim, constants)

    def estimate_constants(self) -> SmoothnessConstants:
        """Bounds over the lam box; every field is an estimate."""
        low = 2.0 * self.reg_scale * math.exp(self.lam_low)
        high = 2.0 * self.reg_scale * math.exp(self.lam_high)
        gram_top = scipy.linalg.eigvalsh(self.X_tr.T @ self.X_tr)[-1]
        tr_norm = float(np.max(np.linalg.norm(self.X_tr, axis=1)))
        val_norm = float(np.max(np.linalg.norm(self.X_val, axis=1)))
        return SmoothnessConstants(M=math.sqrt(2.0) * val_norm,
                                   L=float(high + 0.5 * gram_top / self.n_tr),
                                   mu=low,
                                   tau=high,
                                   rho=tr_norm**3 + high,
                                   sigma=tr_norm,
                                   estimated=('M', 'L', 'mu', 'tau', 'rho', 'sigma'))

    def population_size(self, level: str = LOWER) -> int:
        return self.n_tr if level == LOWER else self.n_val

    def weights(self, W) -> np.ndarray:
        return np.asarray(W, dtype=np.float64).reshape(self.k, self.dim)

    def penalty(self, x) -> np.ndarray:
        """Per-feature factor exp(lam_j) / (k dim)."""
        return self.reg_scale * np.exp(np.asarray(x, dtype=np.float64))

    def _rows(self, batch: Optional[Batch], X, labels) -> Tuple[np.ndarray, np.ndarray]:
        if batch is None:
            return X, labels
        return X[batch.indices], labels[batch.indices]

    @staticmethod
    def _residual(W, X, labels) -> np.ndarray:
        resid = softmax(X @ W.T, axis=1)
        resid[np.arange(len(labels)), labels] -= 1.0
        return resid

    def upper_value(self, x, y, batch: Optional[Batch] = None) -> float:
        X, labels = self._rows(batch, self.X_val, self.y_val)
        return float(np.mean(cross_entropy(X @ self.weights(y).T, labels)))

    def lower_value(self, x, y, batch: Optional[Batch] = None) -> float:
        X, labels = self._rows(batch, self.X_tr, self.y_tr)
        W = self.weights(y)
        reg = np.sum(self.penalty(x) * np.sum(W * W, axis=0))
        return float(np.mean(cross_entropy(X @ W.T, labels)) + reg)

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        return np.zeros(self.dim)

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        X, labels = self._rows(batch, self.X_val, self.y_val)
        resid = self._residual(self.weights(y), X, labels)
        return (resid.T @ X / len(labels)).ravel()

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        X, labels = self._rows(batch, self.X_tr, self.y_tr)
        W = self.weights(y)
        grad = self._residual(W, X, labels).T @ X / len(labels) + 2.0 * W * self.penalty(x)
        return grad.ravel()

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        # d/dlam_j <grad_W g, V> = 2 exp(lam_j) / (k dim) sum_i W_ij V_ij
        return 2.0 * self.penalty(x) * np.sum(self.weights(y) * self.weights(v), axis=0)

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        X, _ = self._rows(batch, self.X_tr, self.y_tr)
        probs = softmax(X @ self.weights(y).T, axis=1)
        proj = X @ self.weights(v).T
        curv = probs * proj - probs * np.sum(probs * proj, axis=1, keepdims=True)
        hvp = curv.T @ X / len(X) + 2.0 * self.weights(v) * self.penalty(x)
        return hvp.ravel()

    def validation_accuracy(self, y) -> float:
        pred = np.argmax(self.X_val @ self.weights(y).T, axis=1)
        return float(np.mean(pred == self.y_val))

    def feature_split(self, x) -> Tuple[float, float]:
        """Mean lam over (informative, noise) features. NaN when a group is empty."""
        lam = np.asarray(x, dtype=np.float64)
        signal = float(np.mean(lam[:self.informative]))
        noise = float(np.mean(lam[self.informative:])) if self.informative < self.dim else math.nan
        return signal, noise

    def to_dict(self) -> Dict:
        return {
            'family': self.family,
            'p': self.p,
            'q': self.q,
            'k': self.k,
            'informative': self.informative,
            'lam_low': self.lam_low,
            'lam_high': self.lam_high,
            'X_tr': self.X_tr.tolist(),
            'y_tr': self.y_tr.tolist(),
            'X_val': self.X_val.tolist(),
            'y_val': self.y_val.tolist(),
            'constants': self.constants.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'LogRegProblem':
        return cls(data['X_tr'],
                   data['y_tr'],
                   data['X_val'],
                   data['y_val'],
                   data['k'],
                   informative=data.get('informative'),
                   lam_low=data.get('lam_low', -4.0),
                   lam_high=data.get('lam_high', 4.0),
                   constants=SmoothnessConstants.from_dict(data['constants']))


# pylint: disable=too-many-arguments,too-many-locals
def make_logreg(n_tr: int,
                n_val: int,
                dim: int,
                k: int,
                seed: int,
                informative: Optional[int] = None,
                lam_low: float = -4.0,
                lam_high: float = 4.0) -> LogRegProblem:
    """Unit-variance Gaussian clusters whose means differ only in the first
       `informative` features (dim // 2 when None); the remaining features
       are pure noise.
    """
    for name, value in (('n_tr', n_tr), ('n_val', n_val), ('dim', dim)):
        require(int(value) == value and value >= 1, f'{name} must be a positive integer')
    require(int(k) == k and k >= 2, 'k must be an integer >= 2')
    if informative is None:
        informative = max(1, dim // 2)
    require(int(informative) == informative and 1 <= informative <= dim,
            f'informative must be an integer in [1, {dim}], got {informative}')
    rng = np.random.default_rng(seed)
    radius = CLASS_SEPARATION / math.sqrt(2.0)
    means = np.zeros((k, dim))
    if informative >= k:
        means[:, :informative] = radius * random_orthogonal(informative, rng)[:, :k].T
    else:
        gauss = rng.standard_normal((k, informative))
        means[:, :informative] = radius * gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    y_tr = rng.integers(0, k, size=n_tr)
    X_tr = means[y_tr] + rng.standard_normal((n_tr, dim))
    y_val = rng.integers(0, k, size=n_val)
    X_val = means[y_val] + rng.standard_normal((n_val, dim))
    return LogRegProblem(X_tr,
                         y_tr,
                         X_val,
                         y_val,
                         k,
                         informative=informative,
                         lam_low=lam_low,
                         lam_high=lam_high)
