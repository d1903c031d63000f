"""scikit-learn style wrapper around the three-step cuboid recovery."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .forward import cuboid_model
from .inversion import GammaRegion, step2_cube_fit, step3_cuboid_fit
from .lm import LMSettings
from .measurement import MeasurementSet, SDPair
from .optics import Fluorophore, OpticalMedium

__all__ = ["CuboidFDOT"]


def _check_X(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 5:
        raise ValueError(f"X must have shape (n, 5) with columns xs1, xs2, xd1, xd2, t; got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if np.any(X[:, 4] <= 0):
        raise ValueError("times must be > 0")
    return X


def _as_measurements(X, y):
    keys, pairs, index = {}, [], []
    for row in X:
        k = tuple(row[:4])
        if k not in keys:
            keys[k] = len(pairs)
            pairs.append(SDPair(k[:2], k[2:], f"pair{len(pairs)}"))
        index.append(keys[k])
    return MeasurementSet(tuple(pairs), np.array(index), X[:, 4], np.asarray(y, dtype=float))


class CuboidFDOT(RegressorMixin, BaseEstimator):
    """Fit a cuboid fluorescent target to gated boundary measurements.

    Each row of ``X`` is one measurement ``(xs1, xs2, xd1, xd2, t)``; ``y``
    holds the observed values.  ``fit`` runs the cube fit followed by the
    cuboid fit; ``predict`` evaluates the recovered cuboid at new rows.

    Parameters
    ----------
    c, mu_s_prime, mu_a, beta : float
        Background optics.
    gamma_x1, gamma_x2 : (float, float)
        Prior lateral region for the cube centre.
    cube_init : tuple of 5
        Starting cube ``(X1, X2, X3, L, Q)``.
    refine : bool
        Run the 7-parameter cuboid fit after the cube fit.
    max_iter, mode : LM controls.

    Attributes
    ----------
    params_ : ndarray of shape (7,)
    cube_ : ndarray of shape (5,)
    report_ : InversionReport of the last stage
    """

    def __init__(self, c=0.219, mu_s_prime=1.0, mu_a=0.01, beta=0.5493, quantum_yield=1.0,
                 gamma_x1=(-10.0, 10.0), gamma_x2=(-10.0, 10.0), cube_init=(-8.0, -8.0, 4.0, 4.0, 0.1),
                 refine=True, max_iter=800, mode="B"):
        self.c = c
        self.mu_s_prime = mu_s_prime
        self.mu_a = mu_a
        self.beta = beta
        self.quantum_yield = quantum_yield
        self.gamma_x1 = gamma_x1
        self.gamma_x2 = gamma_x2
        self.cube_init = cube_init
        self.refine = refine
        self.max_iter = max_iter
        self.mode = mode

    def _medium(self):
        return OpticalMedium(self.c, self.mu_s_prime, self.mu_a, self.beta)

    def fit(self, X, y):
        X = _check_X(X)
        y = np.asarray(y, dtype=float)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one value per row of X")
        medium = self._medium()
        fluor = Fluorophore(gamma=self.quantum_yield, c=self.c)
        data = _as_measurements(X, y)
        settings = LMSettings(max_iter=int(self.max_iter), mode=self.mode)
        gamma = GammaRegion(tuple(self.gamma_x1), tuple(self.gamma_x2))
        cube, rep = step2_cube_fit(data, medium, fluor, gamma, self.cube_init, settings)
        self.cube_ = cube.as_array()
        self.report_ = rep
        self.params_ = cube.to_cuboid().as_array()
        if self.refine:
            cuboid, rep = step3_cuboid_fit(data, medium, fluor, cube, settings)
            self.params_ = cuboid.as_array()
            self.report_ = rep
        self.n_features_in_ = 5
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = _check_X(X)
        c_f = self.c * self.quantum_yield
        return cuboid_model(self._medium(), c_f, self.params_, X[:, :2], X[:, 2:4], X[:, 4])

    def score(self, X, y, sample_weight=None):
        """One minus the relative L2 misfit ``||F - y|| / ||y||``."""
        y = np.asarray(y, dtype=float)
        return 1.0 - float(np.linalg.norm(self.predict(X) - y) / np.linalg.norm(y))
