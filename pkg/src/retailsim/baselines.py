"""Discriminative baselines predicting quantity from the shared design matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .nn import MLP, SGD, mse_loss_grad


def _check(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("X must be a finite 2-D array")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0] or not np.all(np.isfinite(y)):
        raise ValueError("y must be finite with one value per row of X")
    return X, y


# -- least squares -----------------------------------------------------------

def ols_fit(X, y, ridge: float = 1e-6) -> np.ndarray:
    """Least squares with an intercept column appended; a ``ridge`` floor on
    the normal equations keeps rank-deficient designs solvable."""
    X, y = _check(X, y)
    A = np.column_stack([X, np.ones(X.shape[0])])
    G = A.T @ A
    if np.linalg.matrix_rank(A) < A.shape[1]:
        G = G + ridge * np.eye(A.shape[1])
    return np.linalg.solve(G, A.T @ y)


def ols_predict(weights, X, clamp: bool = True) -> np.ndarray:
    X = _check(X)
    pred = X @ weights[:-1] + weights[-1]
    return np.maximum(pred, 0.0) if clamp else pred


# -- random forest -------------------------------------------------------------

def rf_fit(X, y, trees: int = 100, seed: int = 0, max_features="sqrt",
           min_samples_leaf: int = 2, bootstrap: bool = True) -> RandomForestRegressor:
    X, y = _check(X, y)
    if X.shape[0] < 2:
        raise ValueError("a forest needs at least two rows")
    forest = RandomForestRegressor(n_estimators=trees, max_features=max_features,
                                   min_samples_leaf=min_samples_leaf, bootstrap=bootstrap,
                                   random_state=seed)
    return forest.fit(X, y)


def rf_predict(forest: RandomForestRegressor, X) -> np.ndarray:
    return forest.predict(_check(X))


# -- multilayer perceptron -------------------------------------------------------

@dataclass
class MlpConfig:
    hidden: tuple = (256, 128)
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0


@dataclass
class MlpModel:
    net: MLP
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    losses: list


class TrainingError(RuntimeError):
    pass


def _standardize_fit(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def mlp_fit(X, y, cfg: MlpConfig | None = None) -> MlpModel:
    """Plain minibatch SGD on squared error. Inputs and the target are
    standardised with training statistics; predictions are mapped back."""
    cfg = cfg or MlpConfig()
    X, y = _check(X, y)
    rng = np.random.default_rng(cfg.seed)
    x_mean, x_std = _standardize_fit(X)
    y_mean, y_std = float(y.mean()), float(y.std()) or 1.0
    Z = (X - x_mean) / x_std
    t = ((y - y_mean) / y_std)[:, None]
    net = MLP([X.shape[1], *cfg.hidden, 1], rng)
    opt = SGD(cfg.learning_rate)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        total = 0.0
        for s in range(0, order.size, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = mse_loss_grad(net, Z[idx], t[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}")
            opt.step(net, grads)
            total += loss * idx.size
        losses.append(total / order.size)
    return MlpModel(net, x_mean, x_std, y_mean, y_std, losses)


def mlp_predict(model: MlpModel, X) -> np.ndarray:
    Z = (_check(X) - model.x_mean) / model.x_std
    return model.net(Z)[:, 0] * model.y_std + model.y_mean
