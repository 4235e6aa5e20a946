"""scikit-learn compatible wrapper around the LSTM classifier."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .lstm import LstmNetwork, NetworkConfig, network_forward
from .optim import TrainConfig, train_block


def check_sequences(X, input_dim=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected an (n_samples, n_cycles, n_features) array, got {X.ndim}D")
    if X.shape[1] == 0:
        raise ValueError("sequences must contain at least one cycle")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if input_dim is not None and X.shape[2] != input_dim:
        raise ValueError(f"X has {X.shape[2]} features, but the network expects {input_dim}")
    return X


class LSTMClassifier(ClassifierMixin, BaseEstimator):
    """Stacked-LSTM binary classifier over phasor sequences.

    ``X`` is an array of shape (n_samples, n_cycles, n_features); labels
    are 0/1. ``predict_proba`` scores the final cycle, ``predict_sequence``
    returns the per-cycle probability of class 1.
    """

    def __init__(self, lstm_sizes=(64, 64, 64, 64), dense_sizes=(32, 16), epochs=200,
                 batch_size=32, learning_rate=1e-3, supervision="last", patience=20,
                 min_improvement=1e-6, random_state=0):
        self.lstm_sizes = lstm_sizes
        self.dense_sizes = dense_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.supervision = supervision
        self.patience = patience
        self.min_improvement = min_improvement
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, int(self.random_state),
                           self.supervision, self.patience, self.min_improvement)

    def fit(self, X, y):
        X = check_sequences(X)
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        if not set(np.unique(y)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        config = NetworkConfig(X.shape[2], tuple(self.lstm_sizes), tuple(self.dense_sizes))
        self.network_, self.loss_history_ = train_block(X, y, config, self._train_config())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[2]
        return self

    @classmethod
    def from_network(cls, net: LstmNetwork, **params) -> "LSTMClassifier":
        est = cls(lstm_sizes=net.config.lstm_sizes, dense_sizes=net.config.dense_sizes, **params)
        est.network_ = net
        est.loss_history_ = []
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = net.config.input_dim
        return est

    def predict_sequence(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_sequences(X, self.n_features_in_)
        return network_forward(X, self.network_)

    def predict_proba(self, X) -> np.ndarray:
        p = self.predict_sequence(X)[:, -1]
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
