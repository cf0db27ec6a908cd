"""scikit-learn wrapper around the matching network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import McnConfig
from .network import MCN
from .training import PairDataset, predict_pairs, train


class MCNClassifier(ClassifierMixin, BaseEstimator):
    """Binary pair classifier: does the test window show the reference section end?

    ``fit`` takes a :class:`PairDataset`; ``predict_proba`` takes a
    PairDataset or an N x 2 x T x C x H x W array of (reference, test) windows.
    """

    def __init__(self, conv_layers=4, filters=64, embedding_dim=50, similarity=None, hidden_size=10,
                 ablation="none", epochs=10, learning_rate=1e-4, optimizer="adam", batch_size=8,
                 batches_per_group=None, max_validation_pairs=None, embed_init_scale=0.1, seed=0):
        self.conv_layers = conv_layers
        self.filters = filters
        self.embedding_dim = embedding_dim
        self.similarity = similarity
        self.hidden_size = hidden_size
        self.ablation = ablation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.batches_per_group = batches_per_group
        self.max_validation_pairs = max_validation_pairs
        self.embed_init_scale = embed_init_scale
        self.seed = seed

    def make_config(self):
        return McnConfig(**self.get_params())

    def fit(self, X, y=None, validation=None):
        if not isinstance(X, PairDataset):
            raise TypeError("fit expects a PairDataset (pairs plus the runs holding their frames)")
        if y is not None and not np.array_equal(np.asarray(y), X.labels):
            raise ValueError("y disagrees with the pair labels")
        self.model_ = MCN(self.make_config(), self.seed)
        self.history_ = train(self.model_, X, validation=validation)
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_model(cls, model):
        cfg = model.config
        est = cls(**{k: getattr(cfg, k) for k in cls().get_params()})
        est.model_ = model
        est.history_ = model.history
        est.classes_ = np.array([0, 1])
        return est

    def predict_proba(self, X):
        if isinstance(X, PairDataset):
            p = predict_pairs(self.model_, X).astype(np.float64)
        else:
            X = np.asarray(X, np.float32)
            if X.ndim != 6 or X.shape[1] != 2:
                raise ValueError(f"expected an N x 2 x T x C x H x W window array, got shape {X.shape}")
            n, _, T = X.shape[:3]
            feats = self.model_.extract_features(X.reshape((-1,) + X.shape[3:])).reshape(n, 2, T, -1)
            p = np.asarray(self.model_.match_features(feats[:, 0], feats[:, 1]), np.float64).reshape(n)
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)
