"""Scikit-learn style front end over the training loop.

X is a sequence of protein hierarchies (objects, file paths, or
serialized blobs); y is any 1-d label array. Sensible desk-scale
defaults: a narrow model and a short schedule; raise width_scale and
epochs for real runs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .network import (
    ForwardContext,
    ModelConfig,
    embed_proteins,
    model_forward,
)
from .training import TrainConfig, _records_batch, format_log_entry, make_record, train
from .validation import check_hierarchies, check_labels


class IEConvClassifier(BaseEstimator, ClassifierMixin):
    def __init__(
        self,
        epochs: int = 60,
        width_scale: float = 0.125,
        level_radii: tuple = (3.0, 6.0, 8.0, 12.0, 16.0),
        level_widths: tuple = (64, 128, 256, 512, 1024),
        kernel_hidden: int = 16,
        conv_variant: str = "Ours",
        neighborhood_variant: str = "Euclidean",
        pooling_enabled: bool = True,
        lr0: float = 0.001,
        momentum: float = 0.98,
        l2: float = 0.001,
        grad_clip_norm: float = 10.0,
        batch_size: int = 8,
        coord_noise_sigma: float = 0.1,
        axis_scale_range: tuple = (0.9, 1.1),
        feature_noise_sigma: float = 0.025,
        atom_feature_dropout_p: float = 0.05,
        use_class_weights: bool = False,
        validation_fraction: float = 0.0,
        seed: int = 0,
        verbose: bool = False,
    ):
        self.epochs = epochs
        self.width_scale = width_scale
        self.level_radii = level_radii
        self.level_widths = level_widths
        self.kernel_hidden = kernel_hidden
        self.conv_variant = conv_variant
        self.neighborhood_variant = neighborhood_variant
        self.pooling_enabled = pooling_enabled
        self.lr0 = lr0
        self.momentum = momentum
        self.l2 = l2
        self.grad_clip_norm = grad_clip_norm
        self.batch_size = batch_size
        self.coord_noise_sigma = coord_noise_sigma
        self.axis_scale_range = axis_scale_range
        self.feature_noise_sigma = feature_noise_sigma
        self.atom_feature_dropout_p = atom_feature_dropout_p
        self.use_class_weights = use_class_weights
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.verbose = verbose

    def _model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            level_radii=tuple(self.level_radii),
            level_widths=tuple(self.level_widths),
            kernel_hidden=self.kernel_hidden,
            conv_variant=self.conv_variant,
            neighborhood_variant=self.neighborhood_variant,
            pooling_enabled=self.pooling_enabled,
            width_scale=self.width_scale,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            momentum=self.momentum,
            lr0=self.lr0,
            l2=self.l2,
            grad_clip_norm=self.grad_clip_norm,
            batch_size=self.batch_size,
            coord_noise_sigma=self.coord_noise_sigma,
            axis_scale_range=tuple(self.axis_scale_range),
            feature_noise_sigma=self.feature_noise_sigma,
            atom_feature_dropout_p=self.atom_feature_dropout_p,
            use_class_weights=self.use_class_weights,
            seed=self.seed,
        )

    def fit(self, X, y):
        hierarchies = check_hierarchies(X)
        self.classes_, labels = check_labels(y, len(hierarchies))
        config = self._model_config(len(self.classes_))
        records = [
            make_record(str(i), h, int(label), config)
            for i, (h, label) in enumerate(zip(hierarchies, labels))
        ]
        valid_records = None
        if self.validation_fraction > 0.0:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(records))
            n_valid = max(1, int(round(self.validation_fraction * len(records))))
            if n_valid >= len(records):
                raise ValueError("validation_fraction leaves no training data")
            valid_idx = set(order[:n_valid].tolist())
            valid_records = [records[i] for i in sorted(valid_idx)]
            records = [records[i] for i in range(len(records)) if i not in valid_idx]

        log_fn = print_log if self.verbose else None
        result = train(
            config,
            self._train_config(),
            records,
            valid_records,
            log_fn=log_fn,
        )
        self.config_ = config
        self.params_ = result.params
        self.history_ = result.history
        self.best_accuracy_ = result.best_accuracy
        return self

    def _scores(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        hierarchies = check_hierarchies(X)
        out = []
        for start in range(0, len(hierarchies), self.batch_size):
            chunk = hierarchies[start : start + self.batch_size]
            records = [make_record(str(i), h, 0, self.config_) for i, h in enumerate(chunk)]
            batch = _records_batch(records, self.config_)
            scores = model_forward(self.params_, batch, ForwardContext(train=False))
            out.append(scores.values)
        return np.concatenate(out)

    def decision_function(self, X) -> np.ndarray:
        return self._scores(X)

    def predict_proba(self, X) -> np.ndarray:
        z = self._scores(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self._scores(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Per-protein global feature vectors from the fitted trunk."""
        check_is_fitted(self, "params_")
        hierarchies = check_hierarchies(X)
        out = []
        for start in range(0, len(hierarchies), self.batch_size):
            chunk = hierarchies[start : start + self.batch_size]
            records = [make_record(str(i), h, 0, self.config_) for i, h in enumerate(chunk)]
            batch = _records_batch(records, self.config_)
            out.append(embed_proteins(self.params_, batch))
        return np.concatenate(out)


def print_log(entry: dict):
    print(format_log_entry(entry))
