"""Autoencoder compressing DLV grids to a low-dimensional latent code.

DLV surfaces are strongly correlated across nodes, so the grid is assumed
to live near a low-dimensional manifold. The encoder works on log-DLVs
(positive, roughly log-normal); the decoder emits log-DLVs and
exponentiates, so every decoded grid is strictly positive and therefore
maps to an arbitrage-free price grid.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConvergenceError, DataError
from .nets import Adam, EarlyStopper, Mlp

__all__ = ["DlvAutoencoder"]


class DlvAutoencoder(TransformerMixin, BaseEstimator):
    """Compress flattened DLV grids (N, m*n) to codes (N, latent_dim).

    ``transform`` encodes, ``inverse_transform`` decodes back to strictly
    positive DLV values. ``hidden=()`` gives plain affine encoder/decoder,
    which is handy as a capacity sanity check.
    """

    def __init__(
        self,
        latent_dim: int = 3,
        hidden: tuple = (64, 64, 64),
        learning_rate: float = 1e-3,
        batch_size: int = 64,
        max_epochs: int = 1000,
        min_epochs: int = 100,
        patience: int = 50,
        val_fraction: float = 0.2,
        clip_norm: float = 10.0,
        random_state: int = 0,
    ):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.min_epochs = min_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("this DlvAutoencoder is not fitted yet")

    @staticmethod
    def _validate(X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be 2-d with one flattened DLV grid per row")
        if not np.all(np.isfinite(X)) or np.any(X <= 0):
            raise DataError("DLV entries must be finite and strictly positive")
        return X

    def fit(self, X, y=None):
        """Minimize mean squared log-DLV reconstruction error.

        Chronological train/validation split with early stopping; the
        best-validation parameters are restored before returning.
        """
        X = self._validate(X)
        n, n_features = X.shape
        if self.latent_dim > n_features:
            raise DataError("latent_dim cannot exceed the grid size")
        n_val = int(round(self.val_fraction * n))
        n_train = n - n_val
        if n_train < 1 or n_val < 1:
            raise DataError(
                f"chronological split produced an empty part (train={n_train}, val={n_val})"
            )
        z = np.log(X)
        # standardize inputs for conditioning; folded into the fitted state
        self.center_ = z[:n_train].mean(axis=0)
        scale = z[:n_train].std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)

        rng = np.random.default_rng(self.random_state)
        self.encoder_ = Mlp([n_features, *self.hidden, self.latent_dim], rng=rng)
        self.decoder_ = Mlp([self.latent_dim, *self.hidden, n_features], rng=rng)
        self.n_features_in_ = n_features

        zs = (z - self.center_) / self.scale_
        z_tr, z_va = zs[:n_train], zs[n_train:]

        params = self.encoder_.parameters() + self.decoder_.parameters()
        opt = Adam(params, learning_rate=self.learning_rate, clip_norm=self.clip_norm)
        stopper = EarlyStopper(patience=self.patience, min_epochs=self.min_epochs)
        train_losses: list[float] = []
        val_losses: list[float] = []

        bs = min(self.batch_size, n_train)
        for epoch in range(self.max_epochs):
            order = rng.permutation(n_train)
            epoch_loss = 0.0
            for start in range(0, n_train, bs):
                batch = z_tr[order[start : start + bs]]
                loss, grads = self._loss_and_grads(batch)
                opt.step(grads)
                epoch_loss += loss * batch.shape[0]
            epoch_loss /= n_train
            if not np.isfinite(epoch_loss):
                raise ConvergenceError(f"autoencoder loss diverged at epoch {epoch}")
            val_loss = self._mse(z_va)
            train_losses.append(epoch_loss)
            val_losses.append(val_loss)
            if stopper.update(epoch, val_loss, lambda: [p.copy() for p in params]):
                break

        if stopper.best_state is not None:
            for p, best in zip(params, stopper.best_state):
                p[...] = best
        self.train_losses_ = train_losses
        self.val_losses_ = val_losses
        self.best_epoch_ = stopper.best_epoch
        self.best_val_loss_ = stopper.best_loss
        return self

    def _loss_and_grads(self, z_batch):
        enc_cache: list = []
        dec_cache: list = []
        code = self.encoder_.forward(z_batch, cache=enc_cache)
        recon = self.decoder_.forward(code, cache=dec_cache)
        diff = recon - z_batch
        loss = float(np.mean(diff**2))
        gout = 2.0 * diff / diff.size
        dec_grads, gcode = self.decoder_.backward(dec_cache, gout)
        enc_grads, _ = self.encoder_.backward(enc_cache, gcode)
        return loss, enc_grads + dec_grads

    def _mse(self, z_batch) -> float:
        recon = self.decoder_.forward(self.encoder_.forward(z_batch))
        return float(np.mean((recon - z_batch) ** 2))

    def transform(self, X) -> np.ndarray:
        """Encode flattened DLV grids to latent codes."""
        self._check_fitted()
        X = self._validate(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        zs = (np.log(X) - self.center_) / self.scale_
        return self.encoder_.forward(zs)

    def inverse_transform(self, codes) -> np.ndarray:
        """Decode latent codes to strictly positive DLV values."""
        self._check_fitted()
        codes = np.asarray(codes, dtype=float)
        if codes.ndim == 1:
            codes = codes[None, :]
        if codes.shape[1] != self.latent_dim:
            raise DataError(f"codes must have {self.latent_dim} columns")
        if not np.all(np.isfinite(codes)):
            raise DataError("codes must be finite")
        zs = self.decoder_.forward(codes)
        return np.exp(zs * self.scale_ + self.center_)

    def reconstruction_rel_error(self, X) -> float:
        """Max relative DLV reconstruction error over a dataset."""
        X = self._validate(X)
        recon = self.inverse_transform(self.transform(X))
        return float(np.max(np.abs(recon - X) / X))

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "center": self.center_.tolist(),
            "scale": self.scale_.tolist(),
            "encoder": self.encoder_.to_dict(),
            "decoder": self.decoder_.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DlvAutoencoder":
        codec = cls(latent_dim=int(data["latent_dim"]), hidden=tuple(data["hidden"]))
        codec.center_ = np.asarray(data["center"], dtype=float)
        codec.scale_ = np.asarray(data["scale"], dtype=float)
        codec.encoder_ = Mlp.from_dict(data["encoder"])
        codec.decoder_ = Mlp.from_dict(data["decoder"])
        codec.n_features_in_ = codec.center_.size
        return codec
