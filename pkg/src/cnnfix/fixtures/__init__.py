"""Deterministic synthetic networks, images and brute-force oracles."""
from .blobs import BlobSample, blob_images, make_blob_detector, make_blob_image
from .nets import (make_dense_toy, make_efficiency_net, make_exhaustive_toy, make_inception_toy,
                   make_random_cnn, make_residual_toy, make_toy_lstm, random_image)
from .oracles import OracleTooLarge, exhaustive_path_oracle, lstm_path_oracle
from .rng import SplitMix64

__all__ = [
    "BlobSample", "OracleTooLarge", "SplitMix64", "blob_images", "exhaustive_path_oracle",
    "lstm_path_oracle", "make_blob_detector", "make_blob_image", "make_dense_toy",
    "make_efficiency_net", "make_exhaustive_toy", "make_inception_toy", "make_random_cnn",
    "make_residual_toy", "make_toy_lstm", "random_image",
]
