"""Frozen-encoder export in the cross-runtime weight-file format."""

from __future__ import annotations

import numpy as np
import torch

from nfcpad import features

from .model import EMBED_DIM, INPUT_SPEC, DannModel, PressEncoder


def encoder_manifest(train_meta: dict | None = None) -> dict:
    layers = [
        {"type": "conv1d", "in": INPUT_SPEC["channels"], "out": 32,
         "kernel": 7, "stride": 1, "padding": 3,
         "weights": "conv1.w", "bias": "conv1.b"},
        {"type": "batchnorm1d", "features": 32, "eps": 1e-5,
         "gamma": "bn1.g", "beta": "bn1.b", "mean": "bn1.m", "var": "bn1.v"},
        {"type": "maxpool1d", "kernel": 2, "stride": 2},
        {"type": "conv1d", "in": 32, "out": 64, "kernel": 7, "stride": 1,
         "padding": 3, "weights": "conv2.w", "bias": "conv2.b"},
        {"type": "batchnorm1d", "features": 64, "eps": 1e-5,
         "gamma": "bn2.g", "beta": "bn2.b", "mean": "bn2.m", "var": "bn2.v"},
        {"type": "maxpool1d", "kernel": 2, "stride": 2},
        {"type": "lstm", "input": 64, "hidden": EMBED_DIM,
         "w_ih": "lstm.w_ih", "w_hh": "lstm.w_hh",
         "b_ih": "lstm.b_ih", "b_hh": "lstm.b_hh"},
        {"type": "global_avg_pool"},
        {"type": "dense", "in": EMBED_DIM, "out": EMBED_DIM,
         "weights": "proj.w", "bias": "proj.b"},
    ]
    manifest = {"format_version": 1, "input": dict(INPUT_SPEC),
                "layers": layers}
    if train_meta:
        manifest["training"] = train_meta
    return manifest


def encoder_tensors(encoder: PressEncoder) -> dict[str, np.ndarray]:
    def f(t: torch.Tensor) -> np.ndarray:
        return t.detach().cpu().numpy()

    return {
        "conv1.w": f(encoder.conv1.weight), "conv1.b": f(encoder.conv1.bias),
        "bn1.g": f(encoder.bn1.weight), "bn1.b": f(encoder.bn1.bias),
        "bn1.m": f(encoder.bn1.running_mean),
        "bn1.v": f(encoder.bn1.running_var),
        "conv2.w": f(encoder.conv2.weight), "conv2.b": f(encoder.conv2.bias),
        "bn2.g": f(encoder.bn2.weight), "bn2.b": f(encoder.bn2.bias),
        "bn2.m": f(encoder.bn2.running_mean),
        "bn2.v": f(encoder.bn2.running_var),
        "lstm.w_ih": f(encoder.lstm.weight_ih_l0),
        "lstm.w_hh": f(encoder.lstm.weight_hh_l0),
        "lstm.b_ih": f(encoder.lstm.bias_ih_l0),
        "lstm.b_hh": f(encoder.lstm.bias_hh_l0),
        "proj.w": f(encoder.proj.weight), "proj.b": f(encoder.proj.bias),
    }


def export_encoder(model: DannModel, base_path, train_meta: dict | None = None):
    """Write the weight file pair (<base>.json, <base>.bin)."""
    features.save_encoder_weights(base_path,
                                  encoder_manifest(train_meta),
                                  encoder_tensors(model.encoder))


def export_embeddings(model: DannModel, inputs: torch.Tensor,
                      card_ids, labels, csv_path):
    """Embedding dump (card_id, button_idx, 64 values) for calibration."""
    model.eval()
    with torch.no_grad():
        z = model.encoder(inputs).cpu().numpy()
    rows = [(card_ids[k], int(labels[k]), z[k]) for k in range(len(z))]
    features.write_embedding_csv(csv_path, rows)


def infer_embeddings(model: DannModel, inputs: torch.Tensor) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        return model.encoder(inputs).cpu().numpy()
