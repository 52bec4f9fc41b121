"""Mini-batch adversarial training loop and diagnostic checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .data import DomainSplit
from .model import DannModel, gradient_reversal


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32          # per domain; batches stay balanced
    learning_rate: float = 1e-3
    grl_weight_max: float = 1.0   # lambda after the ramp
    ramp_fraction: float = 0.2    # share of epochs spent ramping lambda
    entropy_weight: float = 0.1   # gamma_t
    seed: int = 0


@dataclass
class TrainResult:
    model: DannModel
    curves: dict = field(default_factory=dict)

    def source_accuracy(self, split: DomainSplit) -> float:
        return accuracy(self.model, split.inputs, split.labels)


def accuracy(model: DannModel, inputs: torch.Tensor,
             labels: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        preds = []
        for k in range(0, len(inputs), 256):
            p = model.class_posterior(inputs[k:k + 256])
            preds.append(p.argmax(dim=1))
        preds = torch.cat(preds)
    return float((preds == labels).float().mean())


def predict(model: DannModel, inputs: torch.Tensor):
    """Class posteriors and argmax labels for a batch of inputs."""
    model.eval()
    with torch.no_grad():
        posterior = model.class_posterior(inputs)
    return posterior, posterior.argmax(dim=1)


def train(source: DomainSplit, target: DomainSplit,
          config: TrainConfig | None = None,
          model: DannModel | None = None) -> TrainResult:
    """Optimize the joint objective over balanced source/target batches.

    The gradient-reversal weight ramps linearly from 0 to its maximum
    over the first ``ramp_fraction`` of the epochs. Setting
    ``grl_weight_max = 0`` and ``entropy_weight = 0`` reduces the loop
    to plain supervised training on the source domain.
    """
    cfg = config or TrainConfig()
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)
    if model is None:
        model = DannModel()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    n_src, n_tgt = len(source.inputs), len(target.inputs)
    steps = max(n_src, n_tgt) // cfg.batch_size
    curves = {"cls": [], "dom": [], "ent": [], "lambda": []}
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        ramp_epochs = max(1, int(cfg.ramp_fraction * cfg.epochs))
        lam = cfg.grl_weight_max * min(1.0, epoch / ramp_epochs)
        model.train()
        src_order = rng.permutation(n_src)
        tgt_order = rng.permutation(n_tgt)
        ep = {"cls": 0.0, "dom": 0.0, "ent": 0.0}
        for step in range(max(steps, 1)):
            sb = src_order[(step * cfg.batch_size) % n_src:][:cfg.batch_size]
            tb = tgt_order[(step * cfg.batch_size) % n_tgt:][:cfg.batch_size]
            if len(sb) < 2 or len(tb) < 2:
                continue
            xs, ys = source.inputs[sb], source.labels[sb]
            xt = target.inputs[tb]

            zs = model.encoder(xs)
            zt = model.encoder(xt)
            cls_logits = model.classifier(zs)
            tgt_logits = model.classifier(zt)
            l_cls = losses.classification_loss(cls_logits, ys)
            l_ent = losses.entropy_loss(tgt_logits)
            l_dom = losses.domain_loss(
                model.discriminator(gradient_reversal(zs, lam)),
                model.discriminator(gradient_reversal(zt, lam)))
            # one backward: the discriminator descends the domain loss,
            # the reversal layer hands the encoder its negated gradient
            total = l_cls + cfg.entropy_weight * l_ent + l_dom

            opt.zero_grad()
            total.backward()
            opt.step()
            ep["cls"] += float(l_cls)
            ep["dom"] += float(l_dom)
            ep["ent"] += float(l_ent)
        for key, val in ep.items():
            curves[key].append(val / max(steps, 1))
        curves["lambda"].append(lam)
        if not math.isfinite(curves["cls"][-1]):
            raise RuntimeError(
                f"training diverged at epoch {epoch}: "
                f"classification loss {curves['cls'][-1]}")
    return TrainResult(model=model, curves=curves)


def discriminator_probe(model: DannModel, source: DomainSplit,
                        target: DomainSplit) -> float:
    """Held-out domain-classification accuracy of the trained head.

    Values near 0.5 indicate domain-aligned embeddings.
    """
    model.eval()
    with torch.no_grad():
        zs = model.encoder(source.inputs)
        zt = model.encoder(target.inputs)
        p_src = torch.sigmoid(model.discriminator(zs))
        p_tgt = torch.sigmoid(model.discriminator(zt))
    correct = float((p_src < 0.5).float().sum() + (p_tgt >= 0.5).float().sum())
    return correct / (len(p_src) + len(p_tgt))


def grl_check(lam: float = 0.37, atol: float = 1e-4) -> dict:
    """Verify the reversal layer on a tiny model against finite differences.

    Returns the achieved deviations; raises AssertionError on failure.
    """
    torch.manual_seed(1)
    lin = torch.nn.Linear(3, 2)
    head = torch.nn.Linear(2, 1)
    x = torch.randn(5, 3)

    def dom_loss(weights_override=None, through_grl=True, weight=lam):
        if weights_override is not None:
            with torch.no_grad():
                lin.weight.copy_(weights_override)
        z = lin(x)
        if through_grl:
            z = gradient_reversal(z, weight)
        return torch.sigmoid(head(z)).mean()

    # autograd gradients with and without the reversal layer
    lin.weight.grad = None
    dom_loss(through_grl=True).backward()
    g_through = lin.weight.grad.clone()
    lin.weight.grad = None
    dom_loss(through_grl=False).backward()
    g_direct = lin.weight.grad.clone()
    scale_dev = float((g_through + lam * g_direct).abs().max())
    assert scale_dev < 1e-9, f"reversal scaling off by {scale_dev}"

    # finite-difference check of the direct gradient
    eps = 1e-4
    w0 = lin.weight.detach().clone()
    fd = torch.zeros_like(w0)
    for i in range(w0.shape[0]):
        for j in range(w0.shape[1]):
            wp, wm = w0.clone(), w0.clone()
            wp[i, j] += eps
            wm[i, j] -= eps
            with torch.no_grad():
                fp = dom_loss(wp, through_grl=False)
                fm = dom_loss(wm, through_grl=False)
            fd[i, j] = (fp - fm) / (2 * eps)
    with torch.no_grad():
        lin.weight.copy_(w0)
    fd_dev = float((fd - g_direct).abs().max()
                   / g_direct.abs().max().clamp(min=1e-12))
    assert fd_dev < atol, f"finite-difference deviation {fd_dev}"

    # zero weight must zero the reversed gradient
    lin.weight.grad = None
    dom_loss(through_grl=True, weight=0.0).backward()
    zero_dev = float(lin.weight.grad.abs().max())
    assert zero_dev < 1e-12

    # unit weight is an exact sign flip
    lin.weight.grad = None
    dom_loss(through_grl=True, weight=1.0).backward()
    flip_dev = float((lin.weight.grad + g_direct).abs().max())
    assert flip_dev < 1e-9
    return {"scale_dev": scale_dev, "fd_dev": fd_dev,
            "zero_dev": zero_dev, "flip_dev": flip_dev}
