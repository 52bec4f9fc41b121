"""Loss terms of the adversarial objective.

With class posteriors p(y|x) and the domain posterior d = sigmoid(logit)
estimating P(target | embedding):

* classification: mean over the labeled source batch of -log p(y_r|x_r);
* domain: mean over source of -log(1 - d) plus mean over target of
  -log d (the discriminator separates the domains; the reversal layer
  feeds the encoder the opposite gradient);
* entropy: mean over target of -sum_c p_c log p_c, pulling unlabeled
  samples toward confident class assignments.

Joint objective: encoder/classifier descend cls + gamma_t * ent -
lambda * dom while the discriminator descends dom; a single backward
through the reversal layer realizes both updates.
"""

from __future__ import annotations

import torch

_EPS = 1e-12


def classification_loss(class_logits: torch.Tensor,
                        labels: torch.Tensor) -> torch.Tensor:
    logp = torch.log_softmax(class_logits, dim=1)
    return -logp[torch.arange(len(labels)), labels].mean()


def domain_loss(source_logits: torch.Tensor,
                target_logits: torch.Tensor) -> torch.Tensor:
    p_src = torch.sigmoid(source_logits)
    p_tgt = torch.sigmoid(target_logits)
    return (-torch.log1p(-p_src.clamp(max=1 - _EPS)).mean()
            - torch.log(p_tgt.clamp(min=_EPS)).mean())


def entropy_loss(class_logits: torch.Tensor) -> torch.Tensor:
    p = torch.softmax(class_logits, dim=1)
    logp = torch.log_softmax(class_logits, dim=1)
    return -(p * logp).sum(dim=1).mean()
