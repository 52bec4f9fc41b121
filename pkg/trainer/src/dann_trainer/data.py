"""Dataset access: traces in, prepared tensors out.

Consumes the simulator's dataset manifest and IQ trace files through the
nfcpad package, segments each press with the standard acquisition
pipeline, and prepares encoder inputs per the recorded input spec.
Target labels are fetched through an evaluation-capability reader and
kept in a separate array that the training loop never touches; they
exist only for after-the-fact accuracy reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from nfcpad import harness

from .model import INPUT_SPEC, prepare_input


@dataclass
class DomainSplit:
    """Prepared tensors for one domain."""

    inputs: torch.Tensor          # (n, channels, time)
    labels: torch.Tensor | None   # class labels; None for unlabeled use
    card_ids: list


def _prepare_entries(reader, pipeline, entries):
    rows = []
    for entry in entries:
        seg = pipeline.segment(reader.load_trace(entry))
        rows.append(prepare_input(seg.samples))
    return torch.from_numpy(np.stack(rows))


def load_splits(manifest: harness.DatasetManifest,
                max_per_cell: int | None = None):
    """(labeled source, unlabeled target, held-out target labels).

    Source inputs come from source-train entries with labels; target
    inputs from target-eval entries without labels. The returned target
    labels are read through an audited evaluation reader and are for
    final reporting only.
    """
    pipeline = harness.PressPipeline(manifest.config.synth)
    src_reader = harness.DatasetReader(manifest)
    eval_reader = harness.DatasetReader(
        manifest, label_roles=frozenset({harness.ROLE_SOURCE,
                                         harness.ROLE_CALIBRATION,
                                         harness.ROLE_TARGET}))

    def cap(entries):
        if max_per_cell is None:
            return entries
        seen, out = {}, []
        for e in entries:
            key = (e.card_id, e.button_idx, e.orientation_idx)
            if seen.get(key, 0) < max_per_cell:
                seen[key] = seen.get(key, 0) + 1
                out.append(e)
        return out

    src_entries = cap(manifest.by_role(harness.ROLE_SOURCE))
    tgt_entries = cap(manifest.by_role(harness.ROLE_TARGET))

    source = DomainSplit(
        inputs=_prepare_entries(src_reader, pipeline, src_entries),
        labels=torch.tensor([src_reader.label(e) for e in src_entries]),
        card_ids=[e.card_id for e in src_entries])
    target = DomainSplit(
        inputs=_prepare_entries(src_reader, pipeline, tgt_entries),
        labels=None,
        card_ids=[e.card_id for e in tgt_entries])
    held_out = torch.tensor([eval_reader.label(e) for e in tgt_entries])
    return source, target, held_out
