"""Displacement metrics for multi-modal predictions.

Marginal variants pick the best mode per agent; joint variants pick one
mode index for the whole scene. Miss rates use a 2 m final-displacement
threshold. With a single mode the joint and marginal variants coincide.
"""

from dataclasses import dataclass, fields

import numpy as np

MISS_THRESHOLD = 2.0


@dataclass
class MetricReport:
    minADE: float
    minFDE: float
    minMR: float
    minJADE: float
    minJFDE: float
    minJMR: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_metrics(traj, gt, mask, threshold=MISS_THRESHOLD):
    """Metrics for one scene; returns None when no agent is masked.

    traj: [A,K,T,2] predicted positions; gt: [A,T,2]; mask: length-A bools.
    """
    traj = np.asarray(traj, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if traj.shape[2] == 0 or not mask.any():
        return None
    traj = traj[mask]
    gt = gt[mask]

    dists = np.linalg.norm(traj - gt[:, None, :, :], axis=-1)  # [A,K,T]
    ade_per_mode = dists.mean(axis=2)                          # [A,K]
    fde_per_mode = dists[:, :, -1]                             # [A,K]

    min_ade = float(ade_per_mode.min(axis=1).mean())
    best_fde = fde_per_mode.min(axis=1)
    min_fde = float(best_fde.mean())
    min_mr = float((best_fde > threshold).mean())

    jade_per_mode = ade_per_mode.mean(axis=0)                  # [K]
    jfde_per_mode = fde_per_mode.mean(axis=0)                  # [K]
    k_joint = int(np.argmin(jfde_per_mode))
    min_jade = float(jade_per_mode.min())
    min_jfde = float(jfde_per_mode[k_joint])
    min_jmr = float((fde_per_mode[:, k_joint] > threshold).mean())

    return MetricReport(min_ade, min_fde, min_mr, min_jade, min_jfde, min_jmr)


def aggregate_reports(reports):
    """Mean of each metric over scenes; None when nothing was scored."""
    reports = [r for r in reports if r is not None]
    if not reports:
        return None
    return MetricReport(*[
        float(np.mean([getattr(r, f.name) for r in reports]))
        for f in fields(MetricReport)])
