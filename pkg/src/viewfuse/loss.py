"""Instance-weighted (area-sensitive) cross-entropy kernel.

Small instances get boosted by the weight ``(median_count / n_i) ** k`` so a
segmentation model cannot satisfy the loss by only getting large surfaces
right. With ``k = 0`` every weight is 1 and the loss reduces to plain mean
cross entropy over vertices.

This module is a pure, verifiable computation over given per-vertex class
probabilities; it does not train anything. Returned values follow the usual
negative log-likelihood sign convention (lower is better, 0 is perfect).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .scene import LabeledMesh, instance_stats


@dataclass(frozen=True)
class LossConfig:
    k: float = 1.0           # modulating factor; 0 disables instance weighting
    lambda_2d: float = 0.3   # weight of the 2-D loss term in the combined loss
    epsilon: float = 1e-12   # probability clamp against log(0)

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.lambda_2d < 0:
            raise ConfigError(f"lambda_2d must be >= 0, got {self.lambda_2d}")
        if not 0 < self.epsilon < 1e-3:
            raise ConfigError(f"epsilon must be in (0, 1e-3), got {self.epsilon}")


@dataclass
class PredictionSet:
    """Per-vertex class probabilities and one-hot ground truth over the two
    classes (non-clutter, clutter), bound to a labeled mesh."""

    probabilities: np.ndarray  # N x 2, rows sum to 1
    labels_onehot: np.ndarray  # N x 2
    mesh: LabeledMesh

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.labels_onehot = np.asarray(self.labels_onehot, dtype=np.float64)
        n = self.mesh.n_vertices
        if self.probabilities.shape != (n, 2) or self.labels_onehot.shape != (n, 2):
            raise DimensionMismatchError(
                f"predictions must be {n}x2 to match the mesh, got "
                f"{self.probabilities.shape} / {self.labels_onehot.shape}"
            )
        if np.any(self.probabilities < 0) or np.any(self.probabilities > 1):
            raise ValueError("probabilities outside [0, 1]")
        if np.any(np.abs(self.probabilities.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("per-vertex probabilities must sum to 1")
        onehot_ok = np.all(np.isin(self.labels_onehot, (0.0, 1.0))) and np.all(
            self.labels_onehot.sum(axis=1) == 1.0
        )
        if not onehot_ok:
            raise ValueError("labels must be one-hot")

    @classmethod
    def from_mesh_labels(cls, mesh: LabeledMesh, probabilities) -> "PredictionSet":
        """Ground truth taken from the mesh's own clutter labels."""
        onehot = np.zeros((mesh.n_vertices, 2))
        onehot[np.arange(mesh.n_vertices), mesh.clutter.astype(int)] = 1.0
        return cls(probabilities=probabilities, labels_onehot=onehot, mesh=mesh)


def instance_weight(n_i: int, median_count: float, k: float) -> float:
    """Weight ``(median_count / n_i) ** k``; 1 for k = 0 regardless of size."""
    if n_i <= 0:
        raise ValueError(f"instance vertex count must be positive, got {n_i}")
    if median_count < 1:
        raise ValueError(f"median count must be >= 1, got {median_count}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    return float((median_count / n_i) ** k)


@dataclass
class InstanceContribution:
    instance_id: int
    clutter: bool
    vertex_count: int
    weight: float
    raw_nll: float       # unweighted sum of -log p over the instance's vertices
    weighted: float      # weight * raw_nll

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "clutter": self.clutter,
            "vertex_count": self.vertex_count,
            "weight": self.weight,
            "raw_nll": self.raw_nll,
            "weighted": self.weighted,
        }


def area_sensitive_ce(preds: PredictionSet, cfg: LossConfig):
    """Instance-weighted mean cross entropy.

    Returns ``(loss, contributions)``: the scalar
    ``(1 / n_vertices) * sum_i weight_i * sum_{j in instance i} -log p_true(j)``
    plus the
    per-instance breakdown.
    """
    mesh = preds.mesh
    stats, median_count = instance_stats(mesh)
    p_true = np.sum(preds.probabilities * preds.labels_onehot, axis=1)
    nll = -np.log(np.clip(p_true, cfg.epsilon, 1.0))

    contributions = []
    total = 0.0
    for stat in stats:
        sel = mesh.instance_id == stat.instance_id
        weight = instance_weight(stat.vertex_count, median_count, cfg.k)
        raw = float(np.sum(nll[sel]))
        contributions.append(InstanceContribution(
            instance_id=stat.instance_id, clutter=stat.clutter,
            vertex_count=stat.vertex_count, weight=weight,
            raw_nll=raw, weighted=weight * raw,
        ))
        total += weight * raw
    return total / mesh.n_vertices, contributions


def combined_loss(loss_3d: float, loss_2d: float, cfg: LossConfig) -> float:
    """Weighted sum of the 3-D and 2-D area-sensitive losses."""
    if not (np.isfinite(loss_3d) and np.isfinite(loss_2d)):
        raise ValueError(f"losses must be finite, got {loss_3d} and {loss_2d}")
    return loss_3d + cfg.lambda_2d * loss_2d
