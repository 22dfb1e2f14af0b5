"""Task, modality, ucorr, CMD similarity, HSIC independence and reconstruction
losses, and their weighted total."""

import math
from dataclasses import dataclass, field, fields
from itertools import combinations
from typing import Dict, Mapping, Sequence, Tuple, Union

import torch

from ..data.features import MODALITIES, Modality
from ..utils.exceptions import ConfigError, ShapeError, TrainingAbortedError, ValidationError
from ..utils.logging import warn_once
from ..utils.validation import check_simplex, require_same_shape

UCORR_MODES = ("independence", "paper_literal")
HSIC_KERNELS = ("rbf", "paper_literal")
CMD_BOUNDS_MODES = ("fixed", "empirical")
COMPONENTS = ("task", "modality", "ucorr", "sim", "h_inter", "h_intra", "recon")
COMPONENT_WEIGHTS = {
    "task": "w_task",
    "modality": "w_modality",
    "ucorr": "w_ucorr",
    "sim": "w_sim",
    "h_inter": "w_h",
    "h_intra": "w_h",
    "recon": "w_recon",
}

SampleSets = Union[Sequence[torch.Tensor], Mapping[Modality, torch.Tensor]]


@dataclass
class LossWeights:
    """Trade-off weights of the joint objective."""

    w_task: float = 1.0
    w_sim: float = 0.1
    w_ucorr: float = 0.8
    w_recon: float = 0.2
    w_modality: float = 0.05
    w_h: float = 1.0

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {f.name} must be finite and >= 0, got {value}")
        if self.w_task <= 0:
            raise ConfigError("w_task must be positive")

    def for_component(self, name: str) -> float:
        return float(getattr(self, COMPONENT_WEIGHTS[name]))


@dataclass
class LossSettings:
    """Weights plus the variant switches of each regularizer."""

    weights: LossWeights = field(default_factory=LossWeights)
    ucorr_mode: str = "independence"
    hsic_kernel: str = "rbf"
    hsic_sigma: float = 1.0
    cmd_order: int = 5
    cmd_bounds_mode: str = "fixed"
    cmd_bounds: Tuple[float, float] = (-1.0, 1.0)

    def validate(self) -> None:
        self.weights.validate()
        if self.ucorr_mode not in UCORR_MODES:
            raise ConfigError(f"loss.ucorr_mode must be one of {UCORR_MODES}")
        if self.hsic_kernel not in HSIC_KERNELS:
            raise ConfigError(f"loss.hsic_kernel must be one of {HSIC_KERNELS}")
        if not self.hsic_sigma > 0:
            raise ConfigError(f"loss.hsic_sigma must be positive, got {self.hsic_sigma}")
        if self.cmd_order < 1:
            raise ConfigError(f"loss.cmd_order must be >= 1, got {self.cmd_order}")
        if self.cmd_bounds_mode not in CMD_BOUNDS_MODES:
            raise ConfigError(f"loss.cmd_bounds_mode must be one of {CMD_BOUNDS_MODES}")
        low, high = self.cmd_bounds
        if not high > low:
            raise ConfigError(f"loss.cmd_bounds must satisfy b > a, got {self.cmd_bounds}")

    @property
    def bounds(self) -> Union[Tuple[float, float], None]:
        """Fixed CMD bounds, or None for per-batch empirical bounds."""
        return tuple(self.cmd_bounds) if self.cmd_bounds_mode == "fixed" else None  # type: ignore[return-value]


@dataclass
class LossReport:
    """Every loss component of one step plus the weighted total."""

    task: torch.Tensor
    modality: torch.Tensor
    ucorr: torch.Tensor
    sim: torch.Tensor
    h_inter: torch.Tensor
    h_intra: torch.Tensor
    recon: torch.Tensor
    total: torch.Tensor
    degenerate: bool = False

    def components(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in COMPONENTS}

    def as_floats(self) -> Dict[str, float]:
        values = {name: float(value.detach()) for name, value in self.components().items()}
        values["total"] = float(self.total.detach())
        return values


def _safe_log(probs: torch.Tensor) -> torch.Tensor:
    return torch.log(probs.clamp_min(torch.finfo(probs.dtype).tiny))


def _as_list(sets: SampleSets) -> Sequence[torch.Tensor]:
    if isinstance(sets, Mapping):
        return [sets[m] for m in MODALITIES]
    return list(sets)


def task_loss(y_hat: torch.Tensor, y: torch.Tensor, task: str) -> torch.Tensor:
    """MSE for regression; mean negative log-likelihood for class probabilities.

    Raises:
        ValidationError: Off-simplex probabilities or empty batch
    """
    if y.shape[0] < 1:
        raise ValidationError("task_loss needs at least one sample")
    if task == "regression":
        y_hat = y_hat.reshape(y.shape[0], -1)
        target = y.reshape(y.shape[0], -1).to(y_hat.dtype)
        require_same_shape(y_hat, target, "task_loss")
        return (target - y_hat).pow(2).sum(dim=1).mean()
    check_simplex(y_hat, "class probabilities")
    picked = y_hat.gather(1, y.long().reshape(-1, 1)).squeeze(1)
    return -_safe_log(picked).mean()


def modality_loss(discriminator_probs: torch.Tensor, modality: Modality) -> torch.Tensor:
    """Cross-entropy of the discriminator output against the true modality."""
    check_simplex(discriminator_probs, "discriminator probabilities")
    if discriminator_probs.shape[1] != len(MODALITIES):
        raise ShapeError(f"discriminator must output 3 classes, got {discriminator_probs.shape[1]}")
    return -_safe_log(discriminator_probs[:, int(modality)]).mean()


def pearson(a: torch.Tensor, b: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    """Pearson correlation of two vectors; (0, True) when either is constant."""
    a = a.reshape(-1)
    b = b.reshape(-1).to(a.dtype)
    da = a - a.mean()
    db = b - b.mean()
    var_a = da.pow(2).sum()
    var_b = db.pow(2).sum()
    eps = torch.finfo(a.dtype).eps
    if float(var_a.detach()) <= eps or float(var_b.detach()) <= eps:
        return a.new_zeros(()), True
    return (da * db).sum() / torch.sqrt(var_a * var_b), False


def ucorr_loss(
    y_tilde: torch.Tensor, y: torch.Tensor, task: str, mode: str = "independence"
) -> Tuple[torch.Tensor, bool]:
    """Penalty that pushes predictions made from u* away from the labels.

    Returns:
        (loss, degenerate) where degenerate flags a zero-variance batch
    """
    if mode not in UCORR_MODES:
        raise ValidationError(f"Unknown ucorr mode {mode!r}")
    if task == "regression":
        if y.shape[0] < 2:
            raise ValidationError("ucorr_loss (regression) needs at least two samples")
        corr, degenerate = pearson(y_tilde, y)
        if mode == "paper_literal":
            return corr, degenerate
        return corr.pow(2), degenerate

    check_simplex(y_tilde, "u* class probabilities")
    if mode == "paper_literal":
        picked = y_tilde.gather(1, y.long().reshape(-1, 1)).squeeze(1)
        return _safe_log(picked).mean(), False
    num_classes = y_tilde.shape[1]
    kl = (y_tilde * _safe_log(y_tilde)).sum(dim=1) + math.log(num_classes)
    return kl.mean(), False


def _moment_distance(diff: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(diff)


def cmd(
    Z: torch.Tensor,
    W: torch.Tensor,
    K: int = 5,
    bounds: Union[Tuple[float, float], None] = (-1.0, 1.0),
) -> torch.Tensor:
    """Central moment discrepancy between two sample sets (rows are samples).

    bounds=None uses the empirical min/max of both sets. With fixed bounds,
    samples outside them are clipped and the first clip in a process is
    reported with its coordinate count.

    Raises:
        ValidationError: Empty sets, K < 1 or b <= a
    """
    if Z.dim() == 1:
        Z = Z.unsqueeze(1)
    if W.dim() == 1:
        W = W.unsqueeze(1)
    if Z.shape[0] < 1 or W.shape[0] < 1:
        raise ValidationError("cmd needs nonempty sample sets")
    if Z.shape[1] != W.shape[1]:
        raise ShapeError(f"cmd feature widths differ: {Z.shape[1]} != {W.shape[1]}")
    if K < 1:
        raise ValidationError(f"cmd order K must be >= 1, got {K}")

    if bounds is None:
        with torch.no_grad():
            low = float(torch.minimum(Z.min(), W.min()))
            high = float(torch.maximum(Z.max(), W.max()))
        if high <= low:
            return Z.new_zeros(())
    else:
        low, high = float(bounds[0]), float(bounds[1])
        if not high > low:
            raise ValidationError(f"cmd bounds must satisfy b > a, got {bounds}")
        with torch.no_grad():
            clamped = int(((Z < low) | (Z > high)).sum() + ((W < low) | (W > high)).sum())
        if clamped:
            # clipped coordinates carry no gradient; later clamps stay silent
            warn_once(
                f"cmd clamped {clamped} of {Z.numel() + W.numel()} coordinates to [{low}, {high}]",
                key="cmd-clamp",
            )
            Z = Z.clamp(low, high)
            W = W.clamp(low, high)

    span = abs(high - low)
    mean_z = Z.mean(dim=0)
    mean_w = W.mean(dim=0)
    total = _moment_distance(mean_z - mean_w) / span
    centered_z = Z - mean_z
    centered_w = W - mean_w
    for k in range(2, K + 1):
        moment_z = centered_z.pow(k).mean(dim=0)
        moment_w = centered_w.pow(k).mean(dim=0)
        total = total + _moment_distance(moment_z - moment_w) / span ** k
    return total


def sim_loss(
    r_star: SampleSets, K: int = 5, bounds: Union[Tuple[float, float], None] = (-1.0, 1.0)
) -> torch.Tensor:
    """Mean CMD over the three modality pairs of r*."""
    sets = _as_list(r_star)
    pairs = list(combinations(range(len(sets)), 2))
    return sum(cmd(sets[i], sets[j], K, bounds) for i, j in pairs) / len(pairs)  # type: ignore[return-value]


def kernel_matrix(Z: torch.Tensor, sigma: float, kernel: str) -> torch.Tensor:
    """B × B kernel matrix of the rows of Z."""
    if Z.dim() == 1:
        Z = Z.unsqueeze(1)
    scale = 2 * sigma ** 2
    if kernel == "rbf":
        sq_dist = (Z.unsqueeze(1) - Z.unsqueeze(0)).pow(2).sum(dim=-1)
        return torch.exp(-sq_dist / scale)
    if kernel == "paper_literal":
        # ‖z_i z_jᵀ‖_F of an outer product is ‖z_i‖·‖z_j‖
        norms = torch.linalg.vector_norm(Z, dim=1)
        return torch.exp(-(norms.unsqueeze(1) * norms.unsqueeze(0)) / scale)
    raise ValidationError(f"Unknown HSIC kernel {kernel!r}")


def hsic_from_kernels(K_z: torch.Tensor, K_w: torch.Tensor) -> torch.Tensor:
    """Tr(K_z J K_w J) / (B − 1)² with the centering matrix J = I − 11ᵀ/B."""
    B = K_z.shape[0]
    J = torch.eye(B, dtype=K_z.dtype, device=K_z.device) - torch.full(
        (B, B), 1.0 / B, dtype=K_z.dtype, device=K_z.device
    )
    return torch.trace(K_z @ J @ K_w @ J) / (B - 1) ** 2


def hsic(Z: torch.Tensor, W: torch.Tensor, sigma: float = 1.0, kernel: str = "rbf") -> torch.Tensor:
    """Biased HSIC estimate between paired sample sets.

    Raises:
        ShapeError: Different row counts
        ValidationError: B < 2 or sigma <= 0
    """
    if Z.shape[0] != W.shape[0]:
        raise ShapeError(f"hsic row counts differ: {Z.shape[0]} != {W.shape[0]}")
    if Z.shape[0] < 2:
        raise ValidationError("hsic needs at least two samples")
    if not sigma > 0:
        raise ValidationError(f"hsic sigma must be positive, got {sigma}")
    return hsic_from_kernels(kernel_matrix(Z, sigma, kernel), kernel_matrix(W, sigma, kernel))


def inter_independence_loss(
    r_cap_u: SampleSets, sigma: float = 1.0, kernel: str = "rbf"
) -> torch.Tensor:
    """Mean HSIC over the three modality pairs of r∩u."""
    sets = _as_list(r_cap_u)
    pairs = list(combinations(range(len(sets)), 2))
    return sum(hsic(sets[i], sets[j], sigma, kernel) for i, j in pairs) / len(pairs)  # type: ignore[return-value]


def intra_exclusive_loss(
    r_star: SampleSets, u_star: SampleSets, sigma: float = 1.0, kernel: str = "rbf"
) -> torch.Tensor:
    """HSIC between r* and u* of each modality, averaged over modalities."""
    r_sets = _as_list(r_star)
    u_sets = _as_list(u_star)
    if len(r_sets) != len(u_sets):
        raise ShapeError("intra_exclusive_loss needs one r* and one u* set per modality")
    return sum(hsic(r, u, sigma, kernel) for r, u in zip(r_sets, u_sets)) / len(r_sets)  # type: ignore[return-value]


def recon_loss(x_hat_prime: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared Euclidean reconstruction error over the batch."""
    require_same_shape(x_hat_prime, x_hat, "recon_loss")
    if x_hat.shape[0] < 1:
        raise ValidationError("recon_loss needs at least one sample")
    return (x_hat_prime - x_hat).pow(2).reshape(x_hat.shape[0], -1).sum(dim=1).mean()


def total_loss(
    components: Mapping[str, torch.Tensor], weights: LossWeights, degenerate: bool = False
) -> LossReport:
    """Weighted sum of the seven components.

    Raises:
        TrainingAbortedError: If any component is NaN/Inf, naming it
    """
    for name in COMPONENTS:
        value = components[name]
        if not bool(torch.isfinite(value.detach()).all()):
            raise TrainingAbortedError(f"loss component '{name}' is not finite ({float(value)})")
    total = (
        weights.w_task * components["task"]
        + weights.w_modality * components["modality"]
        + weights.w_ucorr * components["ucorr"]
        + weights.w_sim * components["sim"]
        + weights.w_h * (components["h_inter"] + components["h_intra"])
        + weights.w_recon * components["recon"]
    )
    report = LossReport(
        **{name: components[name] for name in COMPONENTS}, total=total, degenerate=degenerate
    )
    check_decomposition(report, weights)
    return report


def check_decomposition(report: LossReport, weights: LossWeights, rel_tol: float = 1e-6) -> None:
    """Check report.total against a float64 dot product of the components with
    their weights from COMPONENT_WEIGHTS.

    Raises:
        TrainingAbortedError: If the two disagree beyond rel_tol
    """
    components = report.components()
    values = torch.stack([components[name].detach().to(torch.float64).reshape(()) for name in COMPONENTS])
    coefficients = torch.tensor([weights.for_component(name) for name in COMPONENTS], dtype=torch.float64)
    expected = float(values @ coefficients)
    total = float(report.total.detach())
    scale = max(float((values * coefficients).abs().sum()), abs(total), 1e-12)
    # float32 accumulation differs from float64 replay by a few ulps
    tolerance = max(rel_tol, 8 * float(torch.finfo(report.total.dtype).eps))
    if abs(total - expected) / scale > tolerance:
        raise TrainingAbortedError(f"loss decomposition violated: total={total} expected={expected}")
