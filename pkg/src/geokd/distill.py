"""Distillation losses: kernel alignment, inverse-kernel reconstruction, soft labels.

The alignment loss is ||(K_teacher_sub - K_student) .* W||_F^2 where W weights
connected pairs 1 and everything else (including self-pairs) delta. Teacher
inputs are detached here so no gradient ever reaches the frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .graphs import Graph
from .models import GnnModel, init_xavier
from .nhk import KernelSpec, RandomProjections, kernel_matrix
from .tensor import Tensor


@dataclass
class DistillConfig:
    """Loss weighting and schedule for student training."""

    alpha: float = 1.0        # kernel-alignment weight
    delta: float = 0.0        # off-edge pair weight in W
    layer_span: int = 1       # k: layers bridged by one kernel
    alpha_kd: float = 0.0     # soft-label loss weight
    tau_kd: float = 1.0       # soft-label temperature
    batch_size: int | None = None  # nodes per distillation mini-batch

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.delta < 0:
            raise ValidationError("delta must be >= 0")
        if self.layer_span < 1:
            raise ValidationError("layer_span must be >= 1")
        if not 0.0 <= self.alpha_kd < 1.0:
            raise ValidationError("alpha_kd must lie in [0, 1)")
        if self.tau_kd <= 0:
            raise ValidationError("tau_kd must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


class InverseNhkMapper:
    """One-layer tanh map g: R^d -> R^s whose Gram is the learned inverse kernel."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.weight = T.parameter(np.zeros((self.in_dim, self.out_dim)))

    def init(self, seed: int, stream: int = 203):
        init_xavier(_MapperShim(self.weight), seed, stream)

    def apply(self, h: Tensor) -> Tensor:
        if h.shape[1] != self.in_dim:
            raise DimensionError(f"mapper expects dim {self.in_dim}, got {h.shape[1]}")
        return T.tanh(T.matmul(h, self.weight))

    def parameters(self):
        return [self.weight]


class _MapperShim:
    """Adapts a single weight tensor to init_xavier's model interface."""

    def __init__(self, weight):
        self.weights = [weight]


def weight_matrix(g: Graph, delta: float, node_subset) -> Tensor:
    """W over the subset: 1 on student edges, delta elsewhere (self-pairs too)."""
    subset = np.asarray(node_subset, dtype=np.int64)
    if len(subset) and (subset.min() < 0 or subset.max() >= g.num_nodes):
        raise ValidationError("node subset id out of range")
    adj = g.adjacency_dense()[np.ix_(subset, subset)]
    return T.constant(delta + (1.0 - delta) * adj)


def distill_loss(k_teacher_sub: Tensor, k_student: Tensor, w: Tensor) -> Tensor:
    """Weighted Frobenius alignment; gradient flows into the student kernel only."""
    if k_teacher_sub.shape != k_student.shape:
        raise DimensionError(
            f"kernel shapes differ: {k_teacher_sub.shape} vs {k_student.shape}"
        )
    return T.frobenius_sq(k_student, k_teacher_sub.detach(), w)


def _resolve_projection_dims(spec: KernelSpec, dim_teacher: int, dim_student: int):
    """Common (m, s) with per-model input dims; s defaults to twice the student dim."""
    s = spec.s if spec.s is not None else 2 * dim_student
    return s


class ProjectionCache:
    """Per-feature-dim projection sets sharing one seed, built on demand."""

    def __init__(self, spec: KernelSpec):
        self.spec = spec
        self._cache: dict[tuple[int, int], RandomProjections] = {}

    def get(self, dim: int, s: int) -> RandomProjections:
        key = (dim, s)
        if key not in self._cache:
            self._cache[key] = RandomProjections(self.spec.seed, self.spec.m, s, dim)
        return self._cache[key]


def teacher_layer_kernels(traces_teacher, traces_student_dims, spec: KernelSpec,
                          projections: "ProjectionCache | None" = None):
    """Kernel matrices of the frozen teacher, one per loss layer, detached."""
    if projections is None and spec.kind == "randomized":
        projections = ProjectionCache(spec)
    kernels = []
    for l in range(len(traces_teacher) - 1):
        h_t = traces_teacher[l] if isinstance(traces_teacher[l], Tensor) \
            else T.constant(traces_teacher[l])
        if spec.kind == "randomized":
            s = _resolve_projection_dims(spec, h_t.shape[1], traces_student_dims[l])
            kernels.append(kernel_matrix(spec, h_t, projections.get(h_t.shape[1], s)).detach())
        else:
            kernels.append(kernel_matrix(spec, h_t).detach())
    return kernels


def layer_avg_distill(traces_teacher, traces_student, spec: KernelSpec,
                      cfg: DistillConfig, w: Tensor,
                      projections: ProjectionCache | None = None,
                      teacher_kernels=None, static_term_cache: dict | None = None) -> Tensor:
    """Mean per-layer kernel alignment scaled by alpha.

    The kernel bridging layer l-1 to l is evaluated on the source features,
    so the L loss terms read trace entries 0 .. L-1. Teacher entries must
    already be restricted to the student's nodes (and batch, if sampling).
    ``teacher_kernels`` short-circuits the teacher side when the trace is
    constant across epochs; ``static_term_cache`` does the same for loss
    terms on gradient-free student entries (the shared input features).
    """
    if len(traces_teacher) != len(traces_student):
        raise DimensionError(
            f"trace length mismatch: {len(traces_teacher)} vs {len(traces_student)}"
        )
    num_layers = len(traces_student) - 1
    if num_layers < 1:
        raise ValidationError("traces must cover at least one layer")
    if projections is None and spec.kind == "randomized":
        projections = ProjectionCache(spec)
    if teacher_kernels is None:
        teacher_kernels = teacher_layer_kernels(
            traces_teacher, [h.shape[1] for h in traces_student], spec, projections
        )
    total = None
    for l in range(num_layers):
        h_s = traces_student[l]
        if static_term_cache is not None and not h_s.requires_grad:
            if l not in static_term_cache:
                k_s = kernel_matrix(spec, h_s, _layer_proj(spec, projections, traces_teacher, h_s, l))
                static_term_cache[l] = distill_loss(teacher_kernels[l], k_s, w).item()
            term = T.constant([[static_term_cache[l]]])
        else:
            k_s = kernel_matrix(spec, h_s, _layer_proj(spec, projections, traces_teacher, h_s, l))
            term = distill_loss(teacher_kernels[l], k_s, w)
        total = term if total is None else T.add(total, term)
    return T.scale(total, cfg.alpha / num_layers)


def _layer_proj(spec, projections, traces_teacher, h_s, l):
    if spec.kind != "randomized":
        return None
    s = _resolve_projection_dims(spec, traces_teacher[l].shape[1], h_s.shape[1])
    return projections.get(h_s.shape[1], s)


def inverse_nhk_gram(mapper: InverseNhkMapper, h_last: Tensor) -> Tensor:
    """Gram matrix of mapped late-layer features; symmetric PSD."""
    return T.gram(mapper.apply(h_last))


def reconstruction_loss(k_dagger: Tensor, h_late: Tensor, h_early: Tensor) -> Tensor:
    """||K_dagger H_late - H_early||_F^2."""
    if k_dagger.shape[1] != h_late.shape[0]:
        raise DimensionError(
            f"k_dagger cols {k_dagger.shape[1]} != h_late rows {h_late.shape[0]}"
        )
    recon = T.matmul(k_dagger, h_late)
    if recon.shape != h_early.shape:
        raise DimensionError(
            f"reconstruction shape {recon.shape} != target {h_early.shape}"
        )
    ones = T.constant(np.ones(h_early.shape))
    return T.frobenius_sq(recon, h_early, ones)


def kd_soft_label_loss(teacher_logits, student_logits: Tensor, tau: float, mask) -> Tensor:
    """tau^2 * mean KL(softmax(teacher/tau) || softmax(student/tau)) over masked rows."""
    if tau <= 0:
        raise ValidationError("tau must be > 0")
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValidationError("kd loss: empty mask")
    t_vals = teacher_logits.values if isinstance(teacher_logits, Tensor) else \
        np.asarray(teacher_logits, dtype=np.float64)
    if t_vals.shape != student_logits.shape:
        raise DimensionError(f"logit shapes differ: {t_vals.shape} vs {student_logits.shape}")

    zt = t_vals[mask] / tau
    zt = zt - zt.max(axis=1, keepdims=True)
    log_pt = zt - np.log(np.exp(zt).sum(axis=1, keepdims=True))
    pt = np.exp(log_pt)
    entropy_term = float((pt * log_pt).sum())

    log_ps = T.log_softmax(T.scale(T.take_rows(student_logits, mask), 1.0 / tau))
    cross = T.sum_all(T.mul_elem(log_ps, T.constant(pt)))
    kl = T.add(T.constant([[entropy_term]]), T.scale(cross, -1.0))
    return T.scale(kl, tau * tau / len(mask))


def pgkd_span(model: GnnModel) -> tuple[int, int]:
    """Trace indices (early, late) bridged by the inverse kernel.

    The reconstruction target and input must share a feature dimension, so a
    gcn uses its first and last hidden maps; an sgc propagates in the input
    space and can span the whole stack.
    """
    if model.kind == "sgc":
        return 0, model.num_layers
    if model.num_layers < 2:
        raise ValidationError("parametric distillation needs depth >= 2")
    early, late = 1, model.num_layers - 1
    if model.dims[early] != model.dims[late]:
        raise ValidationError("hidden sizes at span endpoints must match")
    return early, late


def trace_feature_dim(model: GnnModel, idx: int) -> int:
    """Feature width of trace entry idx (sgc propagates in the input space)."""
    return model.dims[0] if model.kind == "sgc" else model.dims[idx]
