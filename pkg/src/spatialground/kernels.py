"""Directional (von Mises-Fisher) and metric (radial Gaussian) log kernels.

Log densities are unnormalized. Every kernel is evaluated on a discrete grid
and the composed field is normalized there, so the continuous normalizers
cancel and are never computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

import numpy as np

from .parser import Predicate, SDCClause
from .scene import ObjectNode, ObserverPose, Pose, yaw_rotation

SINGULAR_RADIUS = 1e-6


class KernelError(ValueError):
    pass


class MissingSecondAnchor(KernelError):
    pass


class MissingObserver(KernelError):
    pass


class FramePolicy(Enum):
    INTRINSIC = "intrinsic"
    VIEWER_RELATIVE = "viewer_relative"


def mean_direction(azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])


# (azimuth, elevation) of each predicate in the anchor's local frame.
PREDICATE_DIRECTIONS: dict[Predicate, tuple[float, float]] = {
    Predicate.FRONT_OF: (0.0, 0.0),
    Predicate.BEHIND: (math.pi, 0.0),
    Predicate.LEFT_OF: (math.pi / 2, 0.0),
    Predicate.RIGHT_OF: (-math.pi / 2, 0.0),
    Predicate.ABOVE: (0.0, math.pi / 2),
    Predicate.BELOW: (0.0, -math.pi / 2),
}


@dataclass(frozen=True, eq=False)
class DirectionalKernel:
    anchor: Pose
    azimuth: float
    elevation: float
    kappa: float

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            raise KernelError(f"kappa must be finite and >= 0, got {self.kappa}")

    @property
    def local_mean(self) -> np.ndarray:
        return mean_direction(self.azimuth, self.elevation)

    @property
    def world_mean(self) -> np.ndarray:
        return self.anchor.rotation @ self.local_mean

    def scaled(self, kappa_factor: float) -> "DirectionalKernel":
        return replace(self, kappa=self.kappa * kappa_factor)


@dataclass(frozen=True, eq=False)
class MetricKernel:
    """Radial Gaussian around ``center``.

    With ``zero_offset`` the kernel is an isotropic Gaussian (d0 = 0), used for
    the midpoint construction of "between".
    """

    center: np.ndarray
    d0: float
    sigma: float
    zero_offset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.zero_offset:
            if self.d0 != 0.0:
                raise KernelError("zero-offset kernels have d0 = 0")
        elif not self.d0 > 0:
            raise KernelError(f"d0 must be > 0, got {self.d0}")
        if not self.sigma > 0:
            raise KernelError(f"sigma must be > 0, got {self.sigma}")

    @classmethod
    def point(cls, center, sigma: float) -> "MetricKernel":
        return cls(center, 0.0, sigma, zero_offset=True)

    def scaled(self, sigma_factor: float) -> "MetricKernel":
        return replace(self, sigma=self.sigma * sigma_factor)


@dataclass(frozen=True)
class KernelSet:
    directional: tuple[DirectionalKernel, ...] = ()
    metric: tuple[MetricKernel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "directional", tuple(self.directional))
        object.__setattr__(self, "metric", tuple(self.metric))
        if not self.directional and not self.metric:
            raise KernelError("a kernel set needs at least one kernel")

    def __len__(self) -> int:
        return len(self.directional) + len(self.metric)

    def __add__(self, other: "KernelSet") -> "KernelSet":
        return KernelSet(self.directional + other.directional, self.metric + other.metric)

    def relaxed(self, sigma_factor: float = 1.5, kappa_factor: float = 0.5) -> "KernelSet":
        return KernelSet(
            tuple(k.scaled(kappa_factor) for k in self.directional),
            tuple(k.scaled(sigma_factor) for k in self.metric),
        )

    def log_density(self, x) -> np.ndarray:
        """Sum of every kernel's log density at ``x``."""
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for k in self.directional:
            total = total + vmf_log_density(k, x)
        for k in self.metric:
            total = total + metric_log_density(k, x)
        return total


def vmf_log_density(k: DirectionalKernel, x):
    """kappa * <R m, unit(x - t)>, with 0 within 1e-6 m of the anchor."""
    x = np.asarray(x, dtype=float)
    offset = x - k.anchor.position
    dist = np.linalg.norm(offset, axis=-1)
    safe = np.where(dist < SINGULAR_RADIUS, 1.0, dist)
    cosine = (offset @ k.world_mean) / safe
    out = np.where(dist < SINGULAR_RADIUS, 0.0, k.kappa * cosine)
    return float(out) if out.ndim == 0 else out


def metric_log_density(k: MetricKernel, x):
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(x - k.center, axis=-1)
    out = -((dist - k.d0) ** 2) / (2.0 * k.sigma**2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KernelParams:
    kappa: float = 4.0
    kappa_by_predicate: Mapping[str, float] = field(default_factory=dict)
    sigma_fraction: float = 0.1
    sigma_floor: float = 0.15
    near_d0: float = 1.0
    near_sigma: float = 0.5
    directional_d0: float = 1.0
    directional_sigma: float = 0.5
    vertical_margin: float = 0.3
    frame_policy: FramePolicy = FramePolicy.INTRINSIC

    def kappa_for(self, predicate: Predicate) -> float:
        return float(self.kappa_by_predicate.get(predicate.value, self.kappa))

    def metric_sigma(self, d0: float) -> float:
        return max(self.sigma_fraction * d0, self.sigma_floor)


def _viewer_frame(predicate: Predicate, anchor: ObjectNode, observer: ObserverPose) -> Pose:
    """Yaw-only frame in which the local direction table reads viewer-relative.

    Front/behind use the side of the anchor facing the observer; left/right
    use the observer's horizontal facing direction.
    """
    if predicate in (Predicate.FRONT_OF, Predicate.BEHIND):
        toward = observer.position - anchor.position
        toward[2] = 0.0
        if np.linalg.norm(toward) < SINGULAR_RADIUS:
            toward = -observer.facing
        yaw = math.atan2(toward[1], toward[0])
    else:
        yaw = observer.yaw
    return Pose(anchor.position.copy(), yaw_rotation(yaw), True)


def clause_to_kernels(clause: SDCClause, anchor: ObjectNode, anchor2: ObjectNode | None = None,
                      observer: ObserverPose | None = None, policy: FramePolicy | None = None,
                      params: KernelParams | None = None) -> KernelSet:
    params = params or KernelParams()
    policy = policy or params.frame_policy
    pred = clause.predicate

    if pred is Predicate.BETWEEN:
        if anchor2 is None:
            raise MissingSecondAnchor("'between' needs two resolved anchors")
        separation = float(np.linalg.norm(anchor2.position - anchor.position))
        if separation < SINGULAR_RADIUS:
            raise KernelError("'between' anchors coincide")
        midpoint = (anchor.position + anchor2.position) / 2.0
        return KernelSet(metric=(MetricKernel.point(midpoint, separation / 4.0),))
    if anchor2 is not None:
        raise KernelError(f"{pred.value} takes a single anchor")

    center = anchor.position.copy()
    if pred is Predicate.NEAR:
        if clause.metric is None:
            return KernelSet(metric=(MetricKernel(center, params.near_d0, params.near_sigma),))
        d0 = clause.metric.distance
        return KernelSet(metric=(MetricKernel(center, d0, params.metric_sigma(d0)),))

    if clause.metric is not None:
        d0 = clause.metric.distance
        sigma = params.metric_sigma(d0)
    elif pred in (Predicate.ABOVE, Predicate.BELOW):
        d0 = float(anchor.box.half_extents[2]) + params.vertical_margin
        sigma = params.metric_sigma(d0)
    else:
        d0, sigma = params.directional_d0, params.directional_sigma

    vertical = pred in (Predicate.ABOVE, Predicate.BELOW)
    viewer = not vertical and (policy is FramePolicy.VIEWER_RELATIVE or not anchor.pose.known_orientation)
    if viewer:
        if observer is None:
            raise MissingObserver(f"viewer-relative {pred.value} needs an observer pose")
        frame = _viewer_frame(pred, anchor, observer)
    elif vertical and policy is FramePolicy.VIEWER_RELATIVE:
        frame = Pose(center, np.eye(3), True)
    else:
        frame = anchor.pose
    azimuth, elevation = PREDICATE_DIRECTIONS[pred]
    directional = DirectionalKernel(frame, azimuth, elevation, params.kappa_for(pred))
    return KernelSet(directional=(directional,), metric=(MetricKernel(center, d0, sigma),))
