from __future__ import annotations

import math

import numpy as np
import pytest

from spatialground.kernels import (
    DirectionalKernel,
    FramePolicy,
    KernelError,
    KernelParams,
    KernelSet,
    MetricKernel,
    MissingObserver,
    MissingSecondAnchor,
    clause_to_kernels,
    metric_log_density,
    vmf_log_density,
)
from spatialground.parser import parse
from spatialground.scene import ObjectNode, ObserverPose, OrientedBox, Pose, yaw_rotation


def node(node_id="a", pos=(1.0, 2.0, 0.5), yaw=0.0, known=True, half=(0.2, 0.2, 0.4)):
    rot = yaw_rotation(yaw) if known else np.eye(3)
    return ObjectNode(node_id, "thing", Pose(pos, rot, known), OrientedBox(pos, half, rot), 0.9)


def clause(text):
    return parse(text).clauses[0]


def test_metric_matches_direct_formula():
    rng = np.random.default_rng(0)
    center = np.array([0.3, -0.2, 1.0])
    for _ in range(200):
        x = rng.uniform(-5, 5, 3)
        d0, sigma = rng.uniform(0.01, 4), rng.uniform(0.05, 2)
        r = math.sqrt(sum((x[i] - center[i]) ** 2 for i in range(3)))
        expect = -((r - d0) ** 2) / (2 * sigma * sigma)
        assert abs(metric_log_density(MetricKernel(center, d0, sigma), x) - expect) <= 1e-9


def test_vmf_aligned_and_opposite():
    k = DirectionalKernel(Pose((1, 1, 1), yaw_rotation(0.7)), 0.0, 0.0, 3.5)
    m = k.world_mean
    assert vmf_log_density(k, np.array([1, 1, 1]) + 2.0 * m) == pytest.approx(3.5, abs=1e-9)
    assert vmf_log_density(k, np.array([1, 1, 1]) - 0.3 * m) == pytest.approx(-3.5, abs=1e-9)


def test_vmf_zero_at_anchor():
    k = DirectionalKernel(Pose((0, 0, 0)), 0.0, 0.0, 4.0)
    assert vmf_log_density(k, np.array([0.0, 0.0, 5e-7])) == 0.0


def test_vmf_vectorized_matches_scalar():
    k = DirectionalKernel(Pose((0, 0, 0), yaw_rotation(-1.0)), 0.4, 0.2, 2.0)
    pts = np.random.default_rng(3).normal(size=(20, 3))
    batch = vmf_log_density(k, pts)
    for p, v in zip(pts, batch):
        assert vmf_log_density(k, p) == pytest.approx(v, abs=1e-12)


def test_metric_kernel_argument_checks():
    with pytest.raises(KernelError):
        MetricKernel((0, 0, 0), 0.0, 1.0)
    with pytest.raises(KernelError):
        MetricKernel((0, 0, 0), 1.0, 0.0)
    with pytest.raises(KernelError):
        DirectionalKernel(Pose((0, 0, 0)), 0.0, 0.0, -1.0)


def test_right_of_intrinsic_direction():
    ks = clause_to_kernels(clause("2 meters right of the fridge"), node(yaw=math.pi / 2))
    (d,), (m,) = ks.directional, ks.metric
    # Facing +y, so the right-hand side is +x.
    np.testing.assert_allclose(d.world_mean, (1, 0, 0), atol=1e-12)
    assert (m.d0, m.sigma) == (2.0, 0.2)


def test_sigma_floor():
    (m,) = clause_to_kernels(clause("50 cm left of the tv"), node()).metric
    assert m.sigma == 0.15


def test_near_defaults_and_metric():
    ks = clause_to_kernels(clause("near the sink"), node())
    assert not ks.directional and (ks.metric[0].d0, ks.metric[0].sigma) == (1.0, 0.5)
    ks = clause_to_kernels(clause("3 meters from the door"), node())
    assert (ks.metric[0].d0, ks.metric[0].sigma) == (3.0, pytest.approx(0.3))


def test_above_default_distance_clears_box():
    ks = clause_to_kernels(clause("above the table"), node(half=(0.5, 0.5, 0.4)))
    np.testing.assert_allclose(ks.directional[0].world_mean, (0, 0, 1), atol=1e-12)
    assert ks.metric[0].d0 == pytest.approx(0.7)


def test_between_midpoint():
    a, b = node("a", (0, 0, 0)), node("b", (4, 0, 0))
    ks = clause_to_kernels(clause("between the table and the couch"), a, b)
    (m,) = ks.metric
    np.testing.assert_allclose(m.center, (2, 0, 0))
    assert m.zero_offset and m.sigma == 1.0
    with pytest.raises(MissingSecondAnchor):
        clause_to_kernels(clause("between the table and the couch"), a)


def test_viewer_relative_fallback_for_unknown_orientation():
    anchor = node(pos=(0, 0, 0), known=False)
    with pytest.raises(MissingObserver):
        clause_to_kernels(clause("left of the box"), anchor)
    obs = ObserverPose((-3, 0, 1), 0.0, 0.0)  # looking along +x toward the anchor
    ks = clause_to_kernels(clause("left of the box"), anchor, observer=obs)
    np.testing.assert_allclose(ks.directional[0].world_mean, (0, 1, 0), atol=1e-12)
    ks = clause_to_kernels(clause("in front of the box"), anchor, observer=obs)
    np.testing.assert_allclose(ks.directional[0].world_mean, (-1, 0, 0), atol=1e-12)


def test_viewer_relative_policy_overrides_known_pose():
    anchor = node(pos=(0, 0, 0), yaw=math.pi)
    obs = ObserverPose((0, -3, 1), math.pi / 2, 0.0)
    ks = clause_to_kernels(clause("right of the box"), anchor, observer=obs, policy=FramePolicy.VIEWER_RELATIVE)
    np.testing.assert_allclose(ks.directional[0].world_mean, (1, 0, 0), atol=1e-12)


def test_left_right_mirror_antisymmetry():
    rng = np.random.default_rng(7)
    for _ in range(100):
        anchor = node(pos=rng.uniform(-3, 3, 3), yaw=rng.uniform(-math.pi, math.pi))
        left = clause_to_kernels(clause("left of the box"), anchor).directional[0]
        right = clause_to_kernels(clause("right of the box"), anchor).directional[0]
        x = rng.uniform(-5, 5, (10, 3))
        np.testing.assert_allclose(vmf_log_density(left, x), -vmf_log_density(right, x), atol=1e-9)


def test_relaxed_scales_exactly():
    ks = clause_to_kernels(clause("2 meters right of the fridge"), node())
    r = ks.relaxed(1.5, 0.5)
    assert r.metric[0].sigma == ks.metric[0].sigma * 1.5
    assert r.directional[0].kappa == ks.directional[0].kappa * 0.5
    assert r.metric[0].d0 == ks.metric[0].d0


def test_kernel_set_sums_logs():
    a = MetricKernel((0, 0, 0), 1.0, 0.5)
    b = DirectionalKernel(Pose((0, 0, 0)), 0.0, 0.0, 2.0)
    ks = KernelSet((b,), (a,))
    x = np.array([[0.5, 0.5, 0.0], [2.0, -1.0, 1.0]])
    np.testing.assert_allclose(ks.log_density(x), metric_log_density(a, x) + vmf_log_density(b, x))
    with pytest.raises(KernelError):
        KernelSet()


def test_per_predicate_kappa():
    params = KernelParams(kappa_by_predicate={"behind": 9.0})
    ks = clause_to_kernels(clause("behind the box"), node(), params=params)
    assert ks.directional[0].kappa == 9.0
