import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from corebody import BodyMesh, BodyPose, BodyShape, pose_mesh
from corebody.estimator import EstimatedFrame
from corebody.guidance import (
    COCO_BONES,
    COLOR_SEVERITY,
    DEFAULT_SITE_JOINTS,
    MARKER_SITES,
    BindingError,
    CameraIntrinsics,
    ColorThresholds,
    GuidanceParams,
    MarkerColor,
    MarkerSite,
    MarkerSizing,
    MarkerWindow,
    ProjectionError,
    align_to_target,
    bind_markers,
    binding_centroid,
    build_guidance_frame,
    coco_keypoints_from_mesh,
    color_for_distance,
    compute_marker_windows,
    marker_distance,
    marker_radius,
    project_vertex,
    project_vertices,
    select_marker_vertices,
    skeleton_overlay,
)

CAM = CameraIntrinsics()


def reference_projection(point, cam):
    """Straight transcription of the projection equation, scalar math only."""
    x, y, z = point
    return (cam.f * x / (z + cam.z_cam) + cam.cx, cam.f * y / (z + cam.z_cam) + cam.cy)


def brute_force_window_select(mesh, window, cam):
    """Per-vertex oracle: project, then compare against the window bounds."""
    hits = []
    for k, v in enumerate(mesh.vertices):
        depth = v[2] + cam.z_cam
        if depth <= 1e-9:
            continue
        px, py = reference_projection(v, cam)
        if window.x_s < px < window.x_e and window.y_s < py < window.y_e:
            hits.append(k)
    return np.array(hits, dtype=np.int64)


class TestProjection:
    def test_origin_hits_optical_center(self):
        assert project_vertex((0.0, 0.0, 0.0), CAM) == (332.5, 325.0)

    def test_hand_evaluated_examples(self):
        assert project_vertex((0.2, -0.1, 0.5), CAM) == (372.5, 305.0)
        assert project_vertex((-1.0, 0.5, 0.0), CAM) == (82.5, 450.0)

    def test_matches_reference_formula_on_random_points(self, rng):
        pts = rng.uniform(-1.5, 1.5, size=(1000, 3))
        projected = project_vertices(pts, CAM)
        for p, (px, py) in zip(pts, projected):
            rx, ry = reference_projection(p, CAM)
            assert abs(px - rx) <= 1e-9 and abs(py - ry) <= 1e-9

    def test_behind_camera_rejected(self):
        with pytest.raises(ProjectionError):
            project_vertex((0.0, 0.0, -2.0), CAM)
        with pytest.raises(ProjectionError):
            project_vertices(np.array([[0.0, 0.0, -2.5]]), CAM)

    def test_scalar_and_vector_paths_agree(self, rng):
        pts = rng.uniform(-1.0, 1.0, size=(50, 3))
        stacked = project_vertices(pts, CAM)
        for p, row in zip(pts, stacked):
            assert project_vertex(p, CAM) == (row[0], row[1])


class TestMarkerWindows:
    def test_square_window_arithmetic(self):
        windows = compute_marker_windows({MarkerSite.L_HAND: (100.0, 200.0)}, 10.0)
        w = windows[MarkerSite.L_HAND]
        assert (w.x_s, w.y_s, w.x_e, w.y_e) == (90, 190, 110, 210)

    def test_zero_width_degenerates_to_point(self):
        w = compute_marker_windows({MarkerSite.L_KNEE: (5.0, 6.0)}, 0.0)[MarkerSite.L_KNEE]
        assert (w.x_s, w.x_e) == (5, 5) and (w.y_s, w.y_e) == (6, 6)

    def test_all_ten_sites_keyed(self):
        joints = {site: (float(i), float(i)) for i, site in enumerate(MARKER_SITES)}
        windows = compute_marker_windows(joints, 4.0)
        assert set(windows) == set(MARKER_SITES)

    def test_negative_half_width_rejected(self):
        with pytest.raises(ValueError):
            compute_marker_windows({MarkerSite.L_HAND: (0.0, 0.0)}, -1.0)

    def test_inverted_window_rejected(self):
        with pytest.raises(ValueError):
            MarkerWindow(MarkerSite.L_HAND, 10.0, 0.0, 0.0, 10.0)


class TestSelectMarkerVertices:
    def test_degenerate_window_selects_nothing(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        px, py = project_vertex(mesh.vertices[0], CAM)
        window = MarkerWindow(MarkerSite.L_HAND, px, py, px, py)
        assert select_marker_vertices(mesh, window, CAM).size == 0

    def test_whole_image_window_selects_everything_in_front(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        window = MarkerWindow(MarkerSite.L_HAND, -1e7, -1e7, 1e7, 1e7)
        selected = select_marker_vertices(mesh, window, CAM)
        in_front = np.nonzero(mesh.vertices[:, 2] + CAM.z_cam > 1e-9)[0]
        assert np.array_equal(selected, in_front)

    def test_toy_mesh_hand_computed_subset(self):
        verts = np.array(
            [
                [0.0, 0.0, 0.0],     # -> (332.5, 325.0)
                [0.2, -0.1, 0.5],    # -> (372.5, 305.0)
                [-1.0, 0.5, 0.0],    # -> (82.5, 450.0)
                [0.0, 0.0, -2.5],    # behind the camera
            ]
        )
        mesh = BodyMesh(verts, np.zeros((1, 3)))
        window = MarkerWindow(MarkerSite.L_HAND, 300.0, 300.0, 400.0, 330.0)
        assert select_marker_vertices(mesh, window, CAM).tolist() == [0, 1]

    def test_matches_brute_force_oracle_on_random_windows(self, assets, rng):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        for _ in range(25):
            cx = rng.uniform(0, 660)
            cy = rng.uniform(0, 650)
            w = rng.uniform(1.0, 120.0)
            window = MarkerWindow(MarkerSite.L_HAND, cx - w, cy - w, cx + w, cy + w)
            expected = brute_force_window_select(mesh, window, CAM)
            assert np.array_equal(select_marker_vertices(mesh, window, CAM), expected)

    def test_constraint_and_projection_forms_agree_vertexwise(self, rng):
        pts = rng.uniform(-2.0, 2.0, size=(500, 3))
        pts = pts[pts[:, 2] + CAM.z_cam > 1e-6]
        mesh = BodyMesh(pts, np.zeros((1, 3)))
        window = MarkerWindow(MarkerSite.L_HAND, 250.0, 250.0, 420.0, 400.0)
        depth = pts[:, 2] + CAM.z_cam
        constraint = (
            (pts[:, 0] > (window.x_s - CAM.cx) / CAM.f * depth)
            & (pts[:, 0] < (window.x_e - CAM.cx) / CAM.f * depth)
            & (pts[:, 1] > (window.y_s - CAM.cy) / CAM.f * depth)
            & (pts[:, 1] < (window.y_e - CAM.cy) / CAM.f * depth)
        )
        projected = project_vertices(pts, CAM)
        by_projection = (
            (projected[:, 0] > window.x_s)
            & (projected[:, 0] < window.x_e)
            & (projected[:, 1] > window.y_s)
            & (projected[:, 1] < window.y_e)
        )
        assert np.array_equal(np.nonzero(constraint)[0], np.nonzero(by_projection)[0])
        assert np.array_equal(
            select_marker_vertices(mesh, window, CAM), np.nonzero(constraint)[0]
        )


class TestBindMarkers:
    def test_all_sites_bind_on_test_body(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        bindings = bind_markers(mesh, CAM, half_width=20.0)
        assert set(bindings) == set(MARKER_SITES)
        for binding in bindings.values():
            assert binding.vertex_indices.size > 0
            assert binding.vertex_indices.max() < assets.n_vertices

    def test_zero_width_raises_naming_site(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        with pytest.raises(BindingError) as err:
            bind_markers(mesh, CAM, half_width=0.0)
        assert err.value.site in MARKER_SITES
        assert err.value.site.value in str(err.value)

    def test_binding_is_deterministic(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        a = bind_markers(mesh, CAM, half_width=20.0)
        b = bind_markers(mesh, CAM, half_width=20.0)
        for site in MARKER_SITES:
            assert np.array_equal(a[site].vertex_indices, b[site].vertex_indices)

    def test_bindings_cluster_near_their_joint(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        bindings = bind_markers(mesh, CAM, half_width=20.0)
        for site, binding in bindings.items():
            joint = mesh.joints[DEFAULT_SITE_JOINTS[site]]
            centroid = binding_centroid(binding, mesh)
            assert np.linalg.norm(centroid - joint) < 0.15


class TestAlignment:
    def test_identical_meshes_unchanged(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        aligned = align_to_target(mesh, mesh)
        assert_allclose(aligned.vertices, mesh.vertices, atol=0)

    def test_pure_translation_cancels(self, assets):
        target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        current = target.translated(np.array([1.0, 0.0, 0.0]))
        aligned = align_to_target(current, target)
        assert np.abs(aligned.vertices - target.vertices).max() <= 1e-12
        assert np.abs(aligned.joints - target.joints).max() <= 1e-12

    def test_root_joints_coincide(self, assets, rng):
        target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        pose = BodyPose.from_vector(rng.normal(0, 0.3, 72))
        current = pose_mesh(assets, BodyShape.zeros(), pose).translated(rng.normal(0, 1, 3))
        aligned = align_to_target(current, target)
        assert_allclose(aligned.root_joint, target.root_joint, atol=1e-12)

    def test_idempotent(self, assets, rng):
        target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        current = target.translated(rng.normal(0, 1, 3))
        once = align_to_target(current, target)
        twice = align_to_target(once, target)
        assert np.array_equal(once.vertices, twice.vertices)

    def test_topology_mismatch_rejected(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        stub = BodyMesh(mesh.vertices[:-1], mesh.joints)
        with pytest.raises(ValueError):
            align_to_target(stub, mesh)


class TestMarkerDistance:
    def test_identical_meshes_zero(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        bindings = bind_markers(mesh, CAM, 20.0)
        for binding in bindings.values():
            assert marker_distance(binding, mesh, mesh) == 0.0

    def test_uniform_offset_measured_at_every_site(self, assets):
        target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        bindings = bind_markers(target, CAM, 20.0)
        shifted = target.translated(np.array([0.3, 0.0, 0.0]))
        for binding in bindings.values():
            assert marker_distance(binding, shifted, target) == pytest.approx(0.3, abs=1e-12)

    def test_matches_centroid_oracle(self, assets, rng):
        target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        bindings = bind_markers(target, CAM, 20.0)
        current = BodyMesh(
            target.vertices + rng.normal(0, 0.02, target.vertices.shape), target.joints
        )
        for binding in bindings.values():
            idx = binding.vertex_indices
            expected = np.linalg.norm(
                current.vertices[idx].mean(axis=0) - target.vertices[idx].mean(axis=0)
            )
            assert marker_distance(binding, current, target) == pytest.approx(expected, abs=1e-15)


class TestColorScale:
    @pytest.mark.parametrize(
        "d,expected",
        [
            (0.05, MarkerColor.GREEN_YELLOW),
            (0.1, MarkerColor.YELLOW),
            (0.25, MarkerColor.ORANGE),
            (0.3, MarkerColor.ORANGE),
            (0.5, MarkerColor.RED),
            (0.7, MarkerColor.RED),
            (0.0, MarkerColor.GREEN_YELLOW),
        ],
    )
    def test_threshold_table(self, d, expected):
        assert color_for_distance(d) is expected

    def test_boundaries_are_lower_inclusive(self):
        thresholds = ColorThresholds()
        assert color_for_distance(np.nextafter(0.1, 0.0)) is MarkerColor.GREEN_YELLOW
        assert color_for_distance(0.1) is MarkerColor.YELLOW
        assert color_for_distance(np.nextafter(0.25, 0.0)) is MarkerColor.YELLOW
        assert color_for_distance(0.25) is MarkerColor.ORANGE
        assert color_for_distance(np.nextafter(0.5, 0.0)) is MarkerColor.ORANGE
        assert color_for_distance(0.5) is MarkerColor.RED

    @settings(max_examples=200)
    @given(
        d1=st.floats(min_value=0.0, max_value=10.0),
        d2=st.floats(min_value=0.0, max_value=10.0),
    )
    def test_monotone_severity(self, d1, d2):
        if d1 > d2:
            d1, d2 = d2, d1
        assert COLOR_SEVERITY[color_for_distance(d1)] <= COLOR_SEVERITY[color_for_distance(d2)]

    def test_invalid_distance_rejected(self):
        with pytest.raises(ValueError):
            color_for_distance(-0.1)
        with pytest.raises(ValueError):
            color_for_distance(float("nan"))

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            ColorThresholds(yellow=0.3, orange=0.2, red=0.5)


class TestMarkerRadius:
    def test_zero_distance_gives_r_min(self):
        assert marker_radius(0.0) == MarkerSizing().r_min

    def test_saturates_at_r_max(self):
        sizing = MarkerSizing()
        assert marker_radius(sizing.d_ref) == sizing.r_max
        assert marker_radius(10.0 * sizing.d_ref) == sizing.r_max

    def test_midpoint_radius(self):
        sizing = MarkerSizing(r_min=10.0, r_max=20.0, d_ref=0.4)
        assert marker_radius(0.2, sizing) == pytest.approx(15.0, abs=1e-12)

    def test_monotone_in_distance(self, rng):
        ds = np.sort(rng.uniform(0, 1.0, 50))
        radii = [marker_radius(float(d)) for d in ds]
        assert all(a <= b + 1e-12 for a, b in zip(radii, radii[1:]))

    def test_preconditions(self):
        with pytest.raises(ValueError):
            MarkerSizing(r_min=5.0, r_max=4.0)
        with pytest.raises(ValueError):
            MarkerSizing(d_ref=0.0)


class TestSkeletonOverlay:
    def test_full_keypoints_give_all_bones(self, rng):
        kp = np.column_stack([rng.uniform(0, 640, 18), rng.uniform(0, 480, 18), np.ones(18)])
        frame = EstimatedFrame(0.0, BodyPose.zeros(), BodyShape.zeros(), kp)
        segments = skeleton_overlay(frame, CAM)
        assert len(segments) == len(COCO_BONES) == 17

    def test_missing_joint_drops_incident_bones(self, rng):
        kp = np.column_stack([rng.uniform(0, 640, 18), rng.uniform(0, 480, 18), np.ones(18)])
        kp[1, 2] = 0.0  # neck participates in 7 bones
        frame = EstimatedFrame(0.0, BodyPose.zeros(), BodyShape.zeros(), kp)
        segments = skeleton_overlay(frame, CAM)
        expected = [b for b in COCO_BONES if 1 not in b]
        assert [s.joints for s in segments] == expected

    def test_mesh_path_equals_jointwise_projection(self, assets):
        mesh = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
        segments = skeleton_overlay(mesh, CAM)
        assert len(segments) == 17
        points = coco_keypoints_from_mesh(mesh)
        for seg in segments:
            a, b = seg.joints
            assert seg.start == project_vertex(points[a], CAM)
            assert seg.end == project_vertex(points[b], CAM)

    def test_too_few_joints_rejected(self):
        kp = np.zeros((18, 3))
        kp[0] = [10.0, 10.0, 0.9]
        frame = EstimatedFrame(0.0, BodyPose.zeros(), BodyShape.zeros(), kp)
        with pytest.raises(ValueError, match="fewer than 2"):
            skeleton_overlay(frame, CAM)


@pytest.fixture(scope="module")
def setup(assets):
    target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
    bindings = bind_markers(target, CAM, 20.0)
    return target, bindings


class TestBuildGuidanceFrame:

    def test_equal_meshes_all_green_rmse_zero(self, assets, setup):
        target, bindings = setup
        frame = build_guidance_frame(
            target, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask
        )
        assert len(frame.markers) == 10
        assert all(m.color is MarkerColor.GREEN_YELLOW and m.d_e == 0.0 for m in frame.markers)
        assert frame.rmse == 0.0

    def test_uniform_offset_cancelled_by_alignment(self, assets, setup):
        target, bindings = setup
        current = target.translated(np.array([0.3, 0.0, 0.0]))
        frame = build_guidance_frame(
            current, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask
        )
        assert all(m.color is MarkerColor.GREEN_YELLOW for m in frame.markers)
        assert max(m.d_e for m in frame.markers) <= 1e-12
        assert frame.rmse <= 1e-12

    def test_arm_rotation_is_local(self, assets, setup):
        target, bindings = setup
        rot = np.zeros((23, 3))
        rot[15, 2] = -0.8  # left shoulder (joint 16) swung down
        current = pose_mesh(assets, BodyShape.zeros(), BodyPose(np.zeros(3), rot))
        frame = build_guidance_frame(
            current, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask
        )
        states = {m.site: m for m in frame.markers}
        assert states[MarkerSite.L_HAND].color is MarkerColor.ORANGE
        assert states[MarkerSite.L_ELBOW].color is MarkerColor.YELLOW
        untouched = set(MARKER_SITES) - {MarkerSite.L_HAND, MarkerSite.L_ELBOW, MarkerSite.L_SHOULDER}
        for site in untouched:
            assert states[site].color is MarkerColor.GREEN_YELLOW
            assert states[site].d_e <= 1e-12

    def test_translation_invariance(self, assets, setup, rng):
        target, bindings = setup
        rot = np.zeros((23, 3))
        rot[15, 2] = -0.4
        current = pose_mesh(assets, BodyShape.zeros(), BodyPose(np.zeros(3), rot))
        base = build_guidance_frame(
            current, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask
        )
        shift = rng.normal(0, 2.0, 3)
        moved = build_guidance_frame(
            current.translated(shift),
            target.translated(shift),
            bindings,
            CAM,
            GuidanceParams(),
            assets.head_vertex_mask,
        )
        for a, b in zip(base.markers, moved.markers):
            assert a.d_e == pytest.approx(b.d_e, abs=1e-9)
            assert a.color is b.color
        assert base.rmse == pytest.approx(moved.rmse, abs=1e-9)

    def test_deterministic(self, assets, setup):
        target, bindings = setup
        rot = np.zeros((23, 3))
        rot[3, 0] = 0.5
        current = pose_mesh(assets, BodyShape.zeros(), BodyPose(np.zeros(3), rot))
        f1 = build_guidance_frame(
            current, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask, 1.0
        )
        f2 = build_guidance_frame(
            current, target, bindings, CAM, GuidanceParams(), assets.head_vertex_mask, 1.0
        )
        assert f1.rmse == f2.rmse
        assert [ (m.site, m.d_e, m.color, m.radius) for m in f1.markers ] == [
            (m.site, m.d_e, m.color, m.radius) for m in f2.markers
        ]
