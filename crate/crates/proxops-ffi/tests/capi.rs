//! Exercises the C ABI end to end from Rust: handles, error codes, and
//! numeric agreement with the underlying library.

use std::ffi::CString;

use nalgebra::Vector3;
use proxops::gravity::{gravity_accel, GravityParams};
use proxops::lidar::MISS_SENTINEL;
use proxops::mesh::AsteroidMesh;
use proxops_ffi::*;

fn fixture_cstring(name: &str) -> CString {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../proxops/fixtures")
        .join(name);
    CString::new(path.to_str().unwrap()).unwrap()
}

fn load_mesh(name: &str) -> *mut PxMesh {
    let path = fixture_cstring(name);
    let mut mesh: *mut PxMesh = std::ptr::null_mut();
    let code = unsafe { px_mesh_load_obj(path.as_ptr(), &mut mesh) };
    assert_eq!(code, PX_OK);
    assert!(!mesh.is_null());
    mesh
}

#[test]
fn version_is_a_cstring() {
    let v = px_version();
    assert!(!v.is_null());
    let s = unsafe { std::ffi::CStr::from_ptr(v) }.to_str().unwrap();
    assert!(!s.is_empty());
}

#[test]
fn mesh_load_info_and_errors() {
    let mesh = load_mesh("cube.obj");
    let mut info = PxMeshInfo {
        n_vertices: 0,
        n_faces: 0,
        bounding_radius_m: 0.0,
        volume_m3: 0.0,
    };
    assert_eq!(unsafe { px_mesh_info(mesh, &mut info) }, PX_OK);
    assert_eq!(info.n_faces, 12);
    assert_eq!(info.n_vertices, 8);
    assert!((info.volume_m3 - 1.0).abs() < 1e-12);
    unsafe { px_mesh_free(mesh) };

    // Missing file -> io error; null out -> null argument.
    let bogus = CString::new("/definitely/not/here.obj").unwrap();
    let mut out: *mut PxMesh = std::ptr::null_mut();
    assert_eq!(unsafe { px_mesh_load_obj(bogus.as_ptr(), &mut out) }, PX_IO_ERROR);
    assert_eq!(
        unsafe { px_mesh_load_obj(bogus.as_ptr(), std::ptr::null_mut()) },
        PX_NULL_ARGUMENT
    );
}

#[test]
fn gravity_agrees_with_the_library() {
    let mesh = load_mesh("cube.obj");
    let pos = [0.0f64, 0.0, 5.0];
    let mut accel = [0.0f64; 3];
    let code = unsafe { px_gravity_accel(mesh, 2000.0, 6.674_30e-11, pos.as_ptr(), accel.as_mut_ptr()) };
    assert_eq!(code, PX_OK);

    let fixture = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../proxops/fixtures/cube.obj");
    let lib_mesh = AsteroidMesh::load_obj_path(&fixture).unwrap();
    let expect = gravity_accel(
        &lib_mesh,
        &GravityParams::with_density(2000.0),
        &Vector3::new(0.0, 0.0, 5.0),
    )
    .unwrap();
    for i in 0..3 {
        assert_eq!(accel[i], expect[i]);
    }

    // Interior query reports the right code.
    let inside = [0.0f64, 0.0, 0.0];
    let code =
        unsafe { px_gravity_accel(mesh, 2000.0, 6.674_30e-11, inside.as_ptr(), accel.as_mut_ptr()) };
    assert_eq!(code, PX_INSIDE_BODY);

    let mut is_inside = -1i32;
    assert_eq!(
        unsafe { px_classify_point(mesh, inside.as_ptr(), &mut is_inside) },
        PX_OK
    );
    assert_eq!(is_inside, 1);

    unsafe { px_mesh_free(mesh) };
}

#[test]
fn raycast_and_scanner() {
    let mesh = load_mesh("cube.obj");
    let origin = [0.0f64, 0.0, 5.0];
    let down = [0.0f64, 0.0, -1.0];
    let mut dist = 0.0f64;
    let mut hit = 0i32;
    assert_eq!(
        unsafe { px_raycast(mesh, origin.as_ptr(), down.as_ptr(), &mut dist, &mut hit) },
        PX_OK
    );
    assert_eq!(hit, 1);
    assert!((dist - 4.5).abs() < 1e-12);

    let mut scanner: *mut PxScanner = std::ptr::null_mut();
    assert_eq!(
        unsafe { px_scanner_new(mesh, 12, 360, 10.0, &mut scanner) },
        PX_OK
    );
    let len = unsafe { px_scanner_frame_len(scanner) };
    assert_eq!(len, 4320);

    let mut ranges = vec![0.0f32; len as usize];
    assert_eq!(
        unsafe { px_scanner_scan(scanner, origin.as_ptr(), ranges.as_mut_ptr(), len) },
        PX_OK
    );
    assert!(ranges.iter().any(|&r| r != MISS_SENTINEL));
    assert!(ranges
        .iter()
        .all(|&r| r == MISS_SENTINEL || (r > 0.0 && r <= 10.0)));

    // Undersized output buffer is rejected.
    assert_eq!(
        unsafe { px_scanner_scan(scanner, origin.as_ptr(), ranges.as_mut_ptr(), 10) },
        PX_BUFFER_TOO_SMALL
    );

    // Bad geometry is rejected.
    let mut bad: *mut PxScanner = std::ptr::null_mut();
    assert_eq!(unsafe { px_scanner_new(mesh, 0, 360, 10.0, &mut bad) }, PX_BAD_CONFIG);

    unsafe { px_scanner_free(scanner) };
    unsafe { px_mesh_free(mesh) };
}

#[test]
fn viability_check_examples() {
    let eps_mag = 0.5;
    let eps_angle = 10.0f64.to_radians();
    let eta = 0.05;
    let mut viable = -1i32;
    let mut mag = 0.0f64;
    let mut angle = 0.0f64;

    let a = [3.0f64, 0.0, 0.0];
    assert_eq!(
        unsafe {
            px_viability_check(a.as_ptr(), a.as_ptr(), eps_mag, eps_angle, eta, &mut viable, &mut mag, &mut angle)
        },
        PX_OK
    );
    assert_eq!(viable, 1);
    assert_eq!(mag, 0.0);

    let full = [7.0f64, 0.0, 0.0];
    let anti = [-7.0f64, 0.0, 0.0];
    unsafe {
        px_viability_check(full.as_ptr(), anti.as_ptr(), eps_mag, eps_angle, eta, &mut viable, &mut mag, &mut angle)
    };
    assert_eq!(viable, 0);
    assert!((mag - 14.0).abs() < 1e-12);
    assert!((angle - std::f64::consts::PI).abs() < 1e-9);

    // Angle branch alone passes.
    let close = [6.9f64, 0.1, 0.0];
    unsafe {
        px_viability_check(full.as_ptr(), close.as_ptr(), 0.05, eps_angle, eta, &mut viable, &mut mag, &mut angle)
    };
    assert_eq!(viable, 1);
    assert!(mag > 0.05);
    assert!(angle > 0.0 && angle < eps_angle);
}

#[test]
fn surrogate_and_policy_round_trip_through_checkpoints() {
    use proxops::lidar::NormalizationSpec;
    use proxops::policy::{PolicyNetwork, PolicySpec};
    use proxops::surrogate::{SurrogateModel, SurrogateSpec};

    let dir = tempfile::tempdir().unwrap();

    let sspec = SurrogateSpec {
        hidden: vec![8],
        azimuth_count: 6,
        plane_count: 2,
        input_scale: 100.0,
        max_range: 50.0,
        miss_loss_weight: 1.0,
    };
    let surrogate = SurrogateModel::new(sspec, 3);
    let spath = dir.path().join("surrogate.ckpt");
    surrogate.save(&spath).unwrap();

    let cpath = CString::new(spath.to_str().unwrap()).unwrap();
    let mut sh: *mut PxSurrogate = std::ptr::null_mut();
    assert_eq!(unsafe { px_surrogate_load(cpath.as_ptr(), &mut sh) }, PX_OK);
    let cells = unsafe { px_surrogate_frame_len(sh) };
    assert_eq!(cells, 12);
    let mut ranges = vec![0.0f32; cells as usize];
    let pos = [1.0f64, -2.0, 3.0];
    assert_eq!(
        unsafe { px_surrogate_frame(sh, pos.as_ptr(), ranges.as_mut_ptr(), cells) },
        PX_OK
    );
    let expect = surrogate.generate_frame(&Vector3::new(1.0, -2.0, 3.0));
    assert_eq!(ranges, expect.ranges);
    unsafe { px_surrogate_free(sh) };

    // Policy: session push + infer matches the library inference.
    let pspec = PolicySpec {
        buffer_len: 2,
        azimuth_count: 12,
        plane_count: 2,
        conv1_channels: 2,
        conv1_kernel: (3, 3),
        conv1_stride_az: 2,
        pool1: (2, 1),
        conv2_channels: 2,
        conv2_kernel: (3, 3),
        conv2_stride_az: 1,
        pool2: (3, 2),
        embed_dim: 8,
        lstm_hidden: 4,
        head_hidden: vec![4],
        u_max: 7.0,
        goal_pos_scale: 100.0,
        goal_vel_scale: 10.0,
        norm: NormalizationSpec {
            mean: 20.0,
            std: 5.0,
            sentinel_value: -5.0,
        },
    };
    let policy = PolicyNetwork::new(pspec, 9);
    let ppath = dir.path().join("policy.ckpt");
    policy.save(&ppath).unwrap();

    let cpath = CString::new(ppath.to_str().unwrap()).unwrap();
    let mut ph: *mut PxPolicy = std::ptr::null_mut();
    assert_eq!(unsafe { px_policy_load(cpath.as_ptr(), &mut ph) }, PX_OK);
    assert_eq!(unsafe { px_policy_frame_len(ph) }, 24);

    let mut session: *mut PxPolicySession = std::ptr::null_mut();
    assert_eq!(unsafe { px_policy_session_new(ph, &mut session) }, PX_OK);

    let goal_p = [50.0f64, -20.0, 10.0];
    let goal_v = [0.0f64, 0.0, 0.0];
    let mut force = [0.0f64; 3];
    // Empty buffer refuses inference.
    assert_eq!(
        unsafe { px_policy_infer(session, goal_p.as_ptr(), goal_v.as_ptr(), force.as_mut_ptr()) },
        PX_EMPTY_BUFFER
    );

    let frame: Vec<f32> = (0..24)
        .map(|i| if i % 5 == 0 { MISS_SENTINEL } else { 10.0 + i as f32 })
        .collect();
    assert_eq!(
        unsafe { px_policy_session_push(session, frame.as_ptr(), 24) },
        PX_OK
    );
    assert_eq!(
        unsafe { px_policy_infer(session, goal_p.as_ptr(), goal_v.as_ptr(), force.as_mut_ptr()) },
        PX_OK
    );
    assert!(force.iter().all(|f| f.abs() <= 7.0));

    // Library-side reference.
    let mut buffer = proxops::policy::FrameBuffer::new(2);
    let lf = proxops::lidar::LidarFrame {
        azimuth_count: 12,
        plane_count: 2,
        ranges: frame.clone(),
        pose_position: Vector3::zeros(),
        t: 0.0,
    };
    buffer.push_frame(&lf, &policy.spec.norm);
    let goal = proxops::sim::SpacecraftState {
        t: 0.0,
        position: Vector3::new(50.0, -20.0, 10.0),
        velocity: Vector3::zeros(),
    };
    let expect = proxops::policy::infer(&policy, &buffer, &goal);
    assert_eq!(force, [expect.force.x, expect.force.y, expect.force.z]);

    unsafe { px_policy_session_free(session) };
    unsafe { px_policy_free(ph) };

    // Wrong-kind checkpoint is rejected.
    let mut wrong: *mut PxPolicy = std::ptr::null_mut();
    let spath_c = CString::new(spath.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { px_policy_load(spath_c.as_ptr(), &mut wrong) },
        PX_BAD_CHECKPOINT
    );
}

#[test]
fn energy_ratio_matches_reference_arithmetic() {
    let mut ratio = 0.0f64;
    assert_eq!(
        unsafe { px_energy_ratio(0.473, 155.0, 0.053, 300.0, &mut ratio) },
        PX_OK
    );
    assert!((ratio - 0.2169).abs() < 1e-3);
    assert_eq!(
        unsafe { px_energy_ratio(0.0, 155.0, 0.053, 300.0, &mut ratio) },
        PX_BAD_CONFIG
    );
}
