//! C ABI over the proxops library.
//!
//! Conventions: every function returns a `PxStatus` code (0 = success),
//! results travel through out-parameters, and heap objects are opaque
//! handles released through their paired `_free` function. Pointers must be
//! valid for the documented lengths; handles are not thread-safe unless
//! noted. The matching header lives at `include/proxops.h`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Vector3;

use proxops::gravity::{self, FieldError, GravityParams, PointClass};
use proxops::hybrid::{viability_check, HybridConfig, Viability};
use proxops::lidar::{Bvh, LidarArrayGeometry, Raycaster};
use proxops::mesh::{AsteroidMesh, MeshError};
use proxops::policy::{FrameBuffer, PolicyNetwork};
use proxops::sim::ThrustCommand;
use proxops::surrogate::SurrogateModel;

/// Status codes returned by every entry point.
pub const PX_OK: i32 = 0;
pub const PX_NULL_ARGUMENT: i32 = 1;
pub const PX_INVALID_UTF8: i32 = 2;
pub const PX_PARSE_ERROR: i32 = 3;
pub const PX_OPEN_MESH: i32 = 4;
pub const PX_INVERTED_MESH: i32 = 5;
pub const PX_IO_ERROR: i32 = 6;
pub const PX_INSIDE_BODY: i32 = 7;
pub const PX_SURFACE_SINGULARITY: i32 = 8;
pub const PX_BAD_CONFIG: i32 = 9;
pub const PX_BAD_CHECKPOINT: i32 = 10;
pub const PX_BUFFER_TOO_SMALL: i32 = 11;
pub const PX_EMPTY_BUFFER: i32 = 12;
pub const PX_INTERNAL_ERROR: i32 = 99;

fn mesh_error_code(e: &MeshError) -> i32 {
    match e {
        MeshError::Parse { .. } => PX_PARSE_ERROR,
        MeshError::OpenMesh(_) => PX_OPEN_MESH,
        MeshError::InvertedMesh(_) => PX_INVERTED_MESH,
        MeshError::Io(_) => PX_IO_ERROR,
    }
}

fn field_error_code(e: &FieldError) -> i32 {
    match e {
        FieldError::InsideBody => PX_INSIDE_BODY,
        FieldError::SurfaceSingularity => PX_SURFACE_SINGULARITY,
    }
}

fn guard(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => PX_INTERNAL_ERROR,
    }
}

unsafe fn cstr_path<'a>(ptr: *const c_char) -> Result<&'a Path, i32> {
    if ptr.is_null() {
        return Err(PX_NULL_ARGUMENT);
    }
    let s = unsafe { CStr::from_ptr(ptr) };
    s.to_str().map(Path::new).map_err(|_| PX_INVALID_UTF8)
}

unsafe fn vec3_in(ptr: *const f64) -> Result<Vector3<f64>, i32> {
    if ptr.is_null() {
        return Err(PX_NULL_ARGUMENT);
    }
    let s = unsafe { std::slice::from_raw_parts(ptr, 3) };
    Ok(Vector3::new(s[0], s[1], s[2]))
}

unsafe fn vec3_out(ptr: *mut f64, v: &Vector3<f64>) -> i32 {
    if ptr.is_null() {
        return PX_NULL_ARGUMENT;
    }
    let s = unsafe { std::slice::from_raw_parts_mut(ptr, 3) };
    s[0] = v.x;
    s[1] = v.y;
    s[2] = v.z;
    PX_OK
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn px_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Meshes
// ---------------------------------------------------------------------------

/// Opaque validated asteroid mesh.
pub struct PxMesh(AsteroidMesh);

#[repr(C)]
pub struct PxMeshInfo {
    pub n_vertices: u64,
    pub n_faces: u64,
    pub bounding_radius_m: f64,
    pub volume_m3: f64,
}

/// Load and validate an OBJ mesh from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_mesh_load_obj(path: *const c_char, out: *mut *mut PxMesh) -> i32 {
    guard(|| {
        if out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let path = match unsafe { cstr_path(path) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match AsteroidMesh::load_obj_path(path) {
            Ok(mesh) => {
                unsafe { *out = Box::into_raw(Box::new(PxMesh(mesh))) };
                PX_OK
            }
            Err(e) => mesh_error_code(&e),
        }
    })
}

/// Release a mesh handle.
///
/// # Safety
/// `mesh` must have come from [`px_mesh_load_obj`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn px_mesh_free(mesh: *mut PxMesh) {
    if !mesh.is_null() {
        drop(unsafe { Box::from_raw(mesh) });
    }
}

/// Fill `out` with basic mesh statistics.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_mesh_info(mesh: *const PxMesh, out: *mut PxMeshInfo) -> i32 {
    guard(|| {
        if mesh.is_null() || out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let m = unsafe { &(*mesh).0 };
        unsafe {
            (*out).n_vertices = m.vertices().len() as u64;
            (*out).n_faces = m.faces().len() as u64;
            (*out).bounding_radius_m = m.bounding_radius();
            (*out).volume_m3 = m.volume();
        }
        PX_OK
    })
}

/// Polyhedral gravitational acceleration at `position[3]` (meters), written
/// to `out_accel[3]` (m/s^2).
///
/// # Safety
/// Pointers must be valid for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn px_gravity_accel(
    mesh: *const PxMesh,
    density_kg_m3: f64,
    gravitational_constant: f64,
    position: *const f64,
    out_accel: *mut f64,
) -> i32 {
    guard(|| {
        if mesh.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let p = match unsafe { vec3_in(position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let params = GravityParams {
            density: density_kg_m3,
            gravitational_constant,
        };
        match gravity::gravity_accel(unsafe { &(*mesh).0 }, &params, &p) {
            Ok(a) => unsafe { vec3_out(out_accel, &a) },
            Err(e) => field_error_code(&e),
        }
    })
}

/// Gravitational potential at `position[3]` (negative outside the body).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_gravity_potential(
    mesh: *const PxMesh,
    density_kg_m3: f64,
    gravitational_constant: f64,
    position: *const f64,
    out_potential: *mut f64,
) -> i32 {
    guard(|| {
        if mesh.is_null() || out_potential.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let p = match unsafe { vec3_in(position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let params = GravityParams {
            density: density_kg_m3,
            gravitational_constant,
        };
        match gravity::gravity_potential(unsafe { &(*mesh).0 }, &params, &p) {
            Ok(u) => {
                unsafe { *out_potential = u };
                PX_OK
            }
            Err(e) => field_error_code(&e),
        }
    })
}

/// Classify `position[3]`: writes 1 to `out_inside` for interior points,
/// 0 for exterior.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_classify_point(
    mesh: *const PxMesh,
    position: *const f64,
    out_inside: *mut i32,
) -> i32 {
    guard(|| {
        if mesh.is_null() || out_inside.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let p = match unsafe { vec3_in(position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        match gravity::classify_point(unsafe { &(*mesh).0 }, &p) {
            Ok(PointClass::Inside) => {
                unsafe { *out_inside = 1 };
                PX_OK
            }
            Ok(PointClass::Outside) => {
                unsafe { *out_inside = 0 };
                PX_OK
            }
            Err(e) => field_error_code(&e),
        }
    })
}

/// Nearest ray-mesh intersection. Writes 1/0 to `out_hit`; the distance (m)
/// is written only on a hit.
///
/// # Safety
/// Pointers must be valid; `direction` should be unit length.
#[no_mangle]
pub unsafe extern "C" fn px_raycast(
    mesh: *const PxMesh,
    origin: *const f64,
    direction: *const f64,
    out_distance: *mut f64,
    out_hit: *mut i32,
) -> i32 {
    guard(|| {
        if mesh.is_null() || out_distance.is_null() || out_hit.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let o = match unsafe { vec3_in(origin) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let d = match unsafe { vec3_in(direction) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        match proxops::lidar::raycast(unsafe { &(*mesh).0 }, &o, &d) {
            Some(t) => unsafe {
                *out_distance = t;
                *out_hit = 1;
                PX_OK
            },
            None => unsafe {
                *out_hit = 0;
                PX_OK
            },
        }
    })
}

// ---------------------------------------------------------------------------
// Lidar scanner
// ---------------------------------------------------------------------------

/// Opaque scanner: the direction table plus a BVH over one mesh.
pub struct PxScanner {
    mesh: *const PxMesh,
    geometry: LidarArrayGeometry,
    caster: Raycaster,
}

/// Create a scanner bound to `mesh`. The mesh handle must outlive the
/// scanner.
///
/// # Safety
/// `mesh` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_scanner_new(
    mesh: *const PxMesh,
    n_planes: u32,
    rays_per_plane: u32,
    max_range_m: f64,
    out: *mut *mut PxScanner,
) -> i32 {
    guard(|| {
        if mesh.is_null() || out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let geometry =
            match LidarArrayGeometry::build(n_planes as usize, rays_per_plane as usize, max_range_m)
            {
                Ok(g) => g,
                Err(_) => return PX_BAD_CONFIG,
            };
        let caster = Raycaster::Accelerated(Bvh::build(unsafe { &(*mesh).0 }));
        unsafe {
            *out = Box::into_raw(Box::new(PxScanner {
                mesh,
                geometry,
                caster,
            }))
        };
        PX_OK
    })
}

/// Release a scanner handle.
///
/// # Safety
/// `scanner` must come from [`px_scanner_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn px_scanner_free(scanner: *mut PxScanner) {
    if !scanner.is_null() {
        drop(unsafe { Box::from_raw(scanner) });
    }
}

/// Number of cells in one frame (`rays_per_plane * n_planes`).
///
/// # Safety
/// `scanner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_scanner_frame_len(scanner: *const PxScanner) -> u64 {
    if scanner.is_null() {
        return 0;
    }
    unsafe { (*scanner).geometry.len() as u64 }
}

/// Scan one frame from `position[3]`, row-major by azimuth, misses written
/// as -100. `out_ranges` must hold `px_scanner_frame_len` floats.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn px_scanner_scan(
    scanner: *const PxScanner,
    position: *const f64,
    out_ranges: *mut f32,
    out_len: u64,
) -> i32 {
    guard(|| {
        if scanner.is_null() || out_ranges.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let sc = unsafe { &*scanner };
        if (out_len as usize) < sc.geometry.len() {
            return PX_BUFFER_TOO_SMALL;
        }
        let p = match unsafe { vec3_in(position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let mesh = unsafe { &(*sc.mesh).0 };
        match proxops::lidar::scan(mesh, &sc.geometry, &sc.caster, &p, 0.0) {
            Ok(frame) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out_ranges, sc.geometry.len()) };
                out.copy_from_slice(&frame.ranges);
                PX_OK
            }
            Err(_) => PX_INSIDE_BODY,
        }
    })
}

// ---------------------------------------------------------------------------
// Viability check
// ---------------------------------------------------------------------------

/// Dual-threshold viability check between an MPC command and a model
/// command (newtons). Writes 1/0 to `out_viable`, the command-difference
/// norm to `out_magnitude_error`, and the inter-command angle (radians) to
/// `out_angle`, or -1 when the angle branch was skipped.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_viability_check(
    u_mpc: *const f64,
    u_model: *const f64,
    eps_magnitude_n: f64,
    eps_angle_rad: f64,
    eta_zero_n: f64,
    out_viable: *mut i32,
    out_magnitude_error: *mut f64,
    out_angle: *mut f64,
) -> i32 {
    guard(|| {
        if out_viable.is_null() || out_magnitude_error.is_null() || out_angle.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let a = match unsafe { vec3_in(u_mpc) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let b = match unsafe { vec3_in(u_model) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let cfg = HybridConfig {
            check_period: 1,
            eps_magnitude: eps_magnitude_n,
            eps_angle: eps_angle_rad,
            eta_zero: eta_zero_n,
        };
        if cfg.validate().is_err() {
            return PX_BAD_CONFIG;
        }
        let (verdict, diag) =
            viability_check(&ThrustCommand::new(a), &ThrustCommand::new(b), &cfg);
        unsafe {
            *out_viable = (verdict == Viability::Viable) as i32;
            *out_magnitude_error = diag.magnitude_error;
            *out_angle = diag.angle.unwrap_or(-1.0);
        }
        PX_OK
    })
}

// ---------------------------------------------------------------------------
// Surrogate
// ---------------------------------------------------------------------------

pub struct PxSurrogate(SurrogateModel);

/// Load a surrogate checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn px_surrogate_load(path: *const c_char, out: *mut *mut PxSurrogate) -> i32 {
    guard(|| {
        if out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let path = match unsafe { cstr_path(path) } {
            Ok(p) => p,
            Err(c) => return c,
        };
        match SurrogateModel::load(path) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(PxSurrogate(m))) };
                PX_OK
            }
            Err(proxops::nn::CheckpointError::Io(_)) => PX_IO_ERROR,
            Err(_) => PX_BAD_CHECKPOINT,
        }
    })
}

/// # Safety
/// `surrogate` must come from [`px_surrogate_load`]; free once.
#[no_mangle]
pub unsafe extern "C" fn px_surrogate_free(surrogate: *mut PxSurrogate) {
    if !surrogate.is_null() {
        drop(unsafe { Box::from_raw(surrogate) });
    }
}

/// Cells per generated frame.
///
/// # Safety
/// `surrogate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_surrogate_frame_len(surrogate: *const PxSurrogate) -> u64 {
    if surrogate.is_null() {
        return 0;
    }
    unsafe { (*surrogate).0.spec.cells() as u64 }
}

/// Synthesize the expected frame at `position[3]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn px_surrogate_frame(
    surrogate: *const PxSurrogate,
    position: *const f64,
    out_ranges: *mut f32,
    out_len: u64,
) -> i32 {
    guard(|| {
        if surrogate.is_null() || out_ranges.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let model = unsafe { &(*surrogate).0 };
        if (out_len as usize) < model.spec.cells() {
            return PX_BUFFER_TOO_SMALL;
        }
        let p = match unsafe { vec3_in(position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let frame = model.generate_frame(&p);
        let out = unsafe { std::slice::from_raw_parts_mut(out_ranges, model.spec.cells()) };
        out.copy_from_slice(&frame.ranges);
        PX_OK
    })
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

pub struct PxPolicy(PolicyNetwork);

/// A rolling inference session: the policy's frame buffer plus a reference
/// to the loaded policy. The policy handle must outlive its sessions.
pub struct PxPolicySession {
    policy: *const PxPolicy,
    buffer: FrameBuffer,
}

/// Load a policy checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn px_policy_load(path: *const c_char, out: *mut *mut PxPolicy) -> i32 {
    guard(|| {
        if out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let path = match unsafe { cstr_path(path) } {
            Ok(p) => p,
            Err(c) => return c,
        };
        match PolicyNetwork::load(path) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(PxPolicy(m))) };
                PX_OK
            }
            Err(proxops::nn::CheckpointError::Io(_)) => PX_IO_ERROR,
            Err(_) => PX_BAD_CHECKPOINT,
        }
    })
}

/// # Safety
/// `policy` must come from [`px_policy_load`]; free once, after sessions.
#[no_mangle]
pub unsafe extern "C" fn px_policy_free(policy: *mut PxPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Cells expected per pushed frame.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_policy_frame_len(policy: *const PxPolicy) -> u64 {
    if policy.is_null() {
        return 0;
    }
    let spec = unsafe { &(*policy).0.spec };
    u64::from(spec.azimuth_count) * u64::from(spec.plane_count)
}

/// Open an inference session (owns the frame buffer).
///
/// # Safety
/// `policy` must be a live handle outliving the session; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn px_policy_session_new(
    policy: *const PxPolicy,
    out: *mut *mut PxPolicySession,
) -> i32 {
    guard(|| {
        if policy.is_null() || out.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let buffer_len = unsafe { (*policy).0.spec.buffer_len };
        unsafe {
            *out = Box::into_raw(Box::new(PxPolicySession {
                policy,
                buffer: FrameBuffer::new(buffer_len),
            }))
        };
        PX_OK
    })
}

/// # Safety
/// `session` must come from [`px_policy_session_new`]; free once.
#[no_mangle]
pub unsafe extern "C" fn px_policy_session_free(session: *mut PxPolicySession) {
    if !session.is_null() {
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Push one raw lidar frame (row-major, misses as -100); it is normalized
/// with the policy's stored statistics on the way in.
///
/// # Safety
/// `ranges` must be valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn px_policy_session_push(
    session: *mut PxPolicySession,
    ranges: *const f32,
    len: u64,
) -> i32 {
    guard(|| {
        if session.is_null() || ranges.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let s = unsafe { &mut *session };
        let policy = unsafe { &(*s.policy).0 };
        let cells =
            (policy.spec.azimuth_count as usize) * (policy.spec.plane_count as usize);
        if (len as usize) != cells {
            return PX_BUFFER_TOO_SMALL;
        }
        let raw = unsafe { std::slice::from_raw_parts(ranges, cells) };
        let normalized: Vec<f64> = raw
            .iter()
            .map(|&r| policy.spec.norm.normalize_value(r))
            .collect();
        s.buffer.push_normalized(normalized);
        PX_OK
    })
}

/// Infer a thrust command from the buffered frames and the goal state.
/// Fails with `PX_EMPTY_BUFFER` before the first push.
///
/// # Safety
/// Pointers must be valid for 3 doubles each.
#[no_mangle]
pub unsafe extern "C" fn px_policy_infer(
    session: *const PxPolicySession,
    goal_position: *const f64,
    goal_velocity: *const f64,
    out_force: *mut f64,
) -> i32 {
    guard(|| {
        if session.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let s = unsafe { &*session };
        if s.buffer.fill() == 0 {
            return PX_EMPTY_BUFFER;
        }
        let gp = match unsafe { vec3_in(goal_position) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let gv = match unsafe { vec3_in(goal_velocity) } {
            Ok(v) => v,
            Err(c) => return c,
        };
        let policy = unsafe { &(*s.policy).0 };
        let goal = proxops::sim::SpacecraftState {
            t: 0.0,
            position: gp,
            velocity: gv,
        };
        let cmd = proxops::policy::infer(policy, &s.buffer, &goal);
        unsafe { vec3_out(out_force, &cmd.force) }
    })
}

// ---------------------------------------------------------------------------
// Energy model
// ---------------------------------------------------------------------------

/// Model-to-expert energy ratio: (model_time * model_tdp) /
/// (expert_time * expert_tdp). All inputs must be positive.
///
/// # Safety
/// `out_ratio` must be valid.
#[no_mangle]
pub unsafe extern "C" fn px_energy_ratio(
    expert_time_s: f64,
    expert_tdp_w: f64,
    model_time_s: f64,
    model_tdp_w: f64,
    out_ratio: *mut f64,
) -> i32 {
    guard(|| {
        if out_ratio.is_null() {
            return PX_NULL_ARGUMENT;
        }
        let model = proxops::eval::EnergyModel {
            expert_time_s,
            expert_tdp_w,
            model_time_s,
            model_tdp_w,
        };
        if model.validate().is_err() {
            return PX_BAD_CONFIG;
        }
        unsafe { *out_ratio = proxops::eval::energy_ratio(&model) };
        PX_OK
    })
}
