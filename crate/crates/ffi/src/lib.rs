//! C ABI over the core library. Every function returns an [`LnrfStatus`];
//! on failure the message is kept per thread and can be fetched with
//! [`lnrf_last_error`]. Objects are opaque handles released with their
//! matching `_free` function.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use latentnerf::field::{render_view, Camera, FieldParams};
use latentnerf::geometry::{
    load_obj, surface_query_with_beta, winding_exact, winding_fast, Bvh, Mesh, DEFAULT_LEAF_SIZE,
};
use latentnerf::guidance::{dirac_denoiser, make_schedule, sds_at, DiffusionSchedule, WeightMode};
use latentnerf::latent::LatentImage;
use latentnerf::math::Vec3;
use latentnerf::objectives::{sketch_loss_labeled, sparsity_loss};
use latentnerf::refine::LATENT_TO_RGB;
use latentnerf::trainer::train::load_checkpoint;
use latentnerf::trainer::{TrainConfig, Trainable};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LnrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Runtime = 4,
    Panic = 5,
}

/// Triangle mesh.
pub struct LnrfMesh(Mesh);
/// Bounding volume hierarchy with its own copy of the mesh.
pub struct LnrfBvh(Bvh);
/// Noise schedule.
pub struct LnrfSchedule(DiffusionSchedule);
/// Trained radiance field.
pub struct LnrfField(FieldParams);

/// Closest-point and winding query result.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LnrfSurfaceQuery {
    pub winding: f64,
    pub distance: f64,
    pub closest: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Fail(LnrfStatus, String);

impl Fail {
    fn invalid(m: impl Into<String>) -> Self {
        Fail(LnrfStatus::InvalidArgument, m.into())
    }
    fn null(what: &str) -> Self {
        Fail(LnrfStatus::NullPointer, format!("`{what}` is null"))
    }
}

impl From<latentnerf::Error> for Fail {
    fn from(e: latentnerf::Error) -> Self {
        let code = match &e {
            latentnerf::Error::Io { .. } => LnrfStatus::Io,
            latentnerf::Error::Geometry(latentnerf::error::GeometryError::Io { .. }) => {
                LnrfStatus::Io
            }
            latentnerf::Error::Checkpoint(latentnerf::error::CheckpointError::Io { .. }) => {
                LnrfStatus::Io
            }
            e if e.is_config() => LnrfStatus::InvalidArgument,
            _ => LnrfStatus::Runtime,
        };
        Fail(code, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LnrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LnrfStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LnrfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::null(what))
}

unsafe fn path<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail::invalid(format!("`{what}` is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn lnrf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Writes the 3x4 row-major latent-to-RGB matrix into `out12`.
#[no_mangle]
pub unsafe extern "C" fn lnrf_rgb_adapter_matrix(out12: *mut f64) -> LnrfStatus {
    guard(|| {
        slice_mut(out12, 12, "out12")?.copy_from_slice(&LATENT_TO_RGB);
        Ok(())
    })
}

/// Builds a mesh from `n_vertices` xyz triples and `n_triangles` index
/// triples.
#[no_mangle]
pub unsafe extern "C" fn lnrf_mesh_new(
    vertices: *const f64,
    n_vertices: usize,
    triangles: *const u32,
    n_triangles: usize,
    out_mesh: *mut *mut LnrfMesh,
) -> LnrfStatus {
    guard(|| {
        let o = out(out_mesh, "out_mesh")?;
        let v = slice(vertices, n_vertices * 3, "vertices")?;
        let t = slice(triangles, n_triangles * 3, "triangles")?;
        let verts = v
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let tris = t.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let m = Mesh::new(verts, tris, None).map_err(|e| Fail::invalid(e.to_string()))?;
        *o = Box::into_raw(Box::new(LnrfMesh(m)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_mesh_load_obj(
    path_utf8: *const c_char,
    out_mesh: *mut *mut LnrfMesh,
) -> LnrfStatus {
    guard(|| {
        let o = out(out_mesh, "out_mesh")?;
        let m = load_obj(path(path_utf8, "path")?)
            .map_err(|e| Fail::from(latentnerf::Error::from(e)))?;
        *o = Box::into_raw(Box::new(LnrfMesh(m)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_mesh_triangle_count(
    mesh: *const LnrfMesh,
    out_count: *mut usize,
) -> LnrfStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(mesh, "mesh")?.0.triangle_count();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_mesh_free(mesh: *mut LnrfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_bvh_new(
    mesh: *const LnrfMesh,
    out_bvh: *mut *mut LnrfBvh,
) -> LnrfStatus {
    guard(|| {
        let o = out(out_bvh, "out_bvh")?;
        let m = handle(mesh, "mesh")?;
        *o = Box::into_raw(Box::new(LnrfBvh(Bvh::build(&m.0, DEFAULT_LEAF_SIZE))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_bvh_free(bvh: *mut LnrfBvh) {
    if !bvh.is_null() {
        drop(Box::from_raw(bvh));
    }
}

/// Winding number at `point3`. `exact != 0` sums every triangle; otherwise
/// the hierarchical approximation with accuracy parameter `beta` is used.
#[no_mangle]
pub unsafe extern "C" fn lnrf_winding_number(
    bvh: *const LnrfBvh,
    point3: *const f64,
    exact: i32,
    beta: f64,
    out_winding: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let b = handle(bvh, "bvh")?;
        let p = slice(point3, 3, "point3")?;
        let o = out(out_winding, "out_winding")?;
        let p = Vec3::new(p[0], p[1], p[2]);
        *o = if exact != 0 {
            winding_exact(b.0.mesh(), p)
        } else {
            if !(beta > 0.0) {
                return Err(Fail::invalid("beta must be positive"));
            }
            winding_fast(&b.0, p, beta)
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_surface_query(
    bvh: *const LnrfBvh,
    point3: *const f64,
    beta: f64,
    out_query: *mut LnrfSurfaceQuery,
) -> LnrfStatus {
    guard(|| {
        let b = handle(bvh, "bvh")?;
        let p = slice(point3, 3, "point3")?;
        let o = out(out_query, "out_query")?;
        if !(beta > 0.0) {
            return Err(Fail::invalid("beta must be positive"));
        }
        let q = surface_query_with_beta(&b.0, Vec3::new(p[0], p[1], p[2]), beta);
        *o = LnrfSurfaceQuery {
            winding: q.winding,
            distance: q.distance,
            closest: q.closest_point.to_array(),
        };
        Ok(())
    })
}

/// Sketch occupancy loss over `n` points; `out_grad` receives dL/dalpha.
#[no_mangle]
pub unsafe extern "C" fn lnrf_sketch_loss(
    alphas: *const f64,
    labels: *const f64,
    distances: *const f64,
    n: usize,
    sigma_s: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let a = slice(alphas, n, "alphas")?;
        let l = slice(labels, n, "labels")?;
        let d = slice(distances, n, "distances")?;
        let ol = out(out_loss, "out_loss")?;
        let og = slice_mut(out_grad, n, "out_grad")?;
        let (v, g) =
            sketch_loss_labeled(a, l, d, sigma_s).map_err(|e| Fail::invalid(e.to_string()))?;
        *ol = v;
        og.copy_from_slice(&g);
        Ok(())
    })
}

/// Mean binary entropy of `n` blend weights and its gradient.
#[no_mangle]
pub unsafe extern "C" fn lnrf_sparsity_loss(
    w_blend: *const f64,
    n: usize,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let w = slice(w_blend, n, "w_blend")?;
        let ol = out(out_loss, "out_loss")?;
        let og = slice_mut(out_grad, n, "out_grad")?;
        let (v, g) = sparsity_loss(w);
        *ol = v;
        og.copy_from_slice(&g);
        Ok(())
    })
}

/// Linear-beta schedule. `weight_mode` 0 is uniform, 1 is `1 - alpha_bar`.
#[no_mangle]
pub unsafe extern "C" fn lnrf_schedule_new(
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    weight_mode: i32,
    out_schedule: *mut *mut LnrfSchedule,
) -> LnrfStatus {
    guard(|| {
        let o = out(out_schedule, "out_schedule")?;
        let mode = match weight_mode {
            0 => WeightMode::Uniform,
            1 => WeightMode::OneMinusAlphaBar,
            m => return Err(Fail::invalid(format!("unknown weight mode {m}"))),
        };
        let s = make_schedule(timesteps, beta_start, beta_end, mode)
            .map_err(|e| Fail::invalid(e.to_string()))?;
        *o = Box::into_raw(Box::new(LnrfSchedule(s)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_schedule_alpha_bar(
    schedule: *const LnrfSchedule,
    t: usize,
    out_alpha_bar: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let s = handle(schedule, "schedule")?;
        *out(out_alpha_bar, "out_alpha_bar")? =
            s.0.alpha_bar(t).map_err(|e| Fail::invalid(e.to_string()))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_schedule_free(schedule: *mut LnrfSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Score-distillation gradient of `x` against a Dirac denoiser centred on
/// `target`, for timestep `t` and noise `eps`. All images are
/// channel-major `c * h * w`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lnrf_dirac_sds(
    schedule: *const LnrfSchedule,
    x: *const f64,
    target: *const f64,
    eps: *const f64,
    c: usize,
    h: usize,
    w: usize,
    t: usize,
    out_grad: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let s = handle(schedule, "schedule")?;
        let n = c * h * w;
        if n == 0 {
            return Err(Fail::invalid("empty image"));
        }
        let img = |p, what| -> Result<LatentImage, Fail> {
            Ok(LatentImage::from_vec(c, h, w, slice(p, n, what)?.to_vec()))
        };
        let (x, target, eps) = (img(x, "x")?, img(target, "target")?, img(eps, "eps")?);
        let og = slice_mut(out_grad, n, "out_grad")?;
        let mut den = dirac_denoiser(target, &s.0);
        let r = sds_at(&mut den, &x, "", &s.0, t, eps).map_err(|e| Fail::invalid(e.to_string()))?;
        og.copy_from_slice(r.grad.data());
        Ok(())
    })
}

/// Loads a field checkpoint. `config_path` may be null for the default
/// architecture.
#[no_mangle]
pub unsafe extern "C" fn lnrf_field_load(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out_field: *mut *mut LnrfField,
) -> LnrfStatus {
    guard(|| {
        let o = out(out_field, "out_field")?;
        let ck_path = path(checkpoint_path, "checkpoint_path")?;
        let cfg = if config_path.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::load(path(config_path, "config_path")?)
                .map_err(|e| Fail::from(latentnerf::Error::from(e)))?
        };
        let ck = load_checkpoint(ck_path, &cfg)?;
        match ck.state {
            Trainable::Field(p) => {
                *o = Box::into_raw(Box::new(LnrfField(p)));
                Ok(())
            }
            Trainable::Texture(_) => Err(Fail::invalid("checkpoint holds a texture, not a field")),
        }
    })
}

/// Channels rendered by the field: 4 in latent mode, 3 in RGB mode.
#[no_mangle]
pub unsafe extern "C" fn lnrf_field_channels(
    field: *const LnrfField,
    out_channels: *mut usize,
) -> LnrfStatus {
    guard(|| {
        *out(out_channels, "out_channels")? = handle(field, "field")?.0.channels();
        Ok(())
    })
}

/// Renders an orbit view into `out_image` (`channels * resolution^2`
/// values, channel-major). Angles in radians.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lnrf_field_render(
    field: *const LnrfField,
    azimuth: f64,
    elevation: f64,
    radius: f64,
    fov_y: f64,
    resolution: usize,
    out_image: *mut f64,
    out_len: usize,
) -> LnrfStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let cam = Camera::orbit(azimuth, elevation, radius, fov_y, resolution);
        if resolution == 0 || !cam.is_valid() {
            return Err(Fail::invalid("invalid camera"));
        }
        let need = f.0.channels() * resolution * resolution;
        if out_len < need {
            return Err(Fail::invalid(format!(
                "output buffer holds {out_len} values, need {need}"
            )));
        }
        let img = render_view(&f.0, &cam, f.0.config().steps).latent;
        slice_mut(out_image, need, "out_image")?.copy_from_slice(img.data());
        Ok(())
    })
}

/// Point occupancy `1 - exp(-delta_ref * sigma)` at `point3`.
#[no_mangle]
pub unsafe extern "C" fn lnrf_field_occupancy(
    field: *const LnrfField,
    point3: *const f64,
    out_occupancy: *mut f64,
) -> LnrfStatus {
    guard(|| {
        let f = handle(field, "field")?;
        let p = slice(point3, 3, "point3")?;
        *out(out_occupancy, "out_occupancy")? = f.0.point_occupancy(Vec3::new(p[0], p[1], p[2]));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lnrf_field_free(field: *mut LnrfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}
