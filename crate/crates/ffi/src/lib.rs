//! C ABI for loading scenes and embedding sidecars, running pairwise
//! association and reading the results back.
//!
//! Every fallible call returns an [`MvaStatus`]; on failure the message is
//! available from [`mva_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use mvassoc::association::{associate_scene, LambdaMode, PairRecord, SceneAssociationRecord, ScorerConfig, ScorerMode};
use mvassoc::scene::{decode_embeddings, load_embeddings, load_scene, parse_scene, EmbeddingTable, Scene};
use mvassoc::synth::{generate_scene, SimConfig};
use mvassoc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Schema = 4,
    InvalidScene = 5,
    Embedding = 6,
    Geometry = 7,
    InvalidArgument = 8,
    OutOfRange = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvaScorerMode {
    Appearance = 0,
    AsnetFusion = 1,
    Vbow = 2,
    Homography = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvaScorerConfig {
    pub mode: MvaScorerMode,
    pub use_epipolar: bool,
    pub epipolar_weight: f64,
    pub threshold: f64,
    /// Use the raw cosine as the fusion weight instead of clamping to [0, 1].
    pub raw_lambda: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvaMatch {
    pub row: size_t,
    pub col: size_t,
    pub distance: f64,
}

pub struct MvaScene {
    scene: Scene,
}

pub struct MvaEmbeddings {
    table: EmbeddingTable,
}

pub struct MvaAssociation {
    record: SceneAssociationRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MvaStatus {
    match err {
        Error::Io { .. } => MvaStatus::Io,
        Error::Schema(_) | Error::Sidecar(_) => MvaStatus::Schema,
        Error::InvalidCamera { .. }
        | Error::InvalidBox { .. }
        | Error::DuplicateInstance { .. }
        | Error::InvalidScene(_)
        | Error::GroundTruthMismatch(_) => MvaStatus::InvalidScene,
        Error::DanglingEmbedding { .. }
        | Error::MissingEmbedding { .. }
        | Error::DimensionMismatch { .. }
        | Error::ZeroVector
        | Error::NegativeComponent(_) => MvaStatus::Embedding,
        Error::BehindCamera { .. }
        | Error::ZeroBaseline(..)
        | Error::EpipoleDegeneracy
        | Error::DegeneratePlane(_) => MvaStatus::Geometry,
        _ => MvaStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (MvaStatus, String)>) -> MvaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MvaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MvaStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (MvaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MvaStatus, String) {
    (MvaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MvaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (MvaStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MvaStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (MvaStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn mva_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_scene_load(path: *const c_char, out: *mut *mut MvaScene) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = load_scene(str_arg(path, "path")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MvaScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_scene_from_json(json: *const c_char, out: *mut *mut MvaScene) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = parse_scene(str_arg(json, "json")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MvaScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library and not be freed yet; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mva_scene_free(scene: *mut MvaScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_scene_view_count(scene: *const MvaScene, out: *mut size_t) -> MvaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(scene, "scene")?.scene.views.len();
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_scene_instance_count(scene: *const MvaScene, out: *mut size_t) -> MvaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(scene, "scene")?.scene.instance_count();
        Ok(())
    })
}

/// Loads a sidecar and checks every key against `scene`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `scene` a live handle and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_embeddings_load(
    path: *const c_char,
    scene: *const MvaScene,
    out: *mut *mut MvaEmbeddings,
) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = ref_arg(scene, "scene")?;
        let table = load_embeddings(str_arg(path, "path")?, &scene.scene).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MvaEmbeddings { table }));
        Ok(())
    })
}

/// Decodes sidecar bytes already in memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_embeddings_decode(bytes: *const u8, len: size_t, out: *mut *mut MvaEmbeddings) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let table = decode_embeddings(std::slice::from_raw_parts(bytes, len)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MvaEmbeddings { table }));
        Ok(())
    })
}

/// # Safety
/// `embeddings` must come from this library and not be freed yet; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mva_embeddings_free(embeddings: *mut MvaEmbeddings) {
    if !embeddings.is_null() {
        drop(Box::from_raw(embeddings));
    }
}

/// # Safety
/// `embeddings` must be a live handle; `count` and `dim` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mva_embeddings_shape(
    embeddings: *const MvaEmbeddings,
    count: *mut size_t,
    dim: *mut size_t,
) -> MvaStatus {
    guard(|| {
        let t = &ref_arg(embeddings, "embeddings")?.table;
        *out_arg(count, "count")? = t.len();
        *out_arg(dim, "dim")? = t.dim();
        Ok(())
    })
}

/// Generates a synthetic scene with oracle embeddings using default settings.
///
/// # Safety
/// `scene` and `embeddings` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mva_synth_generate(
    seed: u64,
    noise_sigma: f64,
    scene: *mut *mut MvaScene,
    embeddings: *mut *mut MvaEmbeddings,
) -> MvaStatus {
    guard(|| {
        let scene_out = out_arg(scene, "scene")?;
        let emb_out = out_arg(embeddings, "embeddings")?;
        let config = SimConfig {
            seed,
            embedding_noise_sigma: noise_sigma,
            ..SimConfig::default()
        };
        let (s, _, e) = generate_scene(&config).map_err(lib_err)?;
        *scene_out = Box::into_raw(Box::new(MvaScene { scene: s }));
        *emb_out = Box::into_raw(Box::new(MvaEmbeddings { table: e }));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mva_scorer_config_default() -> MvaScorerConfig {
    let d = ScorerConfig::default();
    MvaScorerConfig {
        mode: MvaScorerMode::Appearance,
        use_epipolar: d.use_epipolar,
        epipolar_weight: d.epipolar_weight,
        threshold: d.threshold,
        raw_lambda: false,
    }
}

fn scorer_config(c: &MvaScorerConfig) -> ScorerConfig {
    ScorerConfig {
        mode: match c.mode {
            MvaScorerMode::Appearance => ScorerMode::AppearanceOnly,
            MvaScorerMode::AsnetFusion => ScorerMode::AsnetFusion,
            MvaScorerMode::Vbow => ScorerMode::Vbow,
            MvaScorerMode::Homography => ScorerMode::Homography,
        },
        use_epipolar: c.use_epipolar,
        epipolar_weight: c.epipolar_weight,
        threshold: c.threshold,
        lambda_mode: if c.raw_lambda { LambdaMode::Raw } else { LambdaMode::Clamped },
        ..ScorerConfig::default()
    }
}

/// Associates every view pair of `scene`. `embeddings` may be null only in
/// homography mode.
///
/// # Safety
/// Handles must be live, `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mva_associate(
    scene: *const MvaScene,
    embeddings: *const MvaEmbeddings,
    config: *const MvaScorerConfig,
    out: *mut *mut MvaAssociation,
) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let scene = &ref_arg(scene, "scene")?.scene;
        let config = scorer_config(ref_arg(config, "config")?);
        let empty;
        let table = match embeddings.as_ref() {
            Some(e) => &e.table,
            None if config.mode == ScorerMode::Homography => {
                empty = EmbeddingTable::new(1).map_err(lib_err)?;
                &empty
            }
            None => return Err(null("embeddings")),
        };
        let assoc = associate_scene(scene, table, &config).map_err(lib_err)?;
        let record = SceneAssociationRecord::new(&scene.scene_id, &assoc, true);
        *out = Box::into_raw(Box::new(MvaAssociation { record }));
        Ok(())
    })
}

/// # Safety
/// `association` must come from this library and not be freed yet; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mva_association_free(association: *mut MvaAssociation) {
    if !association.is_null() {
        drop(Box::from_raw(association));
    }
}

/// # Safety
/// `association` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_association_pair_count(association: *const MvaAssociation, out: *mut size_t) -> MvaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(association, "association")?.record.pairs.len();
        Ok(())
    })
}

unsafe fn pair_at<'a>(association: *const MvaAssociation, index: size_t) -> Result<&'a PairRecord, (MvaStatus, String)> {
    let pairs = &ref_arg(association, "association")?.record.pairs;
    pairs.get(index).ok_or_else(|| {
        (
            MvaStatus::OutOfRange,
            format!("pair index {index} out of range for {} pairs", pairs.len()),
        )
    })
}

/// Camera ids of pair `index`; pairs are ordered by `(low id, high id)`.
///
/// # Safety
/// `association` must be a live handle; `camera_a` and `camera_b` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mva_association_pair_cameras(
    association: *const MvaAssociation,
    index: size_t,
    camera_a: *mut u32,
    camera_b: *mut u32,
) -> MvaStatus {
    guard(|| {
        let pair = pair_at(association, index)?;
        *out_arg(camera_a, "camera_a")? = pair.cameras[0];
        *out_arg(camera_b, "camera_b")? = pair.cameras[1];
        Ok(())
    })
}

/// # Safety
/// `association` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_association_match_count(
    association: *const MvaAssociation,
    index: size_t,
    out: *mut size_t,
) -> MvaStatus {
    guard(|| {
        *out_arg(out, "out")? = pair_at(association, index)?.matches.len();
        Ok(())
    })
}

/// Copies up to `capacity` matches of pair `index` into `buffer`; `written`
/// receives the number copied.
///
/// # Safety
/// `buffer` must have room for `capacity` entries (it may be null when
/// `capacity` is 0); `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_association_matches(
    association: *const MvaAssociation,
    index: size_t,
    buffer: *mut MvaMatch,
    capacity: size_t,
    written: *mut size_t,
) -> MvaStatus {
    guard(|| {
        let written = out_arg(written, "written")?;
        let pair = pair_at(association, index)?;
        let n = pair.matches.len().min(capacity);
        if n > 0 && buffer.is_null() {
            return Err(null("buffer"));
        }
        for (k, &(row, col, distance)) in pair.matches.iter().take(n).enumerate() {
            *buffer.add(k) = MvaMatch { row, col, distance };
        }
        *written = n;
        Ok(())
    })
}

/// Association output JSON; release with [`mva_string_free`].
///
/// # Safety
/// `association` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mva_association_to_json(association: *const MvaAssociation, out: *mut *mut c_char) -> MvaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = mvassoc::association::scene_association_to_json(&ref_arg(association, "association")?.record);
        *out = CString::new(text)
            .map_err(|e| (MvaStatus::Internal, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed yet; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mva_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
