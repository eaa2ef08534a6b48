//! C ABI over the `apialign` library.
//!
//! Every entry point returns an [`ApialignStatus`]; on failure the message
//! is available from [`apialign_last_error`] on the same thread. Objects
//! are opaque handles created by `*_load`/`apialign_align`/`apialign_query`
//! and released with the matching `*_free` function. Strings passed in must
//! be NUL-terminated UTF-8; strings handed out stay valid until the owning
//! handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use apialign::adversarial::AdvConfig;
use apialign::embedding::load_space;
use apialign::pipeline::{run_pipeline, PipelineConfig, Stages};
use apialign::query::{query_token, QueryOutcome, TargetIndex};
use apialign::refinement::{CombineMode, RefineConfig};
use apialign::seeding::{mine_signature_seeds, MappingMatrix, SeedDictionary};
use apialign::{EmbeddingSpace, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApialignStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Config = 6,
    InvalidInput = 7,
    /// Diverged or non-finite numbers during training.
    Numeric = 8,
    /// The query token is not in the source vocabulary.
    OutOfVocabulary = 9,
    IndexOutOfRange = 10,
    Panic = 11,
}

/// Candidate combination used by refinement.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApialignCombine {
    Intersection = 0,
    Union = 1,
    TopK = 2,
    Cosine = 3,
}

/// Stage bits for [`ApialignAlignOptions::stages`].
pub const APIALIGN_STAGE_SEED: u32 = 1;
pub const APIALIGN_STAGE_ADVERSARIAL: u32 = 2;
pub const APIALIGN_STAGE_REFINE: u32 = 4;

/// Alignment settings. Obtain defaults from
/// [`apialign_align_options_default`] and override fields as needed.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ApialignAlignOptions {
    /// Bitwise OR of `APIALIGN_STAGE_*`.
    pub stages: u32,
    pub adv_epochs: u32,
    pub adv_iterations: u32,
    pub batch_size: u32,
    pub disc_steps: u32,
    pub adv_learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub label_smoothing: f64,
    pub input_dropout: f64,
    /// Width of each hidden layer of the discriminator.
    pub hidden_width: u32,
    pub hidden_layers: u32,
    pub orthogonalize: f64,
    pub max_rank: u32,
    pub selection_k: u32,
    pub refine_top_k: u32,
    pub refine_threshold: f64,
    pub combine: ApialignCombine,
    pub mutual_nn: bool,
    pub refine_iters: u32,
    pub patience: u32,
    pub rng_seed: u64,
}

impl ApialignAlignOptions {
    fn to_config(self) -> Result<PipelineConfig, Error> {
        let stages = Stages::new(
            self.stages & APIALIGN_STAGE_SEED != 0,
            self.stages & APIALIGN_STAGE_ADVERSARIAL != 0,
            self.stages & APIALIGN_STAGE_REFINE != 0,
        );
        if stages.is_empty() || self.stages & !7 != 0 {
            return Err(Error::Config(format!("invalid stage bits {:#x}", self.stages)));
        }
        let mode = match self.combine {
            ApialignCombine::Intersection => CombineMode::Intersection,
            ApialignCombine::Union => CombineMode::Union,
            ApialignCombine::TopK => CombineMode::TopKOnly,
            ApialignCombine::Cosine => CombineMode::CosineOnly,
        };
        let cfg = PipelineConfig {
            stages,
            adversarial: AdvConfig {
                epochs: self.adv_epochs as usize,
                iterations_per_epoch: self.adv_iterations as usize,
                batch_size: self.batch_size as usize,
                disc_steps_per_map_step: self.disc_steps as usize,
                learning_rate: self.adv_learning_rate,
                momentum: self.momentum,
                lr_decay: self.lr_decay,
                label_smoothing: self.label_smoothing,
                input_dropout: self.input_dropout,
                hidden: vec![self.hidden_width as usize; self.hidden_layers as usize],
                orthogonalize: self.orthogonalize,
                max_rank: self.max_rank as usize,
                selection_k: self.selection_k as usize,
                rng_seed: self.rng_seed,
            },
            refine: RefineConfig {
                top_k: self.refine_top_k as usize,
                threshold: self.refine_threshold,
                mode,
                mutual_nn: self.mutual_nn,
                max_iters: self.refine_iters as usize,
                patience: self.patience as usize,
                selection_k: self.selection_k as usize,
            },
            rng_seed: self.rng_seed,
        };
        cfg.adversarial.validate()?;
        cfg.refine.validate()?;
        Ok(cfg)
    }
}

/// Embedding space plus its normalized search index.
pub struct ApialignSpace {
    space: EmbeddingSpace,
    index: TargetIndex,
    tokens: Vec<CString>,
}

pub struct ApialignMapping {
    mapping: MappingMatrix,
    stage: CString,
}

pub struct ApialignSeeds {
    seeds: SeedDictionary,
}

/// Ranked neighbors of one query.
pub struct ApialignResults {
    tokens: Vec<CString>,
    similarities: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ApialignStatus {
    match e {
        Error::Io { .. } => ApialignStatus::Io,
        Error::Format { .. } | Error::AmbiguousSignature { .. } => ApialignStatus::Format,
        Error::DimensionMismatch { .. } | Error::RowCountMismatch { .. } => ApialignStatus::DimensionMismatch,
        Error::Config(_) => ApialignStatus::Config,
        Error::Diverged { .. } | Error::NonFinite(_) | Error::ZeroVector => ApialignStatus::Numeric,
        _ => ApialignStatus::InvalidInput,
    }
}

struct Failure(ApialignStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard<F>(f: F) -> ApialignStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            ApialignStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            ApialignStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ApialignStatus::NullArgument, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ApialignStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn c_string(s: &str) -> CString {
    CString::new(s).unwrap_or_default()
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn apialign_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn apialign_status_string(status: ApialignStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ApialignStatus::Ok => c"ok",
        ApialignStatus::NullArgument => c"null argument",
        ApialignStatus::InvalidUtf8 => c"invalid UTF-8",
        ApialignStatus::Io => c"I/O error",
        ApialignStatus::Format => c"malformed input",
        ApialignStatus::DimensionMismatch => c"dimension mismatch",
        ApialignStatus::Config => c"invalid configuration",
        ApialignStatus::InvalidInput => c"invalid input",
        ApialignStatus::Numeric => c"numeric failure",
        ApialignStatus::OutOfVocabulary => c"out of vocabulary",
        ApialignStatus::IndexOutOfRange => c"index out of range",
        ApialignStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Loads an embedding file (and its `.freq` sidecar when present).
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_space_load(path: *const c_char, out: *mut *mut ApialignSpace) -> ApialignStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let space = load_space(Path::new(path))?;
        let tokens = space.vocab().tokens().iter().map(|t| c_string(t)).collect();
        let index = TargetIndex::new(&space);
        put(out, ApialignSpace { space, index, tokens });
        Ok(())
    })
}

/// # Safety
/// `space` must come from [`apialign_space_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_space_free(space: *mut ApialignSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of tokens; 0 for NULL.
///
/// # Safety
/// `space` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_space_len(space: *const ApialignSpace) -> usize {
    space.as_ref().map_or(0, |s| s.space.len())
}

/// Vector dimension; 0 for NULL.
///
/// # Safety
/// `space` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_space_dim(space: *const ApialignSpace) -> usize {
    space.as_ref().map_or(0, |s| s.space.dim())
}

/// Token at frequency rank `index`, or NULL when out of range.
///
/// # Safety
/// `space` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_space_token(space: *const ApialignSpace, index: usize) -> *const c_char {
    space
        .as_ref()
        .and_then(|s| s.tokens.get(index))
        .map_or(ptr::null(), |t| t.as_ptr())
}

/// Loads a mapping matrix file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_load(path: *const c_char, out: *mut *mut ApialignMapping) -> ApialignStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mapping = MappingMatrix::load(Path::new(str_arg(path, "path")?))?;
        let stage = c_string(&mapping.stage().to_string());
        put(out, ApialignMapping { mapping, stage });
        Ok(())
    })
}

/// # Safety
/// `mapping` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_save(mapping: *const ApialignMapping, path: *const c_char) -> ApialignStatus {
    guard(|| {
        let m = handle(mapping, "mapping")?;
        m.mapping.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `mapping` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_free(mapping: *mut ApialignMapping) {
    if !mapping.is_null() {
        drop(Box::from_raw(mapping));
    }
}

/// # Safety
/// `mapping` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_dim(mapping: *const ApialignMapping) -> usize {
    mapping.as_ref().map_or(0, |m| m.mapping.dim())
}

/// Pipeline stage that produced the mapping (`initial`, `seeded`,
/// `adversarial` or `refined`), or NULL.
///
/// # Safety
/// `mapping` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_stage(mapping: *const ApialignMapping) -> *const c_char {
    mapping.as_ref().map_or(ptr::null(), |m| m.stage.as_ptr())
}

/// Row-major copy of the `dim x dim` matrix into `buffer`, which must hold
/// `len >= dim * dim` doubles.
///
/// # Safety
/// `mapping` must be a live handle; `buffer` must be writable for `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn apialign_mapping_copy(
    mapping: *const ApialignMapping,
    buffer: *mut f64,
    len: usize,
) -> ApialignStatus {
    guard(|| {
        let m = handle(mapping, "mapping")?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let w = m.mapping.matrix();
        let d = w.nrows();
        if len < d * d {
            return Err(Failure(
                ApialignStatus::IndexOutOfRange,
                format!("buffer holds {len} values, need {}", d * d),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buffer, d * d);
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = w[(r, c)];
            }
        }
        Ok(())
    })
}

/// Loads a seed dictionary TSV.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_seeds_load(path: *const c_char, out: *mut *mut ApialignSeeds) -> ApialignStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let seeds = SeedDictionary::load(Path::new(str_arg(path, "path")?))?;
        put(out, ApialignSeeds { seeds });
        Ok(())
    })
}

/// Mines seed pairs whose `Class.method` suffixes match uniquely.
///
/// # Safety
/// `src` and `tgt` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_seeds_mine(
    src: *const ApialignSpace,
    tgt: *const ApialignSpace,
    out: *mut *mut ApialignSeeds,
) -> ApialignStatus {
    guard(|| {
        let (s, t) = (handle(src, "src")?, handle(tgt, "tgt")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let seeds = mine_signature_seeds(s.space.vocab(), t.space.vocab());
        put(out, ApialignSeeds { seeds });
        Ok(())
    })
}

/// # Safety
/// `seeds` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_seeds_len(seeds: *const ApialignSeeds) -> usize {
    seeds.as_ref().map_or(0, |s| s.seeds.len())
}

/// # Safety
/// `seeds` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn apialign_seeds_save(seeds: *const ApialignSeeds, path: *const c_char) -> ApialignStatus {
    guard(|| {
        let s = handle(seeds, "seeds")?;
        s.seeds.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `seeds` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_seeds_free(seeds: *mut ApialignSeeds) {
    if !seeds.is_null() {
        drop(Box::from_raw(seeds));
    }
}

/// Default settings: all three stages and the library defaults.
#[no_mangle]
pub extern "C" fn apialign_align_options_default() -> ApialignAlignOptions {
    let cfg = PipelineConfig::default();
    let (a, r) = (&cfg.adversarial, &cfg.refine);
    ApialignAlignOptions {
        stages: APIALIGN_STAGE_SEED | APIALIGN_STAGE_ADVERSARIAL | APIALIGN_STAGE_REFINE,
        adv_epochs: a.epochs as u32,
        adv_iterations: a.iterations_per_epoch as u32,
        batch_size: a.batch_size as u32,
        disc_steps: a.disc_steps_per_map_step as u32,
        adv_learning_rate: a.learning_rate,
        momentum: a.momentum,
        lr_decay: a.lr_decay,
        label_smoothing: a.label_smoothing,
        input_dropout: a.input_dropout,
        hidden_width: a.hidden.first().copied().unwrap_or(0) as u32,
        hidden_layers: a.hidden.len() as u32,
        orthogonalize: a.orthogonalize,
        max_rank: a.max_rank as u32,
        selection_k: a.selection_k as u32,
        refine_top_k: r.top_k as u32,
        refine_threshold: r.threshold,
        combine: ApialignCombine::Intersection,
        mutual_nn: r.mutual_nn,
        refine_iters: r.max_iters as u32,
        patience: r.patience as u32,
        rng_seed: cfg.rng_seed,
    }
}

/// Learns a source-to-target mapping. `seeds` may be NULL when the seeding
/// stage is not selected.
///
/// # Safety
/// `src` and `tgt` must be live handles, `seeds` a live handle or NULL,
/// `options` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_align(
    src: *const ApialignSpace,
    tgt: *const ApialignSpace,
    seeds: *const ApialignSeeds,
    options: *const ApialignAlignOptions,
    out: *mut *mut ApialignMapping,
) -> ApialignStatus {
    guard(|| {
        let (s, t) = (handle(src, "src")?, handle(tgt, "tgt")?);
        let opts = handle(options, "options")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = opts.to_config()?;
        let dict = seeds.as_ref().map(|d| &d.seeds);
        let result = run_pipeline(&s.space, &t.space, dict, &cfg)?;
        let stage = c_string(&result.mapping.stage().to_string());
        put(
            out,
            ApialignMapping {
                mapping: result.mapping,
                stage,
            },
        );
        Ok(())
    })
}

/// Maps `token` through `mapping` and retrieves its `k` nearest target
/// tokens. Pass a negative `threshold` to keep all neighbors. An unknown
/// token yields `APIALIGN_STATUS_OUT_OF_VOCABULARY`.
///
/// # Safety
/// Handles must be live, `token` a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apialign_query(
    mapping: *const ApialignMapping,
    src: *const ApialignSpace,
    tgt: *const ApialignSpace,
    token: *const c_char,
    k: usize,
    threshold: f64,
    out: *mut *mut ApialignResults,
) -> ApialignStatus {
    guard(|| {
        let m = handle(mapping, "mapping")?;
        let (s, t) = (handle(src, "src")?, handle(tgt, "tgt")?);
        let token = str_arg(token, "token")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let threshold = (threshold >= 0.0).then_some(threshold);
        match query_token(token, &m.mapping, &s.space, &t.index, k, threshold)? {
            QueryOutcome::OutOfVocabulary(q) => Err(Failure(
                ApialignStatus::OutOfVocabulary,
                format!("`{q}` is not in the source vocabulary"),
            )),
            QueryOutcome::Found(r) => {
                put(
                    out,
                    ApialignResults {
                        tokens: r.neighbors.iter().map(|n| c_string(&n.token)).collect(),
                        similarities: r.neighbors.iter().map(|n| n.similarity).collect(),
                    },
                );
                Ok(())
            }
        }
    })
}

/// # Safety
/// `results` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_results_len(results: *const ApialignResults) -> usize {
    results.as_ref().map_or(0, |r| r.tokens.len())
}

/// Target token at `rank` (0-based), or NULL when out of range.
///
/// # Safety
/// `results` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_results_token(results: *const ApialignResults, rank: usize) -> *const c_char {
    results
        .as_ref()
        .and_then(|r| r.tokens.get(rank))
        .map_or(ptr::null(), |t| t.as_ptr())
}

/// Cosine similarity at `rank`, or NaN when out of range.
///
/// # Safety
/// `results` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_results_similarity(results: *const ApialignResults, rank: usize) -> f64 {
    results
        .as_ref()
        .and_then(|r| r.similarities.get(rank).copied())
        .unwrap_or(f64::NAN)
}

/// # Safety
/// `results` must come from [`apialign_query`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apialign_results_free(results: *mut ApialignResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
