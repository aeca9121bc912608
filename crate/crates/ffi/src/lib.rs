//! C ABI for the core library: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! Ownership rules: every `*_new`/`*_load` has a matching `*_free`; handles
//! are not thread-safe unless stated; strings returned by
//! [`rcla_last_error`] stay valid until the next failing call on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::sync::Arc;

use rcla_core::cache::{decode_step, greedy_generate, prefill, CacheStore};
use rcla_core::model::{load_checkpoint, Model, ModelConfig};
use rcla_core::routing::SharingStrategy;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RclaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Runtime = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: RclaStatus, message: impl std::fmt::Display) -> RclaStatus {
    let text = CString::new(message.to_string()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
    status
}

/// Message for the most recent error on this thread. Never null; empty when
/// no error has occurred. The pointer is invalidated by the next failure.
#[no_mangle]
pub extern "C" fn rcla_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ── Opaque handles ──────────────────────────────────────────────────────────

/// A loaded model (f32 weights). Immutable; safe to share across sessions.
pub struct RclaModel {
    inner: Arc<Model<f32>>,
}

/// A depth-wise sharing strategy.
pub struct RclaStrategy {
    inner: SharingStrategy,
}

/// One generation stream: a model reference plus its KV cache.
pub struct RclaSession {
    model: Arc<Model<f32>>,
    store: CacheStore<f32>,
    last_logits: Vec<f32>,
}

// ── Footprint accounting ────────────────────────────────────────────────────

/// Full-retention KV bytes per token:
/// `2 * n_layers * n_kv_heads * head_dim * bytes_per_value`.
///
/// # Safety
/// `out_bytes` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn rcla_per_token_footprint(
    n_layers: u32,
    n_kv_heads: u32,
    head_dim: u32,
    bytes_per_value: u32,
    out_bytes: *mut u64,
) -> RclaStatus {
    if out_bytes.is_null() {
        return fail(RclaStatus::NullArgument, "out_bytes is null");
    }
    if n_layers == 0 || n_kv_heads == 0 || head_dim == 0 {
        return fail(RclaStatus::InvalidArgument, "all extents must be positive");
    }
    if bytes_per_value != 2 && bytes_per_value != 4 {
        return fail(RclaStatus::InvalidArgument, "bytes_per_value must be 2 or 4");
    }
    let bytes = 2 * u64::from(n_layers)
        * u64::from(n_kv_heads)
        * u64::from(head_dim)
        * u64::from(bytes_per_value);
    *out_bytes = bytes;
    RclaStatus::Ok
}

// ── Strategies ──────────────────────────────────────────────────────────────

/// Retain every `k`-th layer of `n_layers`.
///
/// # Safety
/// `out_strategy` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_every_k(
    n_layers: u32,
    k: u32,
    out_strategy: *mut *mut RclaStrategy,
) -> RclaStatus {
    if out_strategy.is_null() {
        return fail(RclaStatus::NullArgument, "out_strategy is null");
    }
    match SharingStrategy::keep_every_k(n_layers as usize, k as usize) {
        Ok(inner) => {
            *out_strategy = Box::into_raw(Box::new(RclaStrategy { inner }));
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::InvalidArgument, e),
    }
}

/// Parse a strategy from a JSON array of retained indices, e.g. `[0,4,8]`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_from_json(
    json: *const c_char,
    n_layers: u32,
    out_strategy: *mut *mut RclaStrategy,
) -> RclaStatus {
    if json.is_null() || out_strategy.is_null() {
        return fail(RclaStatus::NullArgument, "json or out_strategy is null");
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => return fail(RclaStatus::InvalidArgument, "json is not UTF-8"),
    };
    match SharingStrategy::from_json(text, n_layers as usize) {
        Ok(inner) => {
            *out_strategy = Box::into_raw(Box::new(RclaStrategy { inner }));
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::InvalidArgument, e),
    }
}

/// Nearest retained layer at or below `layer`.
///
/// # Safety
/// `strategy` must be a live pointer from a strategy constructor.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_map_source(
    strategy: *const RclaStrategy,
    layer: u32,
    out_source: *mut u32,
) -> RclaStatus {
    if strategy.is_null() || out_source.is_null() {
        return fail(RclaStatus::NullArgument, "strategy or out_source is null");
    }
    let strategy_ref = &*strategy;
    let s = &strategy_ref.inner;
    if layer as usize >= s.n_layers() {
        return fail(RclaStatus::InvalidArgument, "layer out of range");
    }
    *out_source = s.map_source(layer as usize) as u32;
    RclaStatus::Ok
}

/// Number of retained (leader) layers.
///
/// # Safety
/// `strategy` must be a live pointer from a strategy constructor.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_retained_count(
    strategy: *const RclaStrategy,
    out_count: *mut u32,
) -> RclaStatus {
    if strategy.is_null() || out_count.is_null() {
        return fail(RclaStatus::NullArgument, "strategy or out_count is null");
    }
    let strategy_ref = &*strategy;
    *out_count = strategy_ref.inner.retained_count() as u32;
    RclaStatus::Ok
}

/// Total cache bytes for `seq_len` tokens under this strategy.
///
/// # Safety
/// `strategy` must be a live pointer from a strategy constructor.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_footprint(
    strategy: *const RclaStrategy,
    n_kv_heads: u32,
    head_dim: u32,
    bytes_per_value: u32,
    seq_len: u64,
    out_bytes: *mut u64,
) -> RclaStatus {
    if strategy.is_null() || out_bytes.is_null() {
        return fail(RclaStatus::NullArgument, "strategy or out_bytes is null");
    }
    if bytes_per_value != 2 && bytes_per_value != 4 {
        return fail(RclaStatus::InvalidArgument, "bytes_per_value must be 2 or 4");
    }
    let per_layer_token =
        2 * u64::from(n_kv_heads) * u64::from(head_dim) * u64::from(bytes_per_value);
    let strategy_ref = &*strategy;
    *out_bytes = strategy_ref.inner.retained_count() as u64 * seq_len * per_layer_token;
    RclaStatus::Ok
}

/// # Safety
/// `strategy` must come from a strategy constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rcla_strategy_free(strategy: *mut RclaStrategy) {
    if !strategy.is_null() {
        drop(Box::from_raw(strategy));
    }
}

// ── Models ──────────────────────────────────────────────────────────────────

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rcla_model_load(
    path: *const c_char,
    out_model: *mut *mut RclaModel,
) -> RclaStatus {
    if path.is_null() || out_model.is_null() {
        return fail(RclaStatus::NullArgument, "path or out_model is null");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => PathBuf::from(p),
        Err(_) => return fail(RclaStatus::InvalidArgument, "path is not UTF-8"),
    };
    match load_checkpoint::<f32>(&path) {
        Ok((model, _)) => {
            *out_model = Box::into_raw(Box::new(RclaModel {
                inner: Arc::new(model),
            }));
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::Io, e),
    }
}

/// Model dimensions, for sizing buffers on the caller's side. Out params may
/// be null if not wanted.
///
/// # Safety
/// `model` must be a live pointer from [`rcla_model_load`].
#[no_mangle]
pub unsafe extern "C" fn rcla_model_dims(
    model: *const RclaModel,
    out_n_layers: *mut u32,
    out_vocab_size: *mut u32,
    out_max_seq_len: *mut u32,
) -> RclaStatus {
    if model.is_null() {
        return fail(RclaStatus::NullArgument, "model is null");
    }
    let model_ref = &*model;
    let cfg: ModelConfig = model_ref.inner.config;
    if !out_n_layers.is_null() {
        *out_n_layers = cfg.n_layers as u32;
    }
    if !out_vocab_size.is_null() {
        *out_vocab_size = cfg.vocab_size as u32;
    }
    if !out_max_seq_len.is_null() {
        *out_max_seq_len = cfg.max_seq_len as u32;
    }
    RclaStatus::Ok
}

/// # Safety
/// `model` must come from [`rcla_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rcla_model_free(model: *mut RclaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ── Sessions ────────────────────────────────────────────────────────────────

/// Create a generation session with its own KV cache. The session keeps the
/// model alive; freeing the model handle first is fine.
///
/// # Safety
/// `model` and `strategy` must be live pointers from their constructors.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_new(
    model: *const RclaModel,
    strategy: *const RclaStrategy,
    out_session: *mut *mut RclaSession,
) -> RclaStatus {
    if model.is_null() || strategy.is_null() || out_session.is_null() {
        return fail(
            RclaStatus::NullArgument,
            "model, strategy, or out_session is null",
        );
    }
    let model = (&*model).inner.clone();
    let strategy_ref = &*strategy;
    match CacheStore::new(model.config, strategy_ref.inner.clone()) {
        Ok(store) => {
            *out_session = Box::into_raw(Box::new(RclaSession {
                model,
                store,
                last_logits: Vec::new(),
            }));
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::InvalidArgument, e),
    }
}

/// Process the prompt, populating the cache. Writes the greedy next token to
/// `out_next_token`.
///
/// # Safety
/// `session` must be live; `tokens` must point to `n_tokens` readable u32s.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_prefill(
    session: *mut RclaSession,
    tokens: *const u32,
    n_tokens: usize,
    out_next_token: *mut u32,
) -> RclaStatus {
    if session.is_null() || tokens.is_null() || out_next_token.is_null() {
        return fail(RclaStatus::NullArgument, "session, tokens, or out is null");
    }
    let sess = &mut *session;
    let prompt = std::slice::from_raw_parts(tokens, n_tokens);
    match prefill(&sess.model, prompt, &mut sess.store) {
        Ok(logits) => {
            *out_next_token = rcla_core::cache::argmax(&logits);
            sess.last_logits = logits;
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::Runtime, e),
    }
}

/// Append one token and write the greedy next token.
///
/// # Safety
/// `session` must be live and prefilled.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_decode(
    session: *mut RclaSession,
    token: u32,
    out_next_token: *mut u32,
) -> RclaStatus {
    if session.is_null() || out_next_token.is_null() {
        return fail(RclaStatus::NullArgument, "session or out is null");
    }
    let sess = &mut *session;
    match decode_step(&sess.model, token, &mut sess.store) {
        Ok(logits) => {
            *out_next_token = rcla_core::cache::argmax(&logits);
            sess.last_logits = logits;
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::Runtime, e),
    }
}

/// Copy the logits of the most recent prefill/decode into `out_logits`.
///
/// # Safety
/// `session` must be live; `out_logits` must hold `buf_len >= vocab` floats.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_logits(
    session: *const RclaSession,
    out_logits: *mut f32,
    buf_len: usize,
) -> RclaStatus {
    if session.is_null() || out_logits.is_null() {
        return fail(RclaStatus::NullArgument, "session or out_logits is null");
    }
    let sess = &*session;
    if sess.last_logits.is_empty() {
        return fail(RclaStatus::Runtime, "no logits yet; prefill first");
    }
    if buf_len < sess.last_logits.len() {
        return fail(RclaStatus::InvalidArgument, "out_logits buffer too small");
    }
    std::ptr::copy_nonoverlapping(sess.last_logits.as_ptr(), out_logits, sess.last_logits.len());
    RclaStatus::Ok
}

/// Prefill plus greedy decoding in one call. Generated tokens (stopping after
/// `eos`) land in `out_tokens`; their count in `out_written`.
///
/// # Safety
/// Pointer arguments must be live; `out_tokens` must hold `max_new` u32s.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_generate(
    session: *mut RclaSession,
    prompt: *const u32,
    n_prompt: usize,
    max_new: usize,
    eos: u32,
    out_tokens: *mut u32,
    out_written: *mut usize,
) -> RclaStatus {
    if session.is_null() || prompt.is_null() || out_tokens.is_null() || out_written.is_null() {
        return fail(RclaStatus::NullArgument, "null argument");
    }
    let sess = &mut *session;
    let prompt = std::slice::from_raw_parts(prompt, n_prompt);
    match greedy_generate(&sess.model, prompt, &mut sess.store, max_new, eos) {
        Ok(generated) => {
            std::ptr::copy_nonoverlapping(generated.as_ptr(), out_tokens, generated.len());
            *out_written = generated.len();
            RclaStatus::Ok
        }
        Err(e) => fail(RclaStatus::Runtime, e),
    }
}

/// Exact logical cache bytes currently held by this session.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_cache_bytes(
    session: *const RclaSession,
    out_bytes: *mut u64,
) -> RclaStatus {
    if session.is_null() || out_bytes.is_null() {
        return fail(RclaStatus::NullArgument, "session or out_bytes is null");
    }
    let session_ref = &*session;
    *out_bytes = session_ref.store.logical_bytes();
    RclaStatus::Ok
}

/// Tokens currently cached.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_seq_len(
    session: *const RclaSession,
    out_len: *mut u64,
) -> RclaStatus {
    if session.is_null() || out_len.is_null() {
        return fail(RclaStatus::NullArgument, "session or out_len is null");
    }
    let session_ref = &*session;
    *out_len = session_ref.store.seq_len() as u64;
    RclaStatus::Ok
}

/// # Safety
/// `session` must come from [`rcla_session_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rcla_session_free(session: *mut RclaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
