#ifndef RCLA_H
#define RCLA_H

/* Generated by cbindgen from rcla-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum RclaStatus {
  RclaStatus_Ok = 0,
  RclaStatus_NullArgument = 1,
  RclaStatus_InvalidArgument = 2,
  RclaStatus_Io = 3,
  RclaStatus_Runtime = 4,
} RclaStatus;

// A loaded model (f32 weights). Immutable; safe to share across sessions.
typedef struct RclaModel RclaModel;

// One generation stream: a model reference plus its KV cache.
typedef struct RclaSession RclaSession;

// A depth-wise sharing strategy.
typedef struct RclaStrategy RclaStrategy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent error on this thread. Never null; empty when
// no error has occurred. The pointer is invalidated by the next failure.
const char *rcla_last_error(void);

// Full-retention KV bytes per token:
// `2 * n_layers * n_kv_heads * head_dim * bytes_per_value`.
//
// # Safety
// `out_bytes` must be null or point to writable memory.
enum RclaStatus rcla_per_token_footprint(uint32_t n_layers,
                                         uint32_t n_kv_heads,
                                         uint32_t head_dim,
                                         uint32_t bytes_per_value,
                                         uint64_t *out_bytes);

// Retain every `k`-th layer of `n_layers`.
//
// # Safety
// `out_strategy` must be null or point to writable memory.
enum RclaStatus rcla_strategy_every_k(uint32_t n_layers,
                                      uint32_t k,
                                      struct RclaStrategy **out_strategy);

// Parse a strategy from a JSON array of retained indices, e.g. `[0,4,8]`.
//
// # Safety
// `json` must be a valid NUL-terminated string.
enum RclaStatus rcla_strategy_from_json(const char *json,
                                        uint32_t n_layers,
                                        struct RclaStrategy **out_strategy);

// Nearest retained layer at or below `layer`.
//
// # Safety
// `strategy` must be a live pointer from a strategy constructor.
enum RclaStatus rcla_strategy_map_source(const struct RclaStrategy *strategy,
                                         uint32_t layer,
                                         uint32_t *out_source);

// Number of retained (leader) layers.
//
// # Safety
// `strategy` must be a live pointer from a strategy constructor.
enum RclaStatus rcla_strategy_retained_count(const struct RclaStrategy *strategy,
                                             uint32_t *out_count);

// Total cache bytes for `seq_len` tokens under this strategy.
//
// # Safety
// `strategy` must be a live pointer from a strategy constructor.
enum RclaStatus rcla_strategy_footprint(const struct RclaStrategy *strategy,
                                        uint32_t n_kv_heads,
                                        uint32_t head_dim,
                                        uint32_t bytes_per_value,
                                        uint64_t seq_len,
                                        uint64_t *out_bytes);

// # Safety
// `strategy` must come from a strategy constructor and not be freed twice.
void rcla_strategy_free(struct RclaStrategy *strategy);

// Load a checkpoint file.
//
// # Safety
// `path` must be a valid NUL-terminated string.
enum RclaStatus rcla_model_load(const char *path, struct RclaModel **out_model);

// Model dimensions, for sizing buffers on the caller's side. Out params may
// be null if not wanted.
//
// # Safety
// `model` must be a live pointer from [`rcla_model_load`].
enum RclaStatus rcla_model_dims(const struct RclaModel *model,
                                uint32_t *out_n_layers,
                                uint32_t *out_vocab_size,
                                uint32_t *out_max_seq_len);

// # Safety
// `model` must come from [`rcla_model_load`] and not be freed twice.
void rcla_model_free(struct RclaModel *model);

// Create a generation session with its own KV cache. The session keeps the
// model alive; freeing the model handle first is fine.
//
// # Safety
// `model` and `strategy` must be live pointers from their constructors.
enum RclaStatus rcla_session_new(const struct RclaModel *model,
                                 const struct RclaStrategy *strategy,
                                 struct RclaSession **out_session);

// Process the prompt, populating the cache. Writes the greedy next token to
// `out_next_token`.
//
// # Safety
// `session` must be live; `tokens` must point to `n_tokens` readable u32s.
enum RclaStatus rcla_session_prefill(struct RclaSession *session,
                                     const uint32_t *tokens,
                                     size_t n_tokens,
                                     uint32_t *out_next_token);

// Append one token and write the greedy next token.
//
// # Safety
// `session` must be live and prefilled.
enum RclaStatus rcla_session_decode(struct RclaSession *session,
                                    uint32_t token,
                                    uint32_t *out_next_token);

// Copy the logits of the most recent prefill/decode into `out_logits`.
//
// # Safety
// `session` must be live; `out_logits` must hold `buf_len >= vocab` floats.
enum RclaStatus rcla_session_logits(const struct RclaSession *session,
                                    float *out_logits,
                                    size_t buf_len);

// Prefill plus greedy decoding in one call. Generated tokens (stopping after
// `eos`) land in `out_tokens`; their count in `out_written`.
//
// # Safety
// Pointer arguments must be live; `out_tokens` must hold `max_new` u32s.
enum RclaStatus rcla_session_generate(struct RclaSession *session,
                                      const uint32_t *prompt,
                                      size_t n_prompt,
                                      size_t max_new,
                                      uint32_t eos,
                                      uint32_t *out_tokens,
                                      size_t *out_written);

// Exact logical cache bytes currently held by this session.
//
// # Safety
// `session` must be live.
enum RclaStatus rcla_session_cache_bytes(const struct RclaSession *session, uint64_t *out_bytes);

// Tokens currently cached.
//
// # Safety
// `session` must be live.
enum RclaStatus rcla_session_seq_len(const struct RclaSession *session, uint64_t *out_len);

// # Safety
// `session` must come from [`rcla_session_new`] and not be freed twice.
void rcla_session_free(struct RclaSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RCLA_H */
