/* C ABI for externally provided frozen encoders.
 *
 * A plugin is a shared object named libunadapt-<name>.so found on
 * UNADAPT_PLUGIN_PATH (colon separated). All arrays are row-major doubles;
 * functions return 0 on success. Visual plugins implement tokenize, encode
 * and backward; text plugins implement encode_text. Every plugin exports
 * int unadapt_plugin_info(unadapt_plugin_desc*).
 */
#ifndef UNADAPT_PLUGIN_ABI_H
#define UNADAPT_PLUGIN_ABI_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define UNADAPT_PLUGIN_ABI_VERSION 1

enum unadapt_modality { UNADAPT_TEXT = 0, UNADAPT_VISUAL = 1 };

typedef struct unadapt_plugin_desc {
  uint32_t abi_version;
  const char* name;
  int32_t modality;
  uint32_t embed_dim;
  uint32_t hidden_size;
  uint32_t num_tokens;
  uint32_t channels;
  uint32_t height;
  uint32_t width;
  int32_t supports_prompt_injection;
  int32_t supports_gradient_to_input;
} unadapt_plugin_desc;

typedef int (*unadapt_info_fn)(unadapt_plugin_desc* out);

/* text -> embed_dim values */
typedef int (*unadapt_encode_text_fn)(const char* text, double* embedding);

/* (channels x height x width) pixels -> (num_tokens x hidden_size) tokens */
typedef int (*unadapt_tokenize_fn)(const double* pixels, double* tokens);

/* tokens (+ optional hidden_size x num_tokens prompt, additive) -> embedding */
typedef int (*unadapt_encode_tokens_fn)(const double* tokens, const double* prompt, double* embedding);

/* vector-Jacobian product; grad_prompt / grad_tokens may be NULL */
typedef int (*unadapt_backward_fn)(const double* tokens, const double* prompt,
                                   const double* grad_embedding, double* grad_prompt,
                                   double* grad_tokens);

#ifdef __cplusplus
}
#endif

#endif
