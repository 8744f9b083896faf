#ifndef CAPI_H
#define CAPI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CapiStatus {
  CAPI_STATUS_OK = 0,
  CAPI_STATUS_NULL_ARGUMENT = 1,
  CAPI_STATUS_INVALID_UTF8 = 2,
  CAPI_STATUS_IO = 3,
  CAPI_STATUS_PARSE = 4,
  CAPI_STATUS_EVALUATION = 5,
  CAPI_STATUS_REGISTRY = 6,
  CAPI_STATUS_OUT_OF_RANGE = 7,
  CAPI_STATUS_NOT_FOUND = 8,
  CAPI_STATUS_PANIC = 9,
} CapiStatus;

typedef enum CapiIcFormat {
  CAPI_IC_FORMAT_SCOREP_FILTER = 0,
  CAPI_IC_FORMAT_NATIVE = 1,
} CapiIcFormat;

typedef enum CapiEventKind {
  CAPI_EVENT_KIND_ENTRY = 0,
  CAPI_EVENT_KIND_EXIT = 1,
} CapiEventKind;

typedef struct CapiCallGraph CapiCallGraph;

typedef struct CapiIc CapiIc;

typedef struct CapiPipeline CapiPipeline;

typedef struct CapiRegistry CapiRegistry;

typedef struct CapiSelection CapiSelection;

typedef struct CapiPatchSummary {
  size_t patched;
  size_t not_found;
  size_t skipped_unresolved;
} CapiPatchSummary;

/**
 * Called for every event that passes a patched sled. May run on any thread.
 */
typedef void (*CapiEventCallback)(void *user_data,
                                  uint32_t id,
                                  enum CapiEventKind kind,
                                  uint64_t thread,
                                  uint64_t timestamp);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *capi_last_error(void);

void capi_string_free(char *s);

enum CapiStatus capi_pack_id(uint32_t object_id, uint32_t function_id, uint32_t *out);

enum CapiStatus capi_unpack_id(uint32_t id, uint8_t *object_id, uint32_t *function_id);

enum CapiStatus capi_callgraph_load(const char *path, struct CapiCallGraph **out);

enum CapiStatus capi_callgraph_from_json(const char *json, struct CapiCallGraph **out);

enum CapiStatus capi_callgraph_node_count(const struct CapiCallGraph *graph, size_t *out);

void capi_callgraph_free(struct CapiCallGraph *graph);

/**
 * Parses spec text. Imports resolve against `base_dir` (may be null) and
 * the directories in `CAPI_SPEC_PATH`.
 */
enum CapiStatus capi_spec_parse(const char *text, const char *base_dir, struct CapiPipeline **out);

enum CapiStatus capi_spec_load(const char *path, struct CapiPipeline **out);

void capi_pipeline_free(struct CapiPipeline *pipeline);

/**
 * Evaluates `pipeline` on `graph` (no inlining compensation).
 */
enum CapiStatus capi_select(const struct CapiCallGraph *graph,
                            const struct CapiPipeline *pipeline,
                            struct CapiSelection **out);

enum CapiStatus capi_selection_len(const struct CapiSelection *selection, size_t *out);

/**
 * Name at `index` in sorted order. Borrowed from the selection.
 */
enum CapiStatus capi_selection_name(const struct CapiSelection *selection,
                                    size_t index,
                                    const char **out);

enum CapiStatus capi_selection_contains(const struct CapiSelection *selection,
                                        const char *name,
                                        bool *out);

enum CapiStatus capi_selection_to_ic(const struct CapiSelection *selection, struct CapiIc **out);

void capi_selection_free(struct CapiSelection *selection);

/**
 * Loads an IC file; the format is detected from its content.
 */
enum CapiStatus capi_ic_load(const char *path, struct CapiIc **out);

enum CapiStatus capi_ic_parse(const char *text, struct CapiIc **out);

enum CapiStatus capi_ic_len(const struct CapiIc *ic, size_t *out);

/**
 * Serializes the IC. Free the result with `capi_string_free`.
 */
enum CapiStatus capi_ic_emit(const struct CapiIc *ic, enum CapiIcFormat format, char **out);

void capi_ic_free(struct CapiIc *ic);

/**
 * Registers every object of a layout file, main executable first.
 * Functions with fewer than `xray_threshold` statements get no sleds.
 */
enum CapiStatus capi_registry_load(const char *layout_path,
                                   uint64_t xray_threshold,
                                   struct CapiRegistry **out);

/**
 * Patches exactly the resolvable IC functions.
 */
enum CapiStatus capi_registry_apply_ic(struct CapiRegistry *registry,
                                       const struct CapiIc *ic,
                                       struct CapiPatchSummary *summary);

/**
 * Packed id of a resolvable function.
 */
enum CapiStatus capi_registry_resolve(const struct CapiRegistry *registry,
                                      const char *name,
                                      uint32_t *out);

/**
 * Installs `callback` as the handler; null removes it.
 */
enum CapiStatus capi_registry_set_handler(struct CapiRegistry *registry,
                                          CapiEventCallback callback,
                                          void *user_data);

/**
 * Runs the sled of function `id`. Unknown ids are counted and ignored.
 */
enum CapiStatus capi_registry_dispatch(const struct CapiRegistry *registry,
                                       uint32_t id,
                                       enum CapiEventKind kind,
                                       uint64_t thread,
                                       uint64_t timestamp);

void capi_registry_free(struct CapiRegistry *registry);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPI_H */
