/* C interface for the seld pipeline.
 *
 * Mirrors crates/seld-ffi/src/lib.rs. Link against libseld_ffi
 * (cdylib or staticlib).
 *
 * Conventions:
 *   - every fallible call returns SeldStatus; SELD_STATUS_OK == 0
 *   - on failure, seld_last_error_message() describes the error
 *     (per-thread, valid until the next failing call on that thread)
 *   - buffers written through out-pointers are caller-owned and freed
 *     with the matching *_free function
 *   - a SeldModel handle must not be used from two threads at once
 */

#ifndef SELD_H
#define SELD_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum SeldStatus {
    SELD_STATUS_OK = 0,
    SELD_STATUS_NULL_ARGUMENT = 1,
    SELD_STATUS_INVALID_UTF8 = 2,
    SELD_STATUS_IO = 3,
    SELD_STATUS_BAD_FORMAT = 4,
    SELD_STATUS_BAD_CONFIG = 5,
    SELD_STATUS_SHAPE_MISMATCH = 6,
    SELD_STATUS_INTERNAL = 7,
} SeldStatus;

/* Opaque handle to a loaded checkpoint. */
typedef struct SeldModel SeldModel;

/* One detected event on the 100 ms frame grid. */
typedef struct SeldEvent {
    uint32_t frame;
    uint32_t class_idx;
    uint32_t track;
    double azimuth_deg;   /* [-180, 180) */
    double elevation_deg; /* [-90, 90] */
} SeldEvent;

/* Joint localization-and-detection metrics (1 s segments, 20 deg). */
typedef struct SeldScoresC {
    double error_rate;
    double f_score;
    double localization_error_deg;
    double localization_recall;
} SeldScoresC;

/* Static version string; do not free. */
const char *seld_version(void);

/* Message for this thread's most recent failure; do not free. */
const char *seld_last_error_message(void);

/* Loads a trained checkpoint (self-contained: weights + config + feature
 * statistics). Writes the handle to *out on success. */
SeldStatus seld_model_load(const char *ckpt_path, SeldModel **out);

void seld_model_free(SeldModel *model);

/* Runs inference over a 4-channel FOA wav (24 kHz, 16-bit PCM). On success
 * *out_events holds *out_len events (null when none); free with
 * seld_events_free. */
SeldStatus seld_model_infer_wav(SeldModel *model, const char *wav_path,
                                SeldEvent **out_events, size_t *out_len);

void seld_events_free(SeldEvent *events, size_t len);

/* Inference straight to a prediction CSV in the label format
 * (frame,class,track,azimuth,elevation). */
SeldStatus seld_model_infer_to_csv(SeldModel *model, const char *wav_path,
                                   const char *csv_path);

/* Scores a prediction CSV against a reference CSV over n_frames 100 ms
 * frames. */
SeldStatus seld_score_csv(const char *pred_csv, const char *ref_csv,
                          uint32_t n_frames, SeldScoresC *out);

#ifdef __cplusplus
}
#endif

#endif /* SELD_H */
