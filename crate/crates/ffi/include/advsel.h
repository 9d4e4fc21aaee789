#ifndef ADVSEL_H
#define ADVSEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AdvselMode {
  ADVSEL_MODE_STANDARD = 0,
  ADVSEL_MODE_ROBUST = 1,
  ADVSEL_MODE_DS_ROBUST = 2,
  ADVSEL_MODE_RANDOM_ROBUST = 3,
} AdvselMode;

typedef enum AdvselSelection {
  ADVSEL_SELECTION_ALL = 0,
  ADVSEL_SELECTION_TOP_LOSS = 1,
  ADVSEL_SELECTION_RANDOM = 2,
} AdvselSelection;

// Result of every fallible call.
typedef enum AdvselStatus {
  ADVSEL_STATUS_OK = 0,
  ADVSEL_STATUS_NULL_POINTER = 1,
  ADVSEL_STATUS_INVALID_ARGUMENT = 2,
  ADVSEL_STATUS_DIMENSION = 3,
  ADVSEL_STATUS_LABEL_OUT_OF_RANGE = 4,
  ADVSEL_STATUS_NON_FINITE = 5,
  ADVSEL_STATUS_IO = 6,
  ADVSEL_STATUS_FORMAT = 7,
  ADVSEL_STATUS_BUFFER_TOO_SMALL = 8,
  ADVSEL_STATUS_PANIC = 9,
} AdvselStatus;

// Opaque dataset handle.
typedef struct AdvselDataset AdvselDataset;

// Opaque classifier handle.
typedef struct AdvselModel AdvselModel;

typedef struct AdvselAttackConfig {
  double epsilon;
  double alpha;
  size_t steps;
  bool random_start;
  double clip_min;
  double clip_max;
} AdvselAttackConfig;

typedef struct AdvselTrainConfig {
  enum AdvselMode mode;
  // Clean samples per mini-batch (b').
  size_t batch_clean_size;
  size_t epochs;
  double lr;
  struct AdvselAttackConfig attack;
  struct AdvselAttackConfig eval_attack;
  enum AdvselSelection selection;
  // Fixed P_up, or the first epoch's P_up when `adaptive` is set.
  double pup;
  bool adaptive;
  double pup_floor;
  uint64_t seed;
  // Early-stopping patience in epochs; 0 disables it.
  size_t early_stop;
} AdvselTrainConfig;

// Per-epoch record passed to the training callback. Selection counts are
// sums over the epoch's batches.
typedef struct AdvselEpochMetrics {
  size_t epoch;
  double standard_accuracy;
  double robust_accuracy;
  double train_loss;
  double mean_batch_loss;
  double effective_pup;
  size_t batches;
  size_t rows_seen;
  size_t selected_clean;
  size_t selected_adversarial;
  size_t backward_passes;
} AdvselEpochMetrics;

// Called after every epoch; return `false` to stop training early.
typedef bool (*AdvselEpochCallback)(const struct AdvselEpochMetrics *metrics, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *advsel_last_error(void);

void advsel_clear_error(void);

// Library version as a static NUL-terminated string.
const char *advsel_version(void);

// Glorot-initialized ReLU classifier with `n_dims` layer widths (input first).
enum AdvselStatus advsel_model_new(const size_t *dims,
                                   size_t n_dims,
                                   uint64_t seed,
                                   struct AdvselModel **out);

void advsel_model_free(struct AdvselModel *model);

enum AdvselStatus advsel_model_clone(const struct AdvselModel *model, struct AdvselModel **out);

enum AdvselStatus advsel_model_load(const char *path, struct AdvselModel **out);

enum AdvselStatus advsel_model_save(const struct AdvselModel *model, const char *path);

// Input width, or 0 for a NULL handle.
size_t advsel_model_input_dim(const struct AdvselModel *model);

// Number of output classes, or 0 for a NULL handle.
size_t advsel_model_class_count(const struct AdvselModel *model);

// Logits for `rows` inputs into `out` (`rows * classes` values).
enum AdvselStatus advsel_model_forward(const struct AdvselModel *model,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       double *out,
                                       size_t out_len);

// Predicted class per row into `out` (`rows` values).
enum AdvselStatus advsel_model_predict(const struct AdvselModel *model,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       size_t *out,
                                       size_t out_len);

// Per-sample cross-entropy into `losses` (`rows` values) and each
// sample's input gradient into `grad` (`rows * cols` values).
enum AdvselStatus advsel_loss_and_input_grad(const struct AdvselModel *model,
                                             const double *x,
                                             size_t rows,
                                             size_t cols,
                                             const size_t *y,
                                             double *losses,
                                             double *grad);

// One SGD step on the mean loss of the rows listed in `selected`.
enum AdvselStatus advsel_model_sgd_step(struct AdvselModel *model,
                                        const double *x,
                                        size_t rows,
                                        size_t cols,
                                        const size_t *y,
                                        const size_t *selected,
                                        size_t n_selected,
                                        double lr);

// epsilon 8/255, alpha 0.01, 20 steps, no random start, range [0, 1].
struct AdvselAttackConfig advsel_attack_config_default(void);

// Single signed-gradient step of size `epsilon`, clamped to [0, 1].
enum AdvselStatus advsel_fgsm(const struct AdvselModel *model,
                              const double *x,
                              size_t rows,
                              size_t cols,
                              const size_t *y,
                              double epsilon,
                              double *out);

// Projected gradient ascent inside the l-infinity ball; `seed` drives the random start.
enum AdvselStatus advsel_pgd(const struct AdvselModel *model,
                             const double *x,
                             size_t rows,
                             size_t cols,
                             const size_t *y,
                             const struct AdvselAttackConfig *config,
                             uint64_t seed,
                             double *out);

// Per-row softmax cross-entropy of `logits` (`rows * classes`) into `out`.
enum AdvselStatus advsel_error_signal(const double *logits,
                                      size_t rows,
                                      size_t classes,
                                      const size_t *y,
                                      double *out);

// `max(1, ceil(pup * batch))`.
size_t advsel_selection_count(size_t batch, double pup);

// Indices of the `advsel_selection_count(n, pup)` largest losses, sorted
// ascending. Equal losses favour the lower index.
enum AdvselStatus advsel_select_top(const double *losses,
                                    size_t n,
                                    double pup,
                                    size_t *out,
                                    size_t out_len,
                                    size_t *out_count);

// Adaptive P_up step: `min(p_prev, max(floor, (1 - acc_prev) * p_prev))`.
double advsel_update_pup(double p_prev, double acc_prev, double floor);

enum AdvselStatus advsel_dataset_load_idx(const char *images,
                                          const char *labels,
                                          struct AdvselDataset **out);

enum AdvselStatus advsel_dataset_load_csv(const char *path,
                                          const char *label_column,
                                          struct AdvselDataset **out);

enum AdvselStatus advsel_dataset_load_cache(const char *path, struct AdvselDataset **out);

enum AdvselStatus advsel_dataset_save_cache(const struct AdvselDataset *dataset, const char *path);

// Two-class Gaussian blobs: coordinate 0 shifted by `strong`, the rest by `weak`.
enum AdvselStatus advsel_dataset_synth(uint64_t seed,
                                       size_t samples_per_class,
                                       size_t dims,
                                       double strong,
                                       double weak,
                                       double sigma,
                                       struct AdvselDataset **out);

// Dataset from caller-owned features (`rows * cols`, in [0, 1]) and labels.
enum AdvselStatus advsel_dataset_from_arrays(const double *features,
                                             size_t rows,
                                             size_t cols,
                                             const size_t *labels,
                                             size_t class_count,
                                             struct AdvselDataset **out);

void advsel_dataset_free(struct AdvselDataset *dataset);

size_t advsel_dataset_len(const struct AdvselDataset *dataset);

size_t advsel_dataset_dims(const struct AdvselDataset *dataset);

size_t advsel_dataset_class_count(const struct AdvselDataset *dataset);

// Borrowed row-major features (`len * dims`), valid while the handle lives.
const double *advsel_dataset_features(const struct AdvselDataset *dataset);

// Borrowed labels (`len` values), valid while the handle lives.
const size_t *advsel_dataset_labels(const struct AdvselDataset *dataset);

// Accuracy on `dataset`; robust accuracy under `attack` when it is not NULL.
enum AdvselStatus advsel_evaluate(const struct AdvselModel *model,
                                  const struct AdvselDataset *dataset,
                                  const struct AdvselAttackConfig *attack,
                                  double *out_accuracy);

// ds_robust, b' 128, 10 epochs, lr 0.1, top-loss selection at P_up 0.5.
struct AdvselTrainConfig advsel_train_config_default(void);

// Trains `model` in place on `train`, measuring accuracies on `eval`.
// `callback` may be NULL.
enum AdvselStatus advsel_train(struct AdvselModel *model,
                               const struct AdvselDataset *train,
                               const struct AdvselDataset *eval,
                               const struct AdvselTrainConfig *config,
                               AdvselEpochCallback callback,
                               void *user_data);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVSEL_H */
