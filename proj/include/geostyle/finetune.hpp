#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geostyle/dataset.hpp"
#include "geostyle/network.hpp"

namespace geostyle {

// Per-epoch learning rate: a fixed value, or a geometric decay that walks
// from `hi` at the first epoch to `lo` at the last.
struct LrSchedule {
    enum class Kind { fixed, decay };
    Kind kind = Kind::fixed;
    double value = 0.01;          // fixed rate
    double hi = 1e-4, lo = 1e-8;  // decay endpoints

    static LrSchedule fixed(double value);
    static LrSchedule decay(double hi, double lo);

    // Rate for `epoch` in [0, total_epochs).
    double at(int epoch, int total_epochs) const;
};

struct FinetuneConfig {
    LrSchedule lr = LrSchedule::fixed(0.01);
    int epochs = 20;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // example-weighted mean cross-entropy
    double val_mca = 0.0;
};

struct FinetuneResult {
    Weights weights;  // snapshot of the best validation epoch
    int best_epoch = 0;
    double best_val_mca = 0.0;
    std::vector<EpochStats> history;
};

// Mini-batch SGD on softmax cross-entropy. Each epoch shuffles the training
// records with a seed-derived stream, walks them in batches, and then scores
// the validation set in eval mode; the returned weights are the snapshot of
// the epoch with the best validation mean class accuracy (earliest epoch on
// ties). Fixed seed and single-threaded execution make the whole run
// bit-reproducible. A non-finite training loss aborts with a diagnostic.
FinetuneResult finetune(const NetworkSpec& spec, const Weights& start, const Manifest& manifest,
                        const std::vector<int>& train_indices,
                        const std::vector<int>& val_indices, const PreprocessOptions& prep,
                        const FinetuneConfig& config);

// Eval-mode class prediction for one record: argmax of the softmax output,
// ties toward the lower class index.
int predict_class(const NetworkSpec& spec, const Weights& weights, const ImageRecord& record,
                  const PreprocessOptions& prep);

}  // namespace geostyle
