#include "geostyle/finetune.hpp"

#include <cmath>
#include <cstring>

#include "geostyle/errors.hpp"
#include "geostyle/eval.hpp"
#include "geostyle/rng.hpp"

namespace geostyle {

LrSchedule LrSchedule::fixed(double value) {
    LrSchedule s;
    s.kind = Kind::fixed;
    s.value = value;
    return s;
}

LrSchedule LrSchedule::decay(double hi, double lo) {
    LrSchedule s;
    s.kind = Kind::decay;
    s.hi = hi;
    s.lo = lo;
    return s;
}

double LrSchedule::at(int epoch, int total_epochs) const {
    if (kind == Kind::fixed) return value;
    if (total_epochs <= 1) return hi;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return hi * std::pow(lo / hi, t);
}

namespace {

// Seed-stream tags for the two per-epoch random decisions.
constexpr std::uint64_t kShuffleStream = 0x45504F43u;  // batch order
constexpr std::uint64_t kDropoutStream = 0x44524F50u;  // dropout masks

void validate_config(const FinetuneConfig& config) {
    if (config.epochs < 1) throw UsageError("finetune needs at least 1 epoch");
    if (config.batch_size < 1) throw UsageError("finetune needs a positive batch size");
    if (config.lr.kind == LrSchedule::Kind::fixed) {
        if (config.lr.value < 0.0) throw UsageError("negative learning rate");
    } else {
        if (!(config.lr.hi > 0.0) || !(config.lr.lo > 0.0)) {
            throw UsageError("geometric decay endpoints must be positive");
        }
    }
}

// Preprocessed pixels plus label for each referenced record.
struct Cached {
    std::vector<Tensor> pixels;
    std::vector<int> labels;
};

Cached cache_records(const Manifest& manifest, const std::vector<int>& indices,
                     const PreprocessOptions& prep, int num_classes, const char* which) {
    Cached c;
    c.pixels.reserve(indices.size());
    c.labels.reserve(indices.size());
    for (const int idx : indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= manifest.records.size()) {
            throw UsageError(std::string(which) + " record index " + std::to_string(idx) +
                             " out of range");
        }
        const ImageRecord& rec = manifest.records[static_cast<std::size_t>(idx)];
        if (rec.label < 0 || rec.label >= num_classes) {
            throw UsageError("record '" + rec.id + "' has label " + std::to_string(rec.label) +
                             " outside [0, " + std::to_string(num_classes) + ")");
        }
        c.pixels.push_back(preprocess(rec, prep));
        c.labels.push_back(rec.label);
    }
    return c;
}

// Stacks the selected cached images into an N x C x H x W batch.
Tensor stack_batch(const Cached& cache, const std::vector<int>& order, std::size_t begin,
                   std::size_t end) {
    const Tensor& first = cache.pixels[static_cast<std::size_t>(order[begin])];
    const int n = static_cast<int>(end - begin);
    Tensor batch({n, first.dim(0), first.dim(1), first.dim(2)});
    const std::int64_t stride = first.numel();
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor& img = cache.pixels[static_cast<std::size_t>(order[i])];
        std::memcpy(batch.data() + static_cast<std::int64_t>(i - begin) * stride, img.data(),
                    static_cast<std::size_t>(stride) * sizeof(float));
    }
    return batch;
}

int argmax_row(const Tensor& probs, int row) {
    const int k = probs.dim(1);
    int best = 0;
    for (int c = 1; c < k; ++c) {
        if (probs.at2(row, c) > probs.at2(row, best)) best = c;
    }
    return best;
}

// Eval-mode predictions over a cached set, batched for memory.
double validation_mca(const NetworkSpec& spec, const Weights& weights, const Cached& val,
                      int batch_size, int num_classes) {
    std::vector<int> preds;
    preds.reserve(val.pixels.size());
    std::vector<int> order(val.pixels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
        Tensor batch = stack_batch(val, order, begin, end);
        ForwardTrace<float> trace = forward_trace(spec, weights, batch, false);
        for (int r = 0; r < static_cast<int>(end - begin); ++r) {
            preds.push_back(argmax_row(trace.probs, r));
        }
    }
    return mean_class_accuracy(confusion(preds, val.labels, num_classes)).mca;
}

}  // namespace

FinetuneResult finetune(const NetworkSpec& spec, const Weights& start, const Manifest& manifest,
                        const std::vector<int>& train_indices,
                        const std::vector<int>& val_indices, const PreprocessOptions& prep,
                        const FinetuneConfig& config) {
    validate_config(config);
    if (train_indices.empty()) throw UsageError("finetune called with an empty training set");
    if (val_indices.empty()) throw UsageError("finetune called with an empty validation set");

    const Cached train = cache_records(manifest, train_indices, prep, spec.num_classes, "train");
    const Cached val = cache_records(manifest, val_indices, prep, spec.num_classes, "val");
    const std::size_t n = train.pixels.size();

    Weights weights = start;
    FinetuneResult result;
    result.best_val_mca = -1.0;

    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.lr.at(epoch, config.epochs);
        const float lr_f = static_cast<float>(lr);

        Rng shuffle_rng(mix_seed(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng dropout_rng(mix_seed(config.seed, kDropoutStream + static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(n, begin + static_cast<std::size_t>(config.batch_size));
            Tensor batch = stack_batch(train, order, begin, end);
            std::vector<int> labels;
            labels.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                labels.push_back(train.labels[static_cast<std::size_t>(order[i])]);
            }

            ForwardTrace<float> trace = forward_trace(spec, weights, batch, true, &dropout_rng);
            const float loss = cross_entropy_from_logits(trace.logits, labels);
            if (!std::isfinite(loss)) {
                throw NumericError("training diverged: loss " + std::to_string(loss) +
                                   " at epoch " + std::to_string(epoch) + ", batch starting at " +
                                   std::to_string(begin) + " (try a lower learning rate)");
            }
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);

            const Tensor grad_logits = cross_entropy_grad_from_logits(trace.logits, labels);
            Weights grads = backward_trace(spec, weights, trace, grad_logits);
            for (std::size_t l = 0; l < weights.layers.size(); ++l) {
                auto& p = weights.layers[l];
                if (!p.present()) continue;
                const auto& g = grads.layers[l];
                for (std::int64_t i = 0; i < p.weight.numel(); ++i) {
                    p.weight[i] -= lr_f * g.weight[i];
                }
                for (std::int64_t i = 0; i < p.bias.numel(); ++i) {
                    p.bias[i] -= lr_f * g.bias[i];
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(n);
        stats.val_mca = validation_mca(spec, weights, val, config.batch_size, spec.num_classes);
        result.history.push_back(stats);

        if (stats.val_mca > result.best_val_mca) {
            result.best_val_mca = stats.val_mca;
            result.best_epoch = epoch;
            result.weights = weights;
        }
    }
    return result;
}

int predict_class(const NetworkSpec& spec, const Weights& weights, const ImageRecord& record,
                  const PreprocessOptions& prep) {
    const Tensor image = preprocess(record, prep);
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
    std::memcpy(batch.data(), image.data(),
                static_cast<std::size_t>(image.numel()) * sizeof(float));
    ForwardTrace<float> trace = forward_trace(spec, weights, batch, false);
    return argmax_row(trace.probs, 0);
}

}  // namespace geostyle
