#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geostyle/tensor.hpp"

namespace geostyle {

// Pixel-coordinate box, inclusive-exclusive on both axes.
struct BBox {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
};

struct ImageRecord {
    std::string id;
    std::string pixel_path;  // P6 PPM or GSTN tensor file
    int label = 0;           // index into Manifest::label_names
    std::optional<BBox> bbox;
};

struct Manifest {
    std::vector<ImageRecord> records;
    std::vector<std::string> label_names;  // defines class indices
    int num_classes() const { return static_cast<int>(label_names.size()); }
};

// Manifest text format. A `#labels:` header fixes the class-index order;
// each following line is `id<TAB>pixel_path<TAB>label_name<TAB>bbox` where
// bbox is `x1,y1,x2,y2` or `-`. Relative pixel paths are resolved against
// the manifest's directory.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct SplitAssignment {
    std::map<std::string, Split> by_id;

    Split of(const std::string& id) const;
};

// Deterministic per-class stratified 70/15/15 split. Counts use integer
// percentages (70n/100, 15n/100); leftovers go to train first, then val.
SplitAssignment split_dataset(const Manifest& manifest, std::uint64_t seed);

// Split file: one `id<TAB>{train|val|test}` line per record.
void save_split(const std::string& path, const SplitAssignment& split);
SplitAssignment load_split(const std::string& path);

// Records of `manifest` assigned to `which`, in manifest order.
std::vector<int> split_indices(const Manifest& manifest, const SplitAssignment& split,
                               Split which);

// Binary P6 PPM with 8-bit samples; values map to [0,1] as byte/255,
// channel order RGB, output shape 3xHxW.
Tensor decode_ppm(const std::string& path);
void encode_ppm(const std::string& path, const Tensor& image);

// Dispatches on the file's magic bytes: GSTN tensors load directly (must be
// 3xHxW), anything starting with "P6" decodes as PPM.
Tensor load_pixels(const std::string& path);

// Exact sub-tensor copy; the box must lie inside the image.
Tensor crop_bbox(const Tensor& image, const BBox& box);

enum class Pooling { image_based, human_based };

const char* pooling_name(Pooling p);
Pooling parse_pooling(const std::string& s);

struct PreprocessOptions {
    Pooling pooling = Pooling::image_based;
    int target_h = 64, target_w = 64;
    std::array<float, 3> mean{0.f, 0.f, 0.f};
    // strict: human_based without a bbox raises MissingAnnotationError.
    // Otherwise the whole image is used as a fallback.
    bool strict_bbox = true;
};

// (optional crop) -> bilinear resize to target -> per-channel mean
// subtraction, operating on already-decoded pixels.
Tensor preprocess_pixels(const Tensor& image, const std::optional<BBox>& bbox,
                         const PreprocessOptions& opts);

// Same, loading the record's pixel source from disk.
Tensor preprocess(const ImageRecord& record, const PreprocessOptions& opts);

// Per-channel mean over the whole (uncropped) pixels of the given records,
// accumulated in double in record order.
std::array<float, 3> compute_channel_mean(const Manifest& manifest,
                                          const std::vector<int>& record_indices);

enum class SyntheticSignal { foreground, background, both };

const char* synthetic_signal_name(SyntheticSignal s);
SyntheticSignal parse_synthetic_signal(const std::string& s);

struct SyntheticOptions {
    int classes = 12;
    int per_class = 20;
    SyntheticSignal signal = SyntheticSignal::foreground;
    int size = 64;       // square image side
    double noise = 0.04;  // per-pixel uniform perturbation
};

// Writes `<dir>/<id>.ppm` pixel files plus `<dir>/manifest.tsv` and returns
// the manifest. Class identity is painted as a hue inside the bbox
// (foreground), outside it (background), or split across both regions
// (both); the construction keeps region mean colors linearly separable.
// Byte-identical output for identical arguments.
Manifest make_synthetic_dataset(const std::string& dir, const SyntheticOptions& opts,
                                std::uint64_t seed);

// Hue wheel used by the synthetic painter (s = v = 0.9); exposed for tests.
std::array<float, 3> class_color(double pos, int wheel_size);

}  // namespace geostyle
