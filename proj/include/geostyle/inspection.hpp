#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geostyle/dataset.hpp"
#include "geostyle/network.hpp"
#include "geostyle/tensor.hpp"

namespace geostyle {

// Post-ReLU activations of the network's last conv layer for one record,
// kept alongside the pixel dimensions the network input was resized from so
// heatmaps can be mapped back into bounding-box coordinates.
struct ActivationStack {
    std::string record_id;
    Tensor activations;  // F x h x w, every value >= 0
    int orig_h = 0;
    int orig_w = 0;

    int filters() const { return activations.dim(0); }
};

// Eval-mode forward of one record, capturing relu(last conv output). The
// image is preprocessed with `prep`; the recorded original dims are those of
// the region the network input was resized from (the bbox crop under
// human-based pooling, the full image otherwise). Networks without a conv
// layer are rejected.
ActivationStack capture_activations(const NetworkSpec& spec, const Weights& weights,
                                    const ImageRecord& record, const PreprocessOptions& prep);

// One filter's activation map upsampled (bilinear, half-pixel centers) to
// the stack's original image dims.
Tensor heatmap(const ActivationStack& stack, int filter);

// Fraction of the map's total mass lying inside the box. Returns nullopt
// when the total mass is <= 1e-12 (an all-zero map carries no evidence
// either way). The box must lie inside the map.
std::optional<double> bbox_proportion(const Tensor& map, const BBox& box);

struct ProportionSample {
    std::string record_id;
    int filter = 0;
    double proportion = 0.0;  // in [0, 1]
};

struct ProportionCollection {
    std::vector<ProportionSample> samples;
    int skipped_no_bbox = 0;  // records without a bounding box
    int num_filters = 0;      // filter count of the capture layer
};

// capture_activations + per-filter bbox_proportion over the chosen manifest
// records. Pooling is forced to image_based regardless of prep.pooling so
// manifest boxes stay valid in heatmap coordinates. Records without a bbox
// are skipped (counted); filters with no mass on a record emit no sample.
ProportionCollection collect_proportions(const NetworkSpec& spec, const Weights& weights,
                                         const Manifest& manifest,
                                         const std::vector<int>& record_indices,
                                         const PreprocessOptions& prep);

struct FilterDensity {
    int filter = 0;
    std::vector<double> bins;  // masses over [0,1]; sum to 1 +- 1e-6 when count > 0
    int count = 0;
    double mean = 0.0;         // mean proportion; 0 when count == 0
};

// Fixed-bin histogram of each filter's proportions over [0,1], normalized
// per filter. The boundary value 1.0 falls in the last bin. Filters without
// samples get an all-zero histogram and count 0. One entry per filter index
// in [0, num_filters).
std::vector<FilterDensity> filter_density(const std::vector<ProportionSample>& samples,
                                          int num_filters, int bins = 50);

// Filter indices ordered by descending mean proportion; ties break toward
// the lower filter index; zero-sample filters trail in index order. The
// leading segment is a permutation of the filters that have samples.
std::vector<int> sort_filters(const std::vector<FilterDensity>& densities);

// Mean of the per-filter mean proportions over the first and last quarter of
// the ranking (sampled filters only); a coarse foreground-versus-background
// separation statistic.
struct QuartileSeparation {
    double top = 0.0;
    double bottom = 0.0;
    int quartile = 0;  // filters averaged on each side

    double gap() const { return top - bottom; }
};

QuartileSeparation quartile_separation(const std::vector<FilterDensity>& densities,
                                       const std::vector<int>& order);

struct OverlayImage {
    std::string record_id;
    int filter = 0;
    Tensor map;  // H x W heatmap at original image dims
};

struct InspectionThresholds {
    double foreground = 0.8;  // mean proportion above this: foreground group
    double background = 0.2;  // mean proportion below this: background group
};

// Writes into `out_dir`:
//   density.csv   header `filter,bin_0,...,bin_{B-1},mean,count`; one row
//                 per filter with samples, in `order` sequence
//   overlay_<recordid>_<filter>.gstn   each overlay map as a tensor file
//   summary.txt   filters grouped into foreground / shared / background by
//                 mean proportion against `thresholds`
// Output bytes are identical for identical inputs.
void export_inspection_report(const std::vector<FilterDensity>& densities,
                              const std::vector<int>& order,
                              const std::vector<OverlayImage>& overlays,
                              const std::string& out_dir,
                              const InspectionThresholds& thresholds = {});

}  // namespace geostyle
