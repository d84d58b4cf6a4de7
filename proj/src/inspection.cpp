#include "geostyle/inspection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "geostyle/errors.hpp"
#include "geostyle/ops.hpp"
#include "geostyle/tensor_io.hpp"

namespace geostyle {

namespace {

// Index of the last conv layer, or a usage error when the network has none.
int last_conv_index(const NetworkSpec& spec) {
    int idx = -1;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::conv) idx = static_cast<int>(i);
    }
    if (idx < 0) throw UsageError("activation capture needs a network with a conv layer");
    return idx;
}

// Round-trippable decimal rendering (17 significant digits) so CSV readers
// recover the exact double that was written.
std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Short rendering for human-facing threshold values.
std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path.string() + "'");
}

}  // namespace

ActivationStack capture_activations(const NetworkSpec& spec, const Weights& weights,
                                    const ImageRecord& record, const PreprocessOptions& prep) {
    const Layout layout = validate(spec);
    const int ci = last_conv_index(spec);

    Tensor pixels;
    try {
        pixels = load_pixels(record.pixel_path);
    } catch (const Error& e) {
        throw FormatError("record '" + record.id + "': " + e.what());
    }

    // Mirror preprocess_pixels' crop rule so the recorded original dims match
    // the region the network actually saw.
    std::optional<BBox> crop;
    if (prep.pooling == Pooling::human_based) {
        if (record.bbox) {
            crop = record.bbox;
        } else if (prep.strict_bbox) {
            throw MissingAnnotationError("record '" + record.id +
                                         "' has no bounding box but human-based pooling is strict");
        }
    }

    ActivationStack stack;
    stack.record_id = record.id;
    stack.orig_h = crop ? crop->height() : pixels.dim(1);
    stack.orig_w = crop ? crop->width() : pixels.dim(2);

    const Tensor input = preprocess_pixels(pixels, record.bbox, prep);
    Tensor batch({1, input.dim(0), input.dim(1), input.dim(2)});
    std::copy(input.data(), input.data() + input.numel(), batch.data());

    const ForwardTrace<float> trace = forward_trace(spec, weights, batch, /*train_mode=*/false);

    // The conv output is the next layer's stored input (a conv is never last:
    // validation requires a trailing softmax). A flatten can only intervene
    // when the next layer is linear; undo it from the known output shape.
    const LayerShape& out = layout.out_shapes[static_cast<std::size_t>(ci)];
    Tensor conv_out = trace.layer_inputs[static_cast<std::size_t>(ci) + 1];
    if (conv_out.rank() != 4) conv_out = conv_out.reshaped({1, out.c, out.h, out.w});
    stack.activations = relu(conv_out).reshaped({out.c, out.h, out.w});
    return stack;
}

Tensor heatmap(const ActivationStack& stack, int filter) {
    if (stack.activations.rank() != 3) {
        throw UsageError("activation stack holds no F x h x w tensor");
    }
    const int f = stack.activations.dim(0);
    if (filter < 0 || filter >= f) {
        throw UsageError("filter " + std::to_string(filter) + " out of range [0, " +
                         std::to_string(f) + ")");
    }
    const int h = stack.activations.dim(1), w = stack.activations.dim(2);
    Tensor map({h, w});
    const float* src = stack.activations.data() + static_cast<std::int64_t>(filter) * h * w;
    std::copy(src, src + static_cast<std::int64_t>(h) * w, map.data());
    return bilinear_upsample(map, stack.orig_h, stack.orig_w);
}

std::optional<double> bbox_proportion(const Tensor& map, const BBox& box) {
    if (map.rank() != 2) throw ShapeError("bbox_proportion expects an H x W map");
    const int h = map.dim(0), w = map.dim(1);
    if (box.x1 < 0 || box.y1 < 0 || box.x2 > w || box.y2 > h || box.x1 >= box.x2 ||
        box.y1 >= box.y2) {
        throw UsageError("box [" + std::to_string(box.x1) + "," + std::to_string(box.y1) + "," +
                         std::to_string(box.x2) + "," + std::to_string(box.y2) +
                         ") does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                         " map");
    }
    double total = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) total += static_cast<double>(map.at2(y, x));
    if (total <= 1e-12) return std::nullopt;
    double inside = 0.0;
    for (int y = box.y1; y < box.y2; ++y)
        for (int x = box.x1; x < box.x2; ++x) inside += static_cast<double>(map.at2(y, x));
    return inside / total;
}

ProportionCollection collect_proportions(const NetworkSpec& spec, const Weights& weights,
                                         const Manifest& manifest,
                                         const std::vector<int>& record_indices,
                                         const PreprocessOptions& prep) {
    const Layout layout = validate(spec);
    const int ci = last_conv_index(spec);

    PreprocessOptions capture_prep = prep;
    capture_prep.pooling = Pooling::image_based;

    ProportionCollection out;
    out.num_filters = layout.out_shapes[static_cast<std::size_t>(ci)].c;
    for (const int idx : record_indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= manifest.records.size()) {
            throw UsageError("record index " + std::to_string(idx) + " outside manifest of " +
                             std::to_string(manifest.records.size()));
        }
        const ImageRecord& record = manifest.records[static_cast<std::size_t>(idx)];
        if (!record.bbox) {
            ++out.skipped_no_bbox;
            continue;
        }
        const ActivationStack stack = capture_activations(spec, weights, record, capture_prep);
        for (int f = 0; f < stack.filters(); ++f) {
            const auto p = bbox_proportion(heatmap(stack, f), *record.bbox);
            if (p) out.samples.push_back({record.id, f, *p});
        }
    }
    return out;
}

std::vector<FilterDensity> filter_density(const std::vector<ProportionSample>& samples,
                                          int num_filters, int bins) {
    if (bins < 2) throw UsageError("density histogram needs at least 2 bins");
    if (num_filters < 0) throw UsageError("negative filter count");

    std::vector<FilterDensity> out(static_cast<std::size_t>(num_filters));
    std::vector<std::vector<int>> hits(static_cast<std::size_t>(num_filters),
                                       std::vector<int>(static_cast<std::size_t>(bins), 0));
    std::vector<double> sums(static_cast<std::size_t>(num_filters), 0.0);
    for (const ProportionSample& s : samples) {
        if (s.filter < 0 || s.filter >= num_filters) {
            throw UsageError("sample filter " + std::to_string(s.filter) +
                             " outside [0, " + std::to_string(num_filters) + ")");
        }
        if (!(s.proportion >= 0.0 && s.proportion <= 1.0)) {
            throw UsageError("proportion " + std::to_string(s.proportion) +
                             " outside [0, 1] for record '" + s.record_id + "'");
        }
        const int bin = std::min(bins - 1, static_cast<int>(s.proportion * bins));
        ++hits[static_cast<std::size_t>(s.filter)][static_cast<std::size_t>(bin)];
        sums[static_cast<std::size_t>(s.filter)] += s.proportion;
        ++out[static_cast<std::size_t>(s.filter)].count;
    }
    for (int f = 0; f < num_filters; ++f) {
        FilterDensity& d = out[static_cast<std::size_t>(f)];
        d.filter = f;
        d.bins.assign(static_cast<std::size_t>(bins), 0.0);
        if (d.count == 0) continue;
        for (int b = 0; b < bins; ++b) {
            d.bins[static_cast<std::size_t>(b)] =
                static_cast<double>(hits[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)]) /
                d.count;
        }
        d.mean = sums[static_cast<std::size_t>(f)] / d.count;
    }
    return out;
}

std::vector<int> sort_filters(const std::vector<FilterDensity>& densities) {
    std::vector<const FilterDensity*> ptrs;
    ptrs.reserve(densities.size());
    for (const FilterDensity& d : densities) ptrs.push_back(&d);
    std::sort(ptrs.begin(), ptrs.end(), [](const FilterDensity* a, const FilterDensity* b) {
        const bool ea = a->count == 0, eb = b->count == 0;
        if (ea != eb) return eb;  // filters with samples first
        if (!ea && a->mean != b->mean) return a->mean > b->mean;
        return a->filter < b->filter;
    });
    std::vector<int> order;
    order.reserve(ptrs.size());
    for (const FilterDensity* d : ptrs) order.push_back(d->filter);
    return order;
}

QuartileSeparation quartile_separation(const std::vector<FilterDensity>& densities,
                                       const std::vector<int>& order) {
    std::map<int, const FilterDensity*> by_filter;
    for (const FilterDensity& d : densities) by_filter.emplace(d.filter, &d);
    std::vector<double> means;
    for (const int f : order) {
        const auto it = by_filter.find(f);
        if (it == by_filter.end()) {
            throw UsageError("sort order names filter " + std::to_string(f) +
                             " with no density entry");
        }
        if (it->second->count > 0) means.push_back(it->second->mean);
    }
    if (means.empty()) throw UsageError("no filter has samples; nothing to separate");

    QuartileSeparation sep;
    sep.quartile = std::max<int>(1, static_cast<int>(means.size()) / 4);
    double top = 0.0, bottom = 0.0;
    for (int i = 0; i < sep.quartile; ++i) {
        top += means[static_cast<std::size_t>(i)];
        bottom += means[means.size() - 1 - static_cast<std::size_t>(i)];
    }
    sep.top = top / sep.quartile;
    sep.bottom = bottom / sep.quartile;
    return sep;
}

void export_inspection_report(const std::vector<FilterDensity>& densities,
                              const std::vector<int>& order,
                              const std::vector<OverlayImage>& overlays,
                              const std::string& out_dir,
                              const InspectionThresholds& thresholds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw FormatError("cannot create '" + out_dir + "': " + ec.message());

    std::map<int, const FilterDensity*> by_filter;
    for (const FilterDensity& d : densities) by_filter.emplace(d.filter, &d);

    std::size_t bins = 0;
    for (const FilterDensity& d : densities) {
        if (d.count == 0) continue;
        if (bins == 0) bins = d.bins.size();
        if (d.bins.size() != bins) {
            throw UsageError("densities mix histogram widths (" + std::to_string(bins) + " vs " +
                             std::to_string(d.bins.size()) + " bins)");
        }
    }
    if (bins == 0) bins = 50;  // header width when no filter has samples

    std::ostringstream csv;
    csv << "filter";
    for (std::size_t b = 0; b < bins; ++b) csv << ",bin_" << b;
    csv << ",mean,count\n";
    int written = 0;
    std::vector<int> fg, shared, bg;
    for (const int f : order) {
        const auto it = by_filter.find(f);
        if (it == by_filter.end()) {
            throw UsageError("sort order names filter " + std::to_string(f) +
                             " with no density entry");
        }
        const FilterDensity& d = *it->second;
        if (d.count == 0) continue;
        csv << d.filter;
        for (const double mass : d.bins) csv << ',' << fmt_full(mass);
        csv << ',' << fmt_full(d.mean) << ',' << d.count << '\n';
        ++written;
        if (d.mean > thresholds.foreground) {
            fg.push_back(d.filter);
        } else if (d.mean < thresholds.background) {
            bg.push_back(d.filter);
        } else {
            shared.push_back(d.filter);
        }
    }
    write_file(fs::path(out_dir) / "density.csv", csv.str());

    for (const OverlayImage& o : overlays) {
        const std::string name = "overlay_" + o.record_id + "_" + std::to_string(o.filter) +
                                 ".gstn";
        save_tensor((fs::path(out_dir) / name).string(), o.map);
    }

    const auto join = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(v[i]);
        }
        return s.empty() ? std::string("none") : s;
    };
    std::ostringstream txt;
    txt << "activation origin summary\n";
    txt << "filters with samples: " << written << " of " << densities.size() << "\n";
    txt << "foreground filters (mean proportion > " << fmt_short(thresholds.foreground)
        << "): " << fg.size() << " -> " << join(fg) << "\n";
    txt << "shared filters: " << shared.size() << " -> " << join(shared) << "\n";
    txt << "background filters (mean proportion < " << fmt_short(thresholds.background)
        << "): " << bg.size() << " -> " << join(bg) << "\n";
    txt << "note: histograms are normalized per filter; every density.csv row sums to 1.\n";
    write_file(fs::path(out_dir) / "summary.txt", txt.str());
}

}  // namespace geostyle
