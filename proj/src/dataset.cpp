#include "geostyle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geostyle/errors.hpp"
#include "geostyle/ops.hpp"
#include "geostyle/rng.hpp"
#include "geostyle/tensor_io.hpp"

namespace fs = std::filesystem;

namespace geostyle {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

bool parse_int(const std::string& s, int& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        const long v = std::stol(s, &pos);
        if (pos != s.size()) return false;
        if (v < -1000000000L || v > 1000000000L) return false;
        out = static_cast<int>(v);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

std::string resolve_relative(const std::string& base_dir, const std::string& path) {
    if (path.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest '" + path + "'");
    const std::string dir = fs::path(path).parent_path().string();

    Manifest m;
    std::map<std::string, int> label_index;
    std::map<std::string, int> seen_ids;  // id -> first line number
    std::vector<std::string> problems;
    std::string line;
    int line_no = 0;
    bool have_labels = false;

    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        if (line.rfind("#labels:", 0) == 0) {
            if (have_labels) {
                problems.push_back("line " + std::to_string(line_no) +
                                   ": duplicate #labels header");
                continue;
            }
            have_labels = true;
            for (auto& name : split_fields(line.substr(8), ',')) {
                name = trim(name);
                if (name.empty()) {
                    problems.push_back("line " + std::to_string(line_no) +
                                       ": empty label name in header");
                    continue;
                }
                if (!label_index.emplace(name, static_cast<int>(m.label_names.size())).second) {
                    problems.push_back("line " + std::to_string(line_no) +
                                       ": duplicate label name '" + name + "'");
                    continue;
                }
                m.label_names.push_back(name);
            }
            continue;
        }
        if (line[0] == '#') continue;  // comment
        if (!have_labels) {
            throw ParseError("manifest '" + path + "' line " + std::to_string(line_no) +
                             ": record before the #labels: header");
        }
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 4) {
            problems.push_back("line " + std::to_string(line_no) + ": expected 4 tab-separated "
                               "fields, got " + std::to_string(fields.size()));
            continue;
        }
        ImageRecord rec;
        rec.id = trim(fields[0]);
        rec.pixel_path = resolve_relative(dir, trim(fields[1]));
        const std::string label_name = trim(fields[2]);
        const std::string bbox_text = trim(fields[3]);
        if (rec.id.empty()) {
            problems.push_back("line " + std::to_string(line_no) + ": empty record id");
            continue;
        }
        auto ins = seen_ids.emplace(rec.id, line_no);
        if (!ins.second) {
            problems.push_back("line " + std::to_string(line_no) + ": duplicate id '" + rec.id +
                               "' (first seen on line " + std::to_string(ins.first->second) +
                               ")");
            continue;
        }
        auto li = label_index.find(label_name);
        if (li == label_index.end()) {
            problems.push_back("line " + std::to_string(line_no) + ": unknown label '" +
                               label_name + "'");
            continue;
        }
        rec.label = li->second;
        if (bbox_text != "-") {
            const auto nums = split_fields(bbox_text, ',');
            BBox box;
            bool ok = nums.size() == 4 && parse_int(trim(nums[0]), box.x1) &&
                      parse_int(trim(nums[1]), box.y1) && parse_int(trim(nums[2]), box.x2) &&
                      parse_int(trim(nums[3]), box.y2);
            if (!ok) {
                problems.push_back("line " + std::to_string(line_no) + ": malformed bbox '" +
                                   bbox_text + "' (want x1,y1,x2,y2 or -)");
                continue;
            }
            if (box.x1 < 0 || box.y1 < 0 || box.x2 <= box.x1 || box.y2 <= box.y1) {
                problems.push_back("line " + std::to_string(line_no) + ": degenerate bbox '" +
                                   bbox_text + "' (need 0 <= x1 < x2 and 0 <= y1 < y2)");
                continue;
            }
            rec.bbox = box;
        }
        m.records.push_back(std::move(rec));
    }
    if (!have_labels && m.records.empty() && problems.empty()) {
        throw ParseError("manifest '" + path + "' has no #labels: header");
    }
    if (!problems.empty()) {
        std::string msg = "manifest '" + path + "' has " + std::to_string(problems.size()) +
                          " bad line(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ParseError(msg);
    }
    return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << "#labels:";
    for (std::size_t i = 0; i < manifest.label_names.size(); ++i) {
        out << (i ? "," : " ") << manifest.label_names[i];
    }
    out << "\n";
    for (const auto& rec : manifest.records) {
        if (rec.label < 0 || rec.label >= manifest.num_classes()) {
            throw UsageError("record '" + rec.id + "' has label index " +
                             std::to_string(rec.label) + " outside the label list");
        }
        out << rec.id << '\t' << rec.pixel_path << '\t' << manifest.label_names[rec.label]
            << '\t';
        if (rec.bbox) {
            out << rec.bbox->x1 << ',' << rec.bbox->y1 << ',' << rec.bbox->x2 << ','
                << rec.bbox->y2;
        } else {
            out << '-';
        }
        out << '\n';
    }
    if (!out) throw ParseError("failed while writing '" + path + "'");
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ParseError("unknown split tag '" + s + "' (want train, val, or test)");
}

Split SplitAssignment::of(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
        throw UsageError("record '" + id + "' has no split assignment");
    }
    return it->second;
}

SplitAssignment split_dataset(const Manifest& manifest, std::uint64_t seed) {
    SplitAssignment out;
    // Per-class index lists in manifest order.
    std::vector<std::vector<int>> per_class(static_cast<std::size_t>(manifest.num_classes()));
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        per_class[static_cast<std::size_t>(manifest.records[i].label)].push_back(
            static_cast<int>(i));
    }
    for (std::size_t cls = 0; cls < per_class.size(); ++cls) {
        auto& idx = per_class[cls];
        if (idx.empty()) continue;
        Rng rng(mix_seed(seed, 0x53504C49u + cls));  // per-class stream
        rng.shuffle(idx);
        const int n = static_cast<int>(idx.size());
        int n_train = 70 * n / 100;
        int n_val = 15 * n / 100;
        const int n_test = 15 * n / 100;
        int leftover = n - n_train - n_val - n_test;
        if (leftover > 0) {
            ++n_train;
            --leftover;
        }
        if (leftover > 0) ++n_val;
        for (int j = 0; j < n; ++j) {
            const Split s = j < n_train            ? Split::train
                            : j < n_train + n_val ? Split::val
                                                  : Split::test;
            out.by_id.emplace(manifest.records[static_cast<std::size_t>(idx[j])].id, s);
        }
    }
    return out;
}

void save_split(const std::string& path, const SplitAssignment& split) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    for (const auto& [id, s] : split.by_id) {
        out << id << '\t' << split_name(s) << '\n';
    }
    if (!out) throw ParseError("failed while writing '" + path + "'");
}

SplitAssignment load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open split file '" + path + "'");
    SplitAssignment out;
    std::string line;
    int line_no = 0;
    std::vector<std::string> problems;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 2) {
            problems.push_back("line " + std::to_string(line_no) +
                               ": expected `id<TAB>split`");
            continue;
        }
        try {
            if (!out.by_id.emplace(trim(fields[0]), parse_split(trim(fields[1]))).second) {
                problems.push_back("line " + std::to_string(line_no) + ": duplicate id '" +
                                   trim(fields[0]) + "'");
            }
        } catch (const ParseError& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "split file '" + path + "' has " + std::to_string(problems.size()) +
                          " bad line(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ParseError(msg);
    }
    return out;
}

std::vector<int> split_indices(const Manifest& manifest, const SplitAssignment& split,
                               Split which) {
    std::vector<int> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (split.of(manifest.records[i].id) == which) out.push_back(static_cast<int>(i));
    }
    return out;
}

Tensor decode_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image '" + path + "'");

    auto next_token = [&]() -> std::string {
        std::string tok;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {  // comment to end of line
                while ((c = in.get()) != EOF && c != '\n') {
                }
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        return tok;
    };

    const std::string magic = next_token();
    if (magic != "P6") {
        throw FormatError("image '" + path + "' is not a binary P6 PPM (magic '" + magic + "')");
    }
    int w = 0, h = 0, maxval = 0;
    if (!parse_int(next_token(), w) || !parse_int(next_token(), h) ||
        !parse_int(next_token(), maxval) || w < 1 || h < 1) {
        throw FormatError("image '" + path + "' has a malformed PPM header");
    }
    if (maxval != 255) {
        throw FormatError("image '" + path + "' has maxval " + std::to_string(maxval) +
                          "; only 255 is supported");
    }
    // next_token consumed exactly the single whitespace after maxval
    // (it stops at the first whitespace following a token).
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError("image '" + path + "' is truncated");
    }
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                img.at3(c, y, x) =
                    static_cast<float>(bytes[(static_cast<std::size_t>(y) * w + x) * 3 +
                                             static_cast<std::size_t>(c)]) /
                    255.0f;
            }
    return img;
}

void encode_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("encode_ppm expects a 3xHxW tensor, got " + image.shape_str());
    }
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = image.at3(c, y, x);
                long q = std::lround(static_cast<double>(v) * 255.0);
                q = std::clamp(q, 0L, 255L);
                bytes[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(q);
            }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

Tensor load_pixels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image '" + path + "'");
    char head[4] = {0, 0, 0, 0};
    in.read(head, 4);
    in.close();
    if (std::string(head, 4) == "GSTN") {
        Tensor t = load_tensor(path);
        if (t.rank() != 3 || t.dim(0) != 3) {
            throw FormatError("tensor image '" + path + "' must be 3xHxW, got " + t.shape_str());
        }
        return t;
    }
    if (head[0] == 'P' && head[1] == '6') return decode_ppm(path);
    throw FormatError("image '" + path + "' is neither a GSTN tensor nor a P6 PPM");
}

Tensor crop_bbox(const Tensor& image, const BBox& box) {
    if (image.rank() != 3) {
        throw ShapeError("crop_bbox expects a CxHxW tensor, got " + image.shape_str());
    }
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (box.x1 < 0 || box.y1 < 0 || box.x2 <= box.x1 || box.y2 <= box.y1 || box.x2 > W ||
        box.y2 > H) {
        throw UsageError("bbox [" + std::to_string(box.x1) + "," + std::to_string(box.y1) + "," +
                         std::to_string(box.x2) + "," + std::to_string(box.y2) +
                         "] does not fit a " + std::to_string(W) + "x" + std::to_string(H) +
                         " image");
    }
    Tensor out({C, box.height(), box.width()});
    for (int c = 0; c < C; ++c)
        for (int y = box.y1; y < box.y2; ++y)
            for (int x = box.x1; x < box.x2; ++x) {
                out.at3(c, y - box.y1, x - box.x1) = image.at3(c, y, x);
            }
    return out;
}

const char* pooling_name(Pooling p) {
    return p == Pooling::image_based ? "image" : "human";
}

Pooling parse_pooling(const std::string& s) {
    if (s == "image" || s == "image_based") return Pooling::image_based;
    if (s == "human" || s == "human_based") return Pooling::human_based;
    throw ParseError("unknown pooling '" + s + "' (want image or human)");
}

Tensor preprocess_pixels(const Tensor& image, const std::optional<BBox>& bbox,
                         const PreprocessOptions& opts) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("preprocess expects 3xHxW pixels, got " + image.shape_str());
    }
    Tensor region = image;
    if (opts.pooling == Pooling::human_based) {
        if (bbox) {
            region = crop_bbox(image, *bbox);
        } else if (opts.strict_bbox) {
            throw MissingAnnotationError(
                "human-based pooling requires a bounding box and none is present");
        }
        // fallback: whole image
    }
    Tensor resized = (region.dim(1) == opts.target_h && region.dim(2) == opts.target_w)
                         ? region
                         : bilinear_resize_chw(region, opts.target_h, opts.target_w);
    for (int c = 0; c < 3; ++c) {
        const float m = opts.mean[static_cast<std::size_t>(c)];
        if (m == 0.f) continue;
        for (int y = 0; y < opts.target_h; ++y)
            for (int x = 0; x < opts.target_w; ++x) resized.at3(c, y, x) -= m;
    }
    return resized;
}

Tensor preprocess(const ImageRecord& record, const PreprocessOptions& opts) {
    try {
        return preprocess_pixels(load_pixels(record.pixel_path), record.bbox, opts);
    } catch (const MissingAnnotationError&) {
        throw MissingAnnotationError("record '" + record.id +
                                     "' has no bounding box but human-based pooling is strict");
    }
}

std::array<float, 3> compute_channel_mean(const Manifest& manifest,
                                          const std::vector<int>& record_indices) {
    double sum[3] = {0, 0, 0};
    std::int64_t count = 0;
    for (const int idx : record_indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= manifest.records.size()) {
            throw UsageError("record index " + std::to_string(idx) + " out of range");
        }
        const Tensor img = load_pixels(manifest.records[static_cast<std::size_t>(idx)].pixel_path);
        const int H = img.dim(1), W = img.dim(2);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) sum[c] += static_cast<double>(img.at3(c, y, x));
        count += static_cast<std::int64_t>(H) * W;
    }
    if (count == 0) throw UsageError("cannot compute a channel mean over zero records");
    return {static_cast<float>(sum[0] / static_cast<double>(count)),
            static_cast<float>(sum[1] / static_cast<double>(count)),
            static_cast<float>(sum[2] / static_cast<double>(count))};
}

const char* synthetic_signal_name(SyntheticSignal s) {
    switch (s) {
        case SyntheticSignal::foreground: return "foreground";
        case SyntheticSignal::background: return "background";
        case SyntheticSignal::both: return "both";
    }
    return "?";
}

SyntheticSignal parse_synthetic_signal(const std::string& s) {
    if (s == "foreground" || s == "fg") return SyntheticSignal::foreground;
    if (s == "background" || s == "bg") return SyntheticSignal::background;
    if (s == "both") return SyntheticSignal::both;
    throw ParseError("unknown signal mode '" + s + "' (want foreground, background, or both)");
}

std::array<float, 3> class_color(double pos, int wheel_size) {
    if (wheel_size < 1 || pos < 0.0 || pos >= static_cast<double>(wheel_size)) {
        throw UsageError("position " + std::to_string(pos) + " outside hue wheel of size " +
                         std::to_string(wheel_size));
    }
    const double h = 360.0 * pos / static_cast<double>(wheel_size);
    const double s = 0.9, v = 0.9;
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        case 5: r = c; b = x; break;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

Manifest make_synthetic_dataset(const std::string& dir, const SyntheticOptions& opts,
                                std::uint64_t seed) {
    if (opts.classes < 2) throw UsageError("synthetic dataset needs at least 2 classes");
    if (opts.per_class < 1) throw UsageError("synthetic dataset needs at least 1 image per class");
    if (opts.size < 8) throw UsageError("synthetic image side must be at least 8 pixels");
    fs::create_directories(dir);

    Manifest m;
    char buf[64];
    for (int cls = 0; cls < opts.classes; ++cls) {
        std::snprintf(buf, sizeof buf, "city_%02d", cls);
        m.label_names.emplace_back(buf);
    }
    // Hue wheel factorization for the split-signal mode: the foreground
    // carries cls mod g1, the background carries cls / g1.
    const int g1 = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(opts.classes))));
    const int g2 = (opts.classes + g1 - 1) / g1;

    for (int cls = 0; cls < opts.classes; ++cls) {
        for (int i = 0; i < opts.per_class; ++i) {
            const int global = cls * opts.per_class + i;
            Rng rng(mix_seed(seed, 0x53594E00u + static_cast<std::uint64_t>(global)));

            const int side = opts.size;
            const int bw = static_cast<int>(std::lround(side * rng.uniform(0.35, 0.55)));
            const int bh = static_cast<int>(std::lround(side * rng.uniform(0.35, 0.55)));
            const int x1 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - bw + 1)));
            const int y1 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - bh + 1)));
            const BBox box{x1, y1, x1 + bw, y1 + bh};

            std::array<float, 3> fg{}, bg{};
            switch (opts.signal) {
                case SyntheticSignal::foreground: {
                    // Per-image hue jitter: each class owns a wheel slot, and
                    // images scatter within +/-0.3 of its center, so telling
                    // neighbors apart takes fine hue resolution rather than a
                    // single coarse detector per class.
                    const double wheel = static_cast<double>(opts.classes);
                    const double pos = std::fmod(
                        static_cast<double>(cls) + rng.uniform(-0.3, 0.3) + wheel, wheel);
                    fg = class_color(pos, opts.classes);
                    // The gray varies per image so the background is a real
                    // nuisance variable, but stays near mid-gray so it never
                    // drowns out the in-box signal.
                    const float gray = static_cast<float>(rng.uniform(0.4, 0.6));
                    bg = {gray, gray, gray};
                    break;
                }
                case SyntheticSignal::background: {
                    bg = class_color(cls, opts.classes);
                    fg = {0.5f, 0.5f, 0.5f};
                    break;
                }
                case SyntheticSignal::both: {
                    fg = class_color(cls % g1, g1);
                    bg = class_color(cls / g1, g2);
                    break;
                }
            }

            Tensor img({3, side, side});
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    const bool inside = x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2;
                    const auto& color = inside ? fg : bg;
                    for (int c = 0; c < 3; ++c) img.at3(c, y, x) = color[static_cast<std::size_t>(c)];
                }
            if (opts.signal == SyntheticSignal::foreground) {
                // Class-independent stripe texture outside the box: scenes have
                // structure, so context-tuned filters get something real to
                // latch onto without leaking any label information. Orientation
                // and stripe width vary per image.
                const bool horizontal = rng.below(2) == 0;
                const int half_period = rng.below(2) == 0 ? 2 : 4;
                const int phase = static_cast<int>(rng.below(8));
                for (int y = 0; y < side; ++y)
                    for (int x = 0; x < side; ++x) {
                        const bool inside =
                            x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2;
                        if (inside) continue;
                        const int t = (horizontal ? y : x) + phase;
                        const float ripple = (t / half_period) % 2 == 0 ? 0.15f : -0.15f;
                        for (int c = 0; c < 3; ++c) img.at3(c, y, x) += ripple;
                    }
            }
            if (opts.noise > 0) {
                for (int y = 0; y < side; ++y)
                    for (int x = 0; x < side; ++x)
                        for (int c = 0; c < 3; ++c) {
                            float v = img.at3(c, y, x) +
                                      static_cast<float>(rng.uniform(-opts.noise, opts.noise));
                            img.at3(c, y, x) = std::clamp(v, 0.f, 1.f);
                        }
            }

            std::snprintf(buf, sizeof buf, "%s_%04d", m.label_names[static_cast<std::size_t>(cls)].c_str(), i);
            ImageRecord rec;
            rec.id = buf;
            rec.pixel_path = rec.id + ".ppm";
            rec.label = cls;
            rec.bbox = box;
            encode_ppm((fs::path(dir) / rec.pixel_path).string(), img);
            m.records.push_back(std::move(rec));
        }
    }
    save_manifest((fs::path(dir) / "manifest.tsv").string(), m);
    // Hand back records with directly usable paths.
    for (auto& rec : m.records) {
        rec.pixel_path = (fs::path(dir) / rec.pixel_path).lexically_normal().string();
    }
    return m;
}

}  // namespace geostyle
