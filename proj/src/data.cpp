#include "fusionbench/data.hpp"

#include <algorithm>
#include <cmath>

#include "fusionbench/bytes.hpp"
#include "fusionbench/rng.hpp"

namespace fusion::data {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr float kNeutralGray = 0.5f;

struct Rgb {
    float r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - f * s);
    const double t = v * (1.0 - (1.0 - f) * s);
    double r, g, b;
    switch (static_cast<int>(i) % 6) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

float clamp01(float v) { return std::min(1.f, std::max(0.f, v)); }

// Pattern field in [0,1] for a context texture family.
double texture_field(int pattern, double x, double y, double period, double phase_x,
                     double phase_y) {
    switch (pattern % 8) {
        case 0: return 0.5 + 0.5 * std::sin(2.0 * kPi * (y + phase_y) / period);
        case 1: return 0.5 + 0.5 * std::sin(2.0 * kPi * (x + phase_x) / period);
        case 2: return 0.5 + 0.5 * std::sin(2.0 * kPi * (x + y + phase_x) / period);
        case 3: {
            const int cx = static_cast<int>(std::floor((x + phase_x) / (period * 0.5)));
            const int cy = static_cast<int>(std::floor((y + phase_y) / (period * 0.5)));
            return ((cx + cy) & 1) ? 1.0 : 0.0;
        }
        case 4: {
            const double u = x + phase_x, v = y + phase_y;
            const double lx = u - std::floor(u / period) * period - period * 0.5;
            const double ly = v - std::floor(v / period) * period - period * 0.5;
            return (lx * lx + ly * ly) < (0.35 * period) * (0.35 * period) ? 1.0 : 0.0;
        }
        case 5: {
            const double dx = x - phase_x, dy = y - phase_y;
            return 0.5 + 0.5 * std::sin(2.0 * kPi * std::sqrt(dx * dx + dy * dy) / period);
        }
        case 6: {
            const double t = (x + phase_x) / (2.0 * period);
            return t - std::floor(t);
        }
        default: return 0.5 + 0.5 * std::sin(2.0 * kPi * (x - y + phase_x) / period);
    }
}

// Class-keyed glyph mask in bbox-local coordinates u,v in [-1,1]. Shapes are
// chosen with distinct fill fractions so that heavy blur keeps a weak
// luminance cue even after the shape itself is gone.
bool glyph_mask(int shape, double u, double v) {
    switch (shape % 8) {
        case 0: return u * u + v * v <= 0.85;                                   // disk
        case 1: {                                                               // frame
            const double m = std::max(std::abs(u), std::abs(v));
            return m >= 0.45 && m <= 0.92;
        }
        case 2:                                                                 // triangle
            return v <= 0.85 && std::abs(u) <= (v + 0.95) * 0.52;
        case 3:                                                                 // plus
            return (std::abs(u) <= 0.28 || std::abs(v) <= 0.28) &&
                   std::abs(u) <= 0.9 && std::abs(v) <= 0.9;
        case 4:                                                                 // X
            return (std::abs(u - v) <= 0.32 || std::abs(u + v) <= 0.32) &&
                   std::abs(u) <= 0.95 && std::abs(v) <= 0.95;
        case 5: return std::abs(u) + std::abs(v) <= 0.95;                       // diamond
        case 6: {                                                               // bars
            const double t = (v + 1.0) * 1.5;
            return (t - std::floor(t)) < 0.5 && std::abs(u) <= 0.88;
        }
        default: {                                                              // ring
            const double r2 = u * u + v * v;
            return r2 >= 0.30 && r2 <= 0.88;
        }
    }
}

void render_sample(Sample& s, const DatasetMeta& meta, Rng& rng) {
    const int H = meta.h, W = meta.w;
    s.image.assign(static_cast<std::size_t>(3) * H * W, 0.f);

    // context texture with per-sample jitter
    const int ctx = s.context_id;
    const double hue = static_cast<double>(ctx) / context_count(meta) + rng.uniform(-0.03, 0.03);
    const double period = (0.22 * std::min(H, W)) * rng.uniform(0.85, 1.15);
    const double phase_x = rng.uniform(0.0, period);
    const double phase_y = rng.uniform(0.0, period);
    const Rgb lo = hsv_to_rgb(hue, 0.55, 0.24);
    const Rgb hi = hsv_to_rgb(hue + 0.1, 0.5, 0.62);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double t = texture_field(ctx, x, y, period, phase_x, phase_y);
            const float noise = static_cast<float>(rng.uniform(-0.05, 0.05));
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            s.image[0 * H * W + i] = clamp01(static_cast<float>(lo.r + t * (hi.r - lo.r)) + noise);
            s.image[1 * H * W + i] = clamp01(static_cast<float>(lo.g + t * (hi.g - lo.g)) + noise);
            s.image[2 * H * W + i] = clamp01(static_cast<float>(lo.b + t * (hi.b - lo.b)) + noise);
        }

    // class-keyed glyph; its color carries no class information
    const Rgb gcol = hsv_to_rgb(rng.uniform(), rng.uniform(0.55, 0.9), rng.uniform(0.78, 0.95));
    const BBox& bb = s.bbox;
    for (int y = 0; y < bb.h; ++y)
        for (int x = 0; x < bb.w; ++x) {
            const double v = (2.0 * y + 1.0) / bb.h - 1.0;
            const double u = (2.0 * x + 1.0) / bb.w - 1.0;
            if (!glyph_mask(s.label, u, v)) continue;
            const std::size_t i = static_cast<std::size_t>(bb.row + y) * W + (bb.col + x);
            s.image[0 * H * W + i] = gcol.r;
            s.image[1 * H * W + i] = gcol.g;
            s.image[2 * H * W + i] = gcol.b;
        }
}

BBox sample_bbox(const DatasetMeta& meta, Rng& rng) {
    const int H = meta.h, W = meta.w;
    const double total = static_cast<double>(H) * W;
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double area = rng.uniform(0.16, 0.48) * total;
        const double aspect = rng.uniform(0.75, 1.0 / 0.75);
        int bh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
        bh = std::clamp(bh, 8, H - 2);
        int bw = static_cast<int>(std::lround(area / bh));
        bw = std::clamp(bw, 8, W - 2);
        const double frac = static_cast<double>(bh) * bw / total;
        if (frac < 0.15 || frac > 0.5) continue;
        BBox bb;
        bb.h = bh;
        bb.w = bw;
        bb.row = rng.range(0, H - bh);
        bb.col = rng.range(0, W - bw);
        return bb;
    }
    throw ConfigError("bbox constraints unsatisfiable for " + std::to_string(meta.h) + "x" +
                      std::to_string(meta.w) + " images");
}

std::vector<int> derive_supercats(int class_count, ContextMode mode) {
    std::vector<int> map(class_count);
    for (int c = 0; c < class_count; ++c)
        map[c] = (mode == ContextMode::similar) ? c / 2 : c;
    return map;
}

}  // namespace

const char* mode_name(ContextMode m) {
    switch (m) {
        case ContextMode::dissimilar: return "dissimilar";
        case ContextMode::similar: return "similar";
        case ContextMode::uniform: return "uniform";
    }
    return "?";
}

ContextMode mode_from_name(const std::string& name) {
    if (name == "dissimilar") return ContextMode::dissimilar;
    if (name == "similar") return ContextMode::similar;
    if (name == "uniform") return ContextMode::uniform;
    throw ConfigError("unknown context mode '" + name + "'");
}

int context_count(const DatasetMeta& meta) { return meta.class_count; }

Dataset generate_synthetic(DatasetMeta meta, int n_per_class, std::uint64_t seed) {
    if (meta.class_count < 2) throw ConfigError("need at least 2 classes");
    if (meta.h < 16 || meta.w < 16) throw ConfigError("images must be at least 16x16");
    if (n_per_class < 1) throw ConfigError("n_per_class must be positive");
    if (meta.class_to_supercat.empty())
        meta.class_to_supercat = derive_supercats(meta.class_count, meta.mode);
    if (static_cast<int>(meta.class_to_supercat.size()) != meta.class_count)
        throw ConfigError("class->supercategory map size mismatch");

    // classes sharing a supercategory define that supercategory's context pool
    std::vector<std::vector<int>> pool(meta.class_count);
    for (int c = 0; c < meta.class_count; ++c)
        pool[meta.class_to_supercat[c]].push_back(c);

    Dataset ds;
    ds.meta = meta;
    ds.samples.reserve(static_cast<std::size_t>(meta.class_count) * n_per_class);
    std::uint64_t index = 0;
    for (int c = 0; c < meta.class_count; ++c) {
        for (int i = 0; i < n_per_class; ++i, ++index) {
            Rng rng = Rng::keyed(seed, index);
            Sample s;
            s.label = c;
            s.supercategory_id = meta.class_to_supercat[c];
            switch (meta.mode) {
                case ContextMode::dissimilar: s.context_id = s.supercategory_id; break;
                case ContextMode::similar: {
                    const auto& p = pool[s.supercategory_id];
                    s.context_id = p[rng.below(p.size())];
                    break;
                }
                case ContextMode::uniform:
                    s.context_id = static_cast<int>(rng.below(meta.class_count));
                    break;
            }
            s.bbox = sample_bbox(meta, rng);
            render_sample(s, meta, rng);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

Dataset object_only(const Dataset& ds) {
    Dataset out = ds;
    const int H = ds.meta.h, W = ds.meta.w;
    for (auto& s : out.samples) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const bool inside = y >= s.bbox.row && y < s.bbox.row + s.bbox.h &&
                                    x >= s.bbox.col && x < s.bbox.col + s.bbox.w;
                if (inside) continue;
                for (int c = 0; c < 3; ++c)
                    s.image[static_cast<std::size_t>(c) * H * W + y * W + x] = kNeutralGray;
            }
    }
    return out;
}

Dataset context_only(const Dataset& ds) {
    Dataset out = ds;
    const int H = ds.meta.h, W = ds.meta.w;
    for (auto& s : out.samples) {
        for (int y = s.bbox.row; y < s.bbox.row + s.bbox.h; ++y)
            for (int x = s.bbox.col; x < s.bbox.col + s.bbox.w; ++x)
                for (int c = 0; c < 3; ++c)
                    s.image[static_cast<std::size_t>(c) * H * W + y * W + x] = kNeutralGray;
    }
    return out;
}

std::vector<std::pair<int, std::vector<float>>> parse_cifar10_batch(
    std::span<const std::uint8_t> bytes) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;
    if (bytes.size() % kRecord != 0)
        throw ParseError("cifar batch truncated: " + std::to_string(bytes.size()) +
                             " bytes is not a multiple of 3073",
                         bytes.size() - bytes.size() % kRecord);
    const std::size_t n = bytes.size() / kRecord;
    std::vector<std::pair<int, std::vector<float>>> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kRecord;
        if (rec[0] > 9) throw ValueError("cifar label byte " + std::to_string(rec[0]) + " > 9", r);
        std::vector<float> img(kPixels);
        for (std::size_t i = 0; i < kPixels; ++i)
            img[i] = static_cast<float>(rec[1 + i]) / 255.f;
        out.emplace_back(rec[0], std::move(img));
    }
    return out;
}

Dataset dataset_from_cifar(std::span<const std::uint8_t> bytes) {
    auto records = parse_cifar10_batch(bytes);
    Dataset ds;
    ds.meta.class_count = 10;
    ds.meta.h = 32;
    ds.meta.w = 32;
    ds.meta.mode = ContextMode::uniform;
    ds.meta.class_to_supercat.assign(10, 0);
    ds.samples.reserve(records.size());
    for (auto& [label, image] : records) {
        Sample s;
        s.label = label;
        s.image = std::move(image);
        s.bbox = {8, 8, 16, 16};  // no annotations; centered quarter-area box
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Tensor normalize_images(const Tensor& images, const std::array<float, 3>& mean,
                        const std::array<float, 3>& stddev) {
    if (images.rank() != 4 || images.size(1) != 3)
        throw DimensionError("normalize expects N x 3 x H x W, got " + shape_str(images.shape()));
    for (float s : stddev)
        if (s <= 1e-8f) throw ConfigError("normalization std must exceed 1e-8");
    auto out = Tensor::zeros(images.shape());
    const int N = images.size(0);
    const std::size_t plane = static_cast<std::size_t>(images.size(2)) * images.size(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out.data()[off + i] = (images.data()[off + i] - mean[c]) / stddev[c];
        }
    return out;
}

Tensor unnormalize_images(const Tensor& images, const std::array<float, 3>& mean,
                          const std::array<float, 3>& stddev) {
    if (images.rank() != 4 || images.size(1) != 3)
        throw DimensionError("unnormalize expects N x 3 x H x W, got " + shape_str(images.shape()));
    for (float s : stddev)
        if (s <= 1e-8f) throw ConfigError("normalization std must exceed 1e-8");
    auto out = Tensor::zeros(images.shape());
    const int N = images.size(0);
    const std::size_t plane = static_cast<std::size_t>(images.size(2)) * images.size(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out.data()[off + i] = images.data()[off + i] * stddev[c] + mean[c];
        }
    return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, bool normalized) {
    if (indices.empty()) throw ConfigError("empty batch");
    const int H = ds.meta.h, W = ds.meta.w, C = ds.meta.class_count;
    const std::size_t plane = static_cast<std::size_t>(3) * H * W;
    Batch b;
    b.images = Tensor::zeros({static_cast<int>(indices.size()), 3, H, W});
    b.targets = Tensor::zeros({static_cast<int>(indices.size()), C});
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Sample& s = ds.samples[indices[n]];
        std::copy(s.image.begin(), s.image.end(), b.images.data().begin() + n * plane);
        b.targets.data()[n * C + s.label] = 1.f;
        b.labels.push_back(s.label);
        b.bboxes.push_back(s.bbox);
    }
    if (normalized) b.images = normalize_images(b.images, ds.meta.mean, ds.meta.stddev);
    return b;
}

Batch make_batch(const Dataset& ds, bool normalized) {
    std::vector<std::size_t> idx(ds.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(ds, idx, normalized);
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train fraction must be in (0,1)");
    std::vector<std::vector<std::size_t>> per_class(ds.meta.class_count);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        per_class[ds.samples[i].label].push_back(i);
    for (int c = 0; c < ds.meta.class_count; ++c)
        if (per_class[c].size() < 2)
            throw ConfigError("class " + std::to_string(c) + " has fewer than 2 samples");

    Dataset train, test;
    train.meta = ds.meta;
    test.meta = ds.meta;
    for (int c = 0; c < ds.meta.class_count; ++c) {
        auto idx = per_class[c];
        Rng rng = Rng::keyed(seed, 0x5EED0000ULL + c);
        rng.shuffle(idx);
        const std::size_t n_train =
            static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto& dst = (i < n_train) ? train : test;
            dst.samples.push_back(ds.samples[idx[i]]);
        }
    }
    return {std::move(train), std::move(test)};
}

std::vector<std::uint8_t> encode_cfds(const Dataset& ds, std::uint8_t mode_byte_override) {
    if (ds.meta.class_count > 0xFFFF || ds.meta.h > 0xFFFF || ds.meta.w > 0xFFFF)
        throw ConfigError("dataset extents exceed the container format");
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'C', 'F', 'D', 'S'});
    bytes::put_u16(out, 1);  // version
    bytes::put_u16(out, static_cast<std::uint16_t>(ds.meta.class_count));
    bytes::put_u16(out, static_cast<std::uint16_t>(ds.meta.h));
    bytes::put_u16(out, static_cast<std::uint16_t>(ds.meta.w));
    bytes::put_u8(out, mode_byte_override != 0xFE ? mode_byte_override
                                                  : static_cast<std::uint8_t>(ds.meta.mode));
    bytes::put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
    for (const auto& s : ds.samples) {
        bytes::put_u16(out, static_cast<std::uint16_t>(s.label));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.supercategory_id));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.context_id));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.bbox.row));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.bbox.col));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.bbox.h));
        bytes::put_u16(out, static_cast<std::uint16_t>(s.bbox.w));
        for (float v : s.image) bytes::put_f32(out, v);
    }
    return out;
}

Dataset decode_cfds(std::span<const std::uint8_t> data) {
    bytes::Reader r(data, "dataset");
    r.expect_magic("CFDS");
    const std::size_t version_at = r.offset();
    if (r.u16() != 1) throw ParseError("dataset: unsupported version", version_at);
    Dataset ds;
    ds.meta.class_count = r.u16();
    ds.meta.h = r.u16();
    ds.meta.w = r.u16();
    const std::size_t mode_at = r.offset();
    const std::uint8_t mode = r.u8();
    if (mode <= 2)
        ds.meta.mode = static_cast<ContextMode>(mode);
    else if (mode != kAdversarialModeByte)
        throw ParseError("dataset: unknown mode byte " + std::to_string(mode), mode_at);
    const std::uint32_t count = r.u32();
    const std::size_t pixels = static_cast<std::size_t>(3) * ds.meta.h * ds.meta.w;
    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        const std::size_t label_at = r.offset();
        s.label = r.u16();
        if (s.label >= ds.meta.class_count)
            throw ParseError("dataset: label " + std::to_string(s.label) + " out of range",
                             label_at);
        s.supercategory_id = r.u16();
        s.context_id = r.u16();
        s.bbox.row = r.u16();
        s.bbox.col = r.u16();
        s.bbox.h = r.u16();
        s.bbox.w = r.u16();
        s.image.resize(pixels);
        for (std::size_t p = 0; p < pixels; ++p) s.image[p] = r.f32();
        ds.samples.push_back(std::move(s));
    }
    if (r.remaining() != 0)
        throw ParseError("dataset: trailing bytes after last sample", r.offset());
    ds.meta.class_to_supercat.assign(ds.meta.class_count, 0);
    std::vector<bool> seen(ds.meta.class_count, false);
    for (const auto& s : ds.samples) {
        if (!seen[s.label]) {
            ds.meta.class_to_supercat[s.label] = s.supercategory_id;
            seen[s.label] = true;
        }
    }
    for (int c = 0; c < ds.meta.class_count; ++c)
        if (!seen[c]) ds.meta.class_to_supercat[c] = c;
    return ds;
}

void save_cfds(const std::string& path, const Dataset& ds, std::uint8_t mode_byte_override) {
    auto data = encode_cfds(ds, mode_byte_override);
    bytes::write_file(path, data);
}

Dataset load_cfds(const std::string& path) {
    auto data = bytes::read_file(path);
    return decode_cfds(data);
}

}  // namespace fusion::data
