#include "macl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace macl::tasks {

Normalization Normalization::fit_range(const Tensor<double>& raw) {
    const std::size_t dim = raw.cols();
    Normalization n;
    n.scale.assign(dim, 1.0);
    n.offset.assign(dim, 0.0);
    if (raw.rows() == 0) return n;
    for (std::size_t j = 0; j < dim; ++j) {
        double lo = raw.at(0, j), hi = lo;
        for (std::size_t i = 1; i < raw.rows(); ++i) {
            lo = std::min(lo, raw.at(i, j));
            hi = std::max(hi, raw.at(i, j));
        }
        if (hi > lo) {
            n.scale[j] = 2.0 / (hi - lo);
            n.offset[j] = -1.0 - lo * n.scale[j];
        } else {
            n.offset[j] = -lo;
        }
    }
    return n;
}

Normalization Normalization::identity(std::size_t dim) {
    return {std::vector<double>(dim, 1.0), std::vector<double>(dim, 0.0)};
}

Tensor<double> Normalization::apply(const Tensor<double>& raw) const {
    if (raw.cols() != scale.size()) throw DimensionError("normalization width mismatch");
    Tensor<double> out = raw;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) = out.at(i, j) * scale[j] + offset[j];
    return out;
}

Tensor<double> Normalization::invert(const Tensor<double>& normalized) const {
    if (normalized.cols() != scale.size()) throw DimensionError("normalization width mismatch");
    Tensor<double> out = normalized;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) = (out.at(i, j) - offset[j]) / scale[j];
    return out;
}

MixtureSpec MixtureSpec::ring(std::size_t n, double radius, double stddev, std::size_t samples_per_mode) {
    MixtureSpec spec;
    spec.samples_per_mode = samples_per_mode;
    for (std::size_t k = 0; k < n; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        spec.modes.push_back({radius * std::cos(angle), radius * std::sin(angle), stddev * stddev, 0.0,
                              stddev * stddev});
    }
    return spec;
}

void MixtureSpec::plant_radial(std::size_t source, double distance, std::size_t samples, std::string name) {
    if (source >= modes.size()) throw ContractError("planted target source out of range");
    const auto& m = modes[source];
    const double norm = std::hypot(m.mean_x, m.mean_y);
    const double ux = norm > 0 ? m.mean_x / norm : 1.0;
    const double uy = norm > 0 ? m.mean_y / norm : 0.0;
    if (name.empty()) name = "target" + std::to_string(targets.size());
    targets.push_back({std::move(name), source, distance * ux, distance * uy, samples});
}

namespace {

/// Cholesky factor of a 2x2 covariance; throws unless positive definite.
struct Chol2 {
    double l11, l21, l22;
};

Chol2 cholesky2(const GaussianMode& m) {
    if (!(m.var_x > 0)) throw ContractError("mixture covariance is not positive definite");
    const double l11 = std::sqrt(m.var_x);
    const double l21 = m.cov_xy / l11;
    const double rem = m.var_y - l21 * l21;
    if (!(rem > 0)) throw ContractError("mixture covariance is not positive definite");
    return {l11, l21, std::sqrt(rem)};
}

void draw(const GaussianMode& m, double dx, double dy, std::size_t n, Rng& rng, std::vector<double>& out) {
    const Chol2 c = cholesky2(m);
    for (std::size_t i = 0; i < n; ++i) {
        const double z1 = rng.normal(), z2 = rng.normal();
        out.push_back(m.mean_x + dx + c.l11 * z1);
        out.push_back(m.mean_y + dy + c.l21 * z1 + c.l22 * z2);
    }
}

Tensor<double> rows_with_label(const Dataset& d, std::size_t label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.labels[i] == label) idx.push_back(i);
    return d.samples.gather_rows(idx);
}

}  // namespace

Tensor<double> Suite::source_data(std::size_t mode) const { return rows_with_label(sources, mode); }
Tensor<double> Suite::target_data(std::size_t target) const { return rows_with_label(targets, target); }

Suite gaussian_mixture_suite(const MixtureSpec& spec, std::uint64_t seed) {
    if (spec.modes.size() < 2) throw ContractError("mixture suite needs at least 2 source modes");
    for (const auto& m : spec.modes) cholesky2(m);
    Rng rng(seed);

    std::vector<double> src, tgt;
    Suite suite;
    for (std::size_t k = 0; k < spec.modes.size(); ++k) {
        draw(spec.modes[k], 0, 0, spec.samples_per_mode, rng, src);
        suite.sources.labels.insert(suite.sources.labels.end(), spec.samples_per_mode, k);
        suite.tasks.push_back({k, "mode" + std::to_string(k), "gaussian", 2});
    }
    for (std::size_t t = 0; t < spec.targets.size(); ++t) {
        const auto& p = spec.targets[t];
        if (p.source >= spec.modes.size()) throw ContractError("planted target source out of range");
        draw(spec.modes[p.source], p.offset_x, p.offset_y, p.samples, rng, tgt);
        suite.targets.labels.insert(suite.targets.labels.end(), p.samples, t);
        suite.target_names.push_back(p.name);
        suite.target_nearest.push_back(p.source);
    }

    const std::size_t ns = src.size() / 2, nt = tgt.size() / 2;
    const Tensor<double> raw_src = Tensor<double>::matrix(ns, 2, src);
    const Tensor<double> raw_tgt = Tensor<double>::matrix(nt, 2, tgt);
    std::vector<double> all = src;
    all.insert(all.end(), tgt.begin(), tgt.end());
    const Normalization norm = Normalization::fit_range(Tensor<double>::matrix(ns + nt, 2, std::move(all)));

    suite.sources.samples = norm.apply(raw_src);
    suite.sources.normalization = norm;
    suite.targets.samples = norm.apply(raw_tgt);
    suite.targets.normalization = norm;
    return suite;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& path) {
    if (at + 4 > b.size()) throw FormatError(path.string() + ": truncated header at offset " + std::to_string(at));
    return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
           std::uint32_t(b[at + 3]);
}

}  // namespace

std::vector<double> downsample_area(std::span<const double> image, std::size_t in_side, std::size_t out_side) {
    if (image.size() != in_side * in_side) throw DimensionError("downsample: image is not in_side^2");
    const double ratio = static_cast<double>(in_side) / static_cast<double>(out_side);
    // Overlap weights of each output cell with the input pixels, per axis.
    std::vector<std::vector<std::pair<std::size_t, double>>> axis(out_side);
    for (std::size_t o = 0; o < out_side; ++o) {
        const double lo = static_cast<double>(o) * ratio, hi = lo + ratio;
        for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in_side && static_cast<double>(i) < hi; ++i) {
            const double w = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
            if (w > 0) axis[o].push_back({i, w});
        }
    }
    std::vector<double> out(out_side * out_side);
    for (std::size_t oy = 0; oy < out_side; ++oy)
        for (std::size_t ox = 0; ox < out_side; ++ox) {
            double acc = 0, wsum = 0;
            for (auto [iy, wy] : axis[oy])
                for (auto [ix, wx] : axis[ox]) {
                    acc += wy * wx * image[iy * in_side + ix];
                    wsum += wy * wx;
                }
            out[oy * out_side + ox] = acc / wsum;
        }
    return out;
}

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t side) {
    if (side != 8 && side != 16) throw ContractError("downsample side must be 8 or 16");
    const auto ib = read_file(images);
    const auto lb = read_file(labels);
    const std::uint32_t imagic = be32(ib, 0, images);
    if (imagic != 0x00000803)
        throw FormatError(images.string() + ": bad image magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", imagic);
            return std::string(buf);
        }() + " (expected 0x00000803)");
    const std::uint32_t lmagic = be32(lb, 0, labels);
    if (lmagic != 0x00000801) throw FormatError(labels.string() + ": bad label magic (expected 0x00000801)");

    const std::size_t n = be32(ib, 4, images), rows = be32(ib, 8, images), cols = be32(ib, 12, images);
    const std::size_t nl = be32(lb, 4, labels);
    if (n != nl)
        throw FormatError("image/label count mismatch: " + std::to_string(n) + " images, " + std::to_string(nl) +
                          " labels");
    if (rows != cols || rows == 0) throw FormatError(images.string() + ": images must be square");
    if (ib.size() < 16 + n * rows * cols)
        throw FormatError(images.string() + ": truncated payload (" + std::to_string(ib.size()) + " bytes, need " +
                          std::to_string(16 + n * rows * cols) + ")");
    if (lb.size() < 8 + n) throw FormatError(labels.string() + ": truncated payload");

    Dataset ds;
    ds.samples = Tensor<double>({n, side * side});
    ds.labels.resize(n);
    std::vector<double> pixels(rows * cols);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* src = ib.data() + 16 + i * rows * cols;
        for (std::size_t p = 0; p < pixels.size(); ++p) pixels[p] = static_cast<double>(src[p]) / 127.5 - 1.0;
        const auto small = downsample_area(pixels, rows, side);
        std::copy(small.begin(), small.end(), ds.samples.row(i).begin());
        ds.labels[i] = lb[8 + i];
    }
    ds.normalization = {std::vector<double>(side * side, 1.0 / 127.5), std::vector<double>(side * side, -1.0)};
    return ds;
}

namespace {

std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k > n) throw ContractError("few_shot: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " samples");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace

Dataset few_shot(const Dataset& data, std::size_t k, std::uint64_t seed) {
    const auto idx = choose(data.size(), k, seed);
    Dataset out;
    out.samples = data.samples.gather_rows(idx);
    for (std::size_t i : idx) out.labels.push_back(data.labels[i]);
    out.normalization = data.normalization;
    return out;
}

Tensor<double> few_shot(const Tensor<double>& data, std::size_t k, std::uint64_t seed) {
    return data.gather_rows(choose(data.rows(), k, seed));
}

std::map<std::size_t, Dataset> split_by_class(const Dataset& data) {
    std::map<std::size_t, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < data.size(); ++i) rows[data.labels[i]].push_back(i);
    std::map<std::size_t, Dataset> out;
    for (const auto& [label, idx] : rows) {
        Dataset d;
        d.samples = data.samples.gather_rows(idx);
        d.labels.assign(idx.size(), label);
        d.normalization = data.normalization;
        out.emplace(label, std::move(d));
    }
    return out;
}

Dataset concat(std::span<const Dataset> parts) {
    Dataset out;
    if (parts.empty()) return out;
    std::vector<Tensor<double>> mats;
    for (const auto& p : parts) {
        mats.push_back(p.samples);
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    out.samples = vstack<double>(mats);
    out.normalization = parts.front().normalization;
    return out;
}

}  // namespace macl::tasks
