#include "exvae/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "exvae/errors.hpp"

namespace exvae {

namespace {

constexpr std::uint32_t kImageMagic = 2051; // 0x00000803
constexpr std::uint32_t kLabelMagic = 2049; // 0x00000801

std::uint32_t read_be_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size())
        throw LengthError("idx: header truncated");
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
}

void append_be_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("read failed: " + path);
    return bytes;
}

std::vector<std::uint8_t> read_gzip_bytes(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open gzip file: " + path);
    std::vector<std::uint8_t> bytes;
    std::uint8_t buf[1 << 16];
    int got;
    while ((got = gzread(f, buf, sizeof(buf))) > 0)
        bytes.insert(bytes.end(), buf, buf + got);
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw IoError("gzip decompression failed: " + path);
    return bytes;
}

} // namespace

void LabeledDataset::validate() const {
    if (n() <= 0 || dim() <= 0)
        throw ArgumentError("dataset: n and d must be positive");
    if (has_labels() && static_cast<int>(labels.size()) != n())
        throw ConsistencyError("dataset: label count does not match image count");
    if (rows * cols != dim())
        throw ConsistencyError("dataset: rows*cols does not match flattened dimension");
    for (int i = 0; i < n(); ++i)
        for (int j = 0; j < dim(); ++j) {
            const double v = images(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw DomainError("dataset: pixel outside [0,1]");
        }
    for (int label : labels)
        if (label < 0 || label > 9)
            throw DomainError("dataset: label outside {0..9}");
}

LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes,
                         std::optional<std::span<const std::uint8_t>> label_bytes) {
    const std::uint32_t magic = read_be_u32(image_bytes, 0);
    if (magic != kImageMagic)
        throw FormatError("idx: bad image magic " + std::to_string(magic));
    const std::uint32_t count = read_be_u32(image_bytes, 4);
    const std::uint32_t rows = read_be_u32(image_bytes, 8);
    const std::uint32_t cols = read_be_u32(image_bytes, 12);
    const std::size_t expected = 16 + static_cast<std::size_t>(count) * rows * cols;
    if (image_bytes.size() != expected)
        throw LengthError("idx: image payload length mismatch");

    LabeledDataset ds;
    ds.rows = static_cast<int>(rows);
    ds.cols = static_cast<int>(cols);
    ds.images.resize(count, static_cast<Eigen::Index>(rows) * cols);
    const std::uint8_t* px = image_bytes.data() + 16;
    for (std::uint32_t i = 0; i < count; ++i)
        for (std::uint32_t j = 0; j < rows * cols; ++j)
            ds.images(i, j) = static_cast<double>(px[static_cast<std::size_t>(i) * rows * cols + j]) / 255.0;

    if (label_bytes) {
        const std::uint32_t lmagic = read_be_u32(*label_bytes, 0);
        if (lmagic != kLabelMagic)
            throw FormatError("idx: bad label magic " + std::to_string(lmagic));
        const std::uint32_t lcount = read_be_u32(*label_bytes, 4);
        if (label_bytes->size() != 8 + static_cast<std::size_t>(lcount))
            throw LengthError("idx: label payload length mismatch");
        if (lcount != count)
            throw ConsistencyError("idx: image count " + std::to_string(count) +
                                   " != label count " + std::to_string(lcount));
        ds.labels.resize(lcount);
        for (std::uint32_t i = 0; i < lcount; ++i)
            ds.labels[i] = static_cast<int>((*label_bytes)[8 + i]);
    }
    return ds;
}

std::vector<std::uint8_t> serialize_idx_images(const LabeledDataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + static_cast<std::size_t>(ds.n()) * ds.dim());
    append_be_u32(out, kImageMagic);
    append_be_u32(out, static_cast<std::uint32_t>(ds.n()));
    append_be_u32(out, static_cast<std::uint32_t>(ds.rows));
    append_be_u32(out, static_cast<std::uint32_t>(ds.cols));
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j)
            out.push_back(static_cast<std::uint8_t>(std::lround(ds.images(i, j) * 255.0)));
    return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const LabeledDataset& ds) {
    if (!ds.has_labels())
        throw ArgumentError("serialize_idx_labels: dataset has no labels");
    std::vector<std::uint8_t> out;
    append_be_u32(out, kLabelMagic);
    append_be_u32(out, static_cast<std::uint32_t>(ds.labels.size()));
    for (int label : ds.labels)
        out.push_back(static_cast<std::uint8_t>(label));
    return out;
}

LabeledDataset load_idx(const std::string& image_path, const std::optional<std::string>& label_path) {
    auto read = [](const std::string& path) {
        return ends_with(path, ".gz") ? read_gzip_bytes(path) : read_file_bytes(path);
    };
    const std::vector<std::uint8_t> image_bytes = read(image_path);
    if (!label_path)
        return parse_idx(image_bytes);
    const std::vector<std::uint8_t> label_bytes = read(*label_path);
    return parse_idx(image_bytes, std::span<const std::uint8_t>(label_bytes));
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

Eigen::MatrixXd dynamic_binarize(const Eigen::MatrixXd& batch, Rng& rng) {
    Eigen::MatrixXd out(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
        for (Eigen::Index j = 0; j < batch.cols(); ++j) {
            const double p = batch(i, j);
            if (!(p >= 0.0 && p <= 1.0))
                throw DomainError("dynamic_binarize: value outside [0,1]");
            out(i, j) = rng.uniform() < p ? 1.0 : 0.0;
        }
    return out;
}

LabeledDataset take(const LabeledDataset& ds, std::span<const int> indices) {
    LabeledDataset out;
    out.rows = ds.rows;
    out.cols = ds.cols;
    out.tag = ds.tag;
    out.images.resize(static_cast<Eigen::Index>(indices.size()), ds.images.cols());
    if (ds.has_labels()) out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int i = indices[k];
        if (i < 0 || i >= ds.n())
            throw ContractError("take: index out of range");
        out.images.row(static_cast<Eigen::Index>(k)) = ds.images.row(i);
        if (ds.has_labels()) out.labels.push_back(ds.labels[i]);
    }
    return out;
}

std::tuple<LabeledDataset, LabeledDataset, LabeledDataset>
split(const LabeledDataset& ds, std::array<int, 3> sizes, std::uint64_t seed) {
    const long total = static_cast<long>(sizes[0]) + sizes[1] + sizes[2];
    if (sizes[0] < 0 || sizes[1] < 0 || sizes[2] < 0 || total != ds.n())
        throw ArgumentError("split: sizes must be non-negative and sum to n");

    std::vector<int> perm(static_cast<std::size_t>(ds.n()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm);

    auto slice = [&](int offset, int count, SplitTag tag) {
        LabeledDataset part = take(ds, std::span<const int>(perm.data() + offset, static_cast<std::size_t>(count)));
        part.tag = tag;
        return part;
    };
    return {slice(0, sizes[0], SplitTag::train),
            slice(sizes[0], sizes[1], SplitTag::valid),
            slice(sizes[0] + sizes[1], sizes[2], SplitTag::test)};
}

} // namespace exvae
