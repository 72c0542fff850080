#include "exvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "exvae/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

namespace exvae {

namespace {

constexpr char kMagic[4] = {'E', 'X', 'V', 'C'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw LengthError("checkpoint truncated: " + path);
    return v;
}

} // namespace

void save_blocks(const std::string& path, const ParamTree& tree) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);

    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(tree.size()));
    for (const auto& [name, m] : tree) {
        if (name.size() > 0xffff) throw ContractError("checkpoint: block name too long");
        write_pod(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint32_t>(m.rows()));
        write_pod(out, static_cast<std::uint32_t>(m.cols()));
        // row-major payload regardless of Eigen's internal layout
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                write_pod(out, m(i, j));
    }
    if (!out) throw IoError("write failed: " + path);
}

ParamTree load_blocks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint8_t>(in, path);
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    const auto count = read_pod<std::uint32_t>(in, path);
    ParamTree tree;
    for (std::uint32_t b = 0; b < count; ++b) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw LengthError("checkpoint truncated: " + path);
        const auto rows = read_pod<std::uint32_t>(in, path);
        const auto cols = read_pod<std::uint32_t>(in, path);
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j)
                m(i, j) = read_pod<double>(in, path);
        tree.add(std::move(name), std::move(m));
    }
    return tree;
}

} // namespace exvae
