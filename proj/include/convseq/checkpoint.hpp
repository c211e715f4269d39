#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "convseq/model.hpp"

namespace convseq {

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(bool(is), "checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'Q', '1'};

inline void save_checkpoint(const std::string& path, const SeqModel& model) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "checkpoint: cannot open " + path + " for writing");
    os.write(kCheckpointMagic, 4);
    std::string cfg = model.cfg.to_text();
    detail::write_u64(os, cfg.size());
    os.write(cfg.data(), std::streamsize(cfg.size()));
    detail::write_u64(os, model.params().size());
    for (const auto& [name, t] : model.params()) {
        detail::write_u64(os, name.size());
        os.write(name.data(), std::streamsize(name.size()));
        detail::write_u64(os, t.rank());
        for (std::size_t dim : t.shape) detail::write_u64(os, dim);
        for (double v : t.data) detail::write_f64(os, v);
    }
    require(bool(os), "checkpoint: write failed for " + path);
}

inline SeqModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    require(bool(is) && std::memcmp(magic, kCheckpointMagic, 4) == 0,
            "checkpoint: bad magic in " + path);
    std::uint64_t cfg_len = detail::read_u64(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), std::streamsize(cfg_len));
    require(bool(is), "checkpoint: truncated config");
    ModelConfig cfg = ModelConfig::from_text(cfg_text);
    SeqModel model(cfg, /*init_seed=*/0);
    std::uint64_t count = detail::read_u64(is);
    require(count == model.params().size(), "checkpoint: tensor count mismatch");
    for (auto& [name, t] : model.params()) {
        std::uint64_t name_len = detail::read_u64(is);
        std::string stored(name_len, '\0');
        is.read(stored.data(), std::streamsize(name_len));
        require(bool(is) && stored == name, "checkpoint: unexpected tensor " + stored);
        std::uint64_t rank = detail::read_u64(is);
        require(rank == t.rank(), "checkpoint: rank mismatch for " + name);
        for (std::size_t a = 0; a < rank; ++a)
            require(detail::read_u64(is) == t.shape[a], "checkpoint: shape mismatch for " + name);
        for (double& v : t.data) v = detail::read_f64(is);
    }
    require(bool(is), "checkpoint: truncated tensor data");
    return model;
}

}  // namespace convseq
