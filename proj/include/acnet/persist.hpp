#pragma once

#include <acnet/config.hpp>
#include <acnet/pipeline.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace acnet {

// ACN1 layout, all integers little-endian:
//   "ACN1" | u32 version | u64 seed | u32 variables | u64 train_rows | f64 baseline_mse
//   u32 name count, then per name: u32 length + bytes
//   u32 config length + config echo text (parseable config lines)
//   u32 tensor count, then per tensor: u32 name length + name, u32 rank, u32 dims[rank]
//   raw f64 data of every tensor in the same order
inline constexpr char kModelMagic[4] = {'A', 'C', 'N', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(checked_u32(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return bytes_; }

    static std::uint32_t checked_u32(std::size_t v) {
        if (v > 0xFFFFFFFFu) throw UsageError("model field too large for the ACN1 format");
        return static_cast<std::uint32_t>(v);
    }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError("model file '" + source_ + "': " + what); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
    }
    std::vector<char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes a fitted model. Output depends only on the model contents.
inline std::vector<char> serialize_model(Model m) {
    if (!m.readout.fitted()) throw UsageError("cannot save a model whose output weights are not fitted");
    detail::ByteWriter w;
    w.raw(kModelMagic, 4);
    w.u32(kModelVersion);
    w.u64(m.cfg.seed);
    w.u32(detail::ByteWriter::checked_u32(m.variables));
    w.u64(m.train_rows);
    w.f64(m.baseline_mse);
    w.u32(detail::ByteWriter::checked_u32(m.var_names.size()));
    for (const auto& n : m.var_names) w.str(n);
    w.str(to_text(m.cfg));
    const auto tensors = m.named_tensors();
    w.u32(detail::ByteWriter::checked_u32(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.u32(detail::ByteWriter::checked_u32(t->rank()));
        for (std::size_t d : t->shape()) w.u32(detail::ByteWriter::checked_u32(d));
    }
    for (const auto& [name, t] : tensors)
        for (double v : t->data()) w.f64(v);
    return w.bytes();
}

inline Model deserialize_model(std::vector<char> bytes, const std::string& source) {
    detail::ByteReader r(std::move(bytes), source);
    if (r.raw(4) != std::string(kModelMagic, 4)) r.fail("bad magic, not an ACN1 model");
    if (const std::uint32_t v = r.u32(); v != kModelVersion) r.fail("unsupported version " + std::to_string(v));
    const std::uint64_t seed = r.u64();
    const std::uint32_t variables = r.u32();
    const std::uint64_t train_rows = r.u64();
    const double baseline = r.f64();
    std::vector<std::string> names(r.u32());
    for (auto& n : names) n = r.str();
    ModelConfig cfg = parse_config(r.str(), source + " (config echo)");
    if (cfg.seed != seed) r.fail("seed field disagrees with the config echo");

    Model m = Model::init(cfg, variables);
    m.train_rows = static_cast<std::size_t>(train_rows);
    m.baseline_mse = baseline;
    m.var_names = std::move(names);
    auto tensors = m.named_tensors();
    const std::uint32_t count = r.u32();
    if (count != tensors.size()) r.fail("expected " + std::to_string(tensors.size()) + " tensors, found " + std::to_string(count));
    std::vector<Shape> shapes;
    for (auto& [name, t] : tensors) {
        if (const std::string got = r.str(); got != name) r.fail("expected tensor '" + name + "', found '" + got + "'");
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        const Shape expected =
            name == "readout.beta" ? Shape{m.readout.hidden_nodes(), m.outputs()} : t->shape();
        if (shape != expected) r.fail("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " + shape_string(expected));
        shapes.push_back(std::move(shape));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        Tensor t(shapes[i]);
        for (double& v : t.data()) v = r.f64();
        *tensors[i].second = std::move(t);
    }
    if (!r.done()) r.fail("trailing bytes after tensor data");
    return m;
}

inline void save_model(const std::string& path, const Model& m) {
    const auto bytes = serialize_model(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write model file '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing model file '" + path + "'");
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open model file '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(std::move(bytes), path);
}

}  // namespace acnet
