#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "charlee/errors.hpp"
#include "charlee/numerics/rng.hpp"

namespace charlee {

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grads;

    ParamTensor() = default;
    ParamTensor(std::string n, std::vector<std::size_t> s)
        : name(std::move(n)), shape(std::move(s)), values(shape_size(shape), 0.0), grads(values.size(), 0.0) {}

    std::size_t size() const noexcept { return values.size(); }
    void zero_grad() noexcept { std::fill(grads.begin(), grads.end(), 0.0); }
};

/// Named parameters with stable addresses (references survive later adds).
class ParamStore {
public:
    ParamTensor& add(const std::string& name, std::vector<std::size_t> shape) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        tensors_.emplace_back(name, std::move(shape));
        index_[name] = tensors_.size() - 1;
        return tensors_.back();
    }

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)).
    ParamTensor& add_glorot(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                            std::size_t fan_out, RngStream& rng) {
        auto& p = add(name, std::move(shape));
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : p.values) v = rng.uniform(-limit, limit);
        return p;
    }

    ParamTensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return tensors_[it->second];
    }
    const ParamTensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return tensors_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::deque<ParamTensor>& tensors() noexcept { return tensors_; }
    const std::deque<ParamTensor>& tensors() const noexcept { return tensors_; }
    std::size_t size() const noexcept { return tensors_.size(); }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

    /// Values of another store with the same layout are copied in.
    void copy_values_from(const ParamStore& other) {
        for (auto& t : tensors_) {
            const auto& o = other.get(t.name);
            if (o.shape != t.shape) throw ConfigError("shape mismatch copying parameter " + t.name);
            t.values = o.values;
        }
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            for (double v : t.values)
                if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::deque<ParamTensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

// Checkpoint layout, all integers little-endian:
//   "CHRLPRM\0" (8 bytes) | u32 version | u64 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 values[prod(dims)]
namespace checkpoint {

inline constexpr char kMagic[8] = {'C', 'H', 'R', 'L', 'P', 'R', 'M', '\0'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <class T>
void put(std::vector<unsigned char>& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw InputError("checkpoint truncated");
    }
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<unsigned char> encode(const ParamStore& store) {
    std::vector<unsigned char> out(kMagic, kMagic + 8);
    detail::put<std::uint32_t>(out, kVersion);
    detail::put<std::uint64_t>(out, store.size());
    for (const auto& t : store.tensors()) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put<std::uint64_t>(out, d);
        for (double v : t.values) detail::put<double>(out, v);
    }
    return out;
}

inline ParamStore decode(std::span<const unsigned char> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw InputError("not a parameter checkpoint");
    detail::Reader r(bytes.subspan(8));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint64_t>();
    ParamStore store;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(rank);
        std::uint64_t elems = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.get<std::uint64_t>());
            if (d != 0 && elems > r.remaining() / d) throw InputError("checkpoint truncated");
            elems *= d;
        }
        if (elems > r.remaining() / sizeof(double)) throw InputError("checkpoint truncated");
        auto& t = store.add(name, shape);
        for (auto& v : t.values) v = r.get<double>();
    }
    if (!r.done()) throw InputError("trailing bytes in checkpoint");
    return store;
}

inline void save(const ParamStore& store, const std::string& path) {
    const auto bytes = encode(store);
    const std::filesystem::path fs_path(path);
    if (fs_path.has_parent_path()) std::filesystem::create_directories(fs_path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ParamStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

} // namespace checkpoint

} // namespace charlee
