#include "qfed/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace qfed {

void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        }
        out.write(reinterpret_cast<const char *>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path &path, std::string_view text) {
    write_file_atomic(path, std::span<const std::uint8_t>(
                                reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path &path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

template <class T> void put_raw(std::vector<std::uint8_t> &out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T> T get_raw(const std::uint8_t *p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

} // namespace

void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) { put_raw(out, v); }
void put_u64(std::vector<std::uint8_t> &out, std::uint64_t v) { put_raw(out, v); }
void put_f64(std::vector<std::uint8_t> &out, double v) { put_raw(out, v); }
void put_f32(std::vector<std::uint8_t> &out, float v) { put_raw(out, v); }
std::uint32_t get_u32(const std::uint8_t *p) { return get_raw<std::uint32_t>(p); }
std::uint64_t get_u64(const std::uint8_t *p) { return get_raw<std::uint64_t>(p); }
double get_f64(const std::uint8_t *p) { return get_raw<double>(p); }
float get_f32(const std::uint8_t *p) { return get_raw<float>(p); }

} // namespace qfed
