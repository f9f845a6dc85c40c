#include "kanfpn/tnsr_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace kanfpn {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "TNSR encoding assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError("truncated TNSR header");
    }
    return v;
}

} // namespace

void write_tnsr(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 4);
    put<std::uint16_t>(os, kVersion);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (auto extent : t.shape()) {
        put<std::uint64_t>(os, static_cast<std::uint64_t>(extent));
    }
    dispatch(t.dtype(), [&](auto tag) {
        auto d = t.data<decltype(tag)>();
        os.write(reinterpret_cast<const char*>(d.data()),
                 static_cast<std::streamsize>(d.size() * sizeof(decltype(tag))));
    });
    if (!os) {
        throw FormatError("failed writing TNSR blob");
    }
}

Tensor read_tnsr(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad TNSR magic");
    }
    const auto version = get<std::uint16_t>(is);
    if (version != kVersion) {
        throw FormatError("unsupported TNSR version " + std::to_string(version));
    }
    const auto dtype_code = get<std::uint8_t>(is);
    if (dtype_code > 1) {
        throw FormatError("unknown TNSR dtype " + std::to_string(dtype_code));
    }
    const auto ndim = get<std::uint8_t>(is);
    if (ndim == 0) {
        throw FormatError("TNSR blob with zero dimensions");
    }
    Shape shape(ndim);
    for (auto& extent : shape) {
        extent = static_cast<std::int64_t>(get<std::uint64_t>(is));
        if (extent < 1) {
            throw FormatError("TNSR extent must be positive");
        }
    }
    const auto dtype = static_cast<DType>(dtype_code);
    return dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> buf(static_cast<std::size_t>(numel_of(shape)));
        if (!is.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(buf.size() * sizeof(T)))) {
            throw FormatError("truncated TNSR payload");
        }
        return Tensor::from_buffer(std::move(buf), shape);
    });
}

void save_tnsr(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    write_tnsr(os, t);
}

Tensor load_tnsr(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open " + path.string());
    }
    return read_tnsr(is);
}

} // namespace kanfpn
