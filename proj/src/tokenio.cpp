#include "mamere/tokenio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mamere/errors.hpp"
#include "mamere/rng.hpp"

namespace mamere {

void TokenMatrix::validate() const {
    if (batch < 1 || length < 1 || dim < 1) {
        throw std::invalid_argument("TokenMatrix: B, L, d must all be >= 1");
    }
    if (l_spec < 0 || l_spec >= length) {
        throw std::invalid_argument("TokenMatrix: need 0 <= l_spec < L");
    }
    if (static_cast<index_t>(data.size()) != values()) {
        throw std::invalid_argument("TokenMatrix: data size does not match B*L*d");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw std::invalid_argument("TokenMatrix: non-finite value at flat index " +
                                        std::to_string(i));
        }
    }
}

index_t FusionStateFile::preserved_count() const {
    return static_cast<index_t>(std::count(preserved_mask.begin(), preserved_mask.end(), 1));
}

void FusionStateFile::validate() const {
    if (version != 1) {
        throw StateError("fusion state: unsupported version " + std::to_string(version));
    }
    if (M < 1 || N < 1 || l_spec < 0) {
        throw StateError("fusion state: M and N must be >= 1 and l_spec >= 0");
    }
    if (static_cast<index_t>(dst_index.size()) != M ||
        static_cast<index_t>(src_index.size()) != N) {
        throw StateError("fusion state: index set sizes disagree with M, N");
    }
    if (static_cast<index_t>(preserved_mask.size()) != N) {
        throw StateError("fusion state: preserved_mask must have N entries");
    }
    for (std::uint8_t f : preserved_mask) {
        if (f != 0 && f != 1) throw StateError("fusion state: preserved_mask entries must be 0/1");
    }

    // dst, src and specials must tile {0..L-1} exactly.
    const index_t L = original_length();
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(L), 0);
    auto mark = [&](index_t pos, const char* what) {
        if (pos < 0 || pos >= L) {
            throw StateError(std::string("fusion state: ") + what + " position " +
                             std::to_string(pos) + " outside [0, L)");
        }
        if (seen[static_cast<std::size_t>(pos)]++) {
            throw StateError(std::string("fusion state: position ") + std::to_string(pos) +
                             " assigned twice");
        }
    };
    for (index_t p = 0; p < l_spec; ++p) mark(p, "special");
    for (index_t p : dst_index) mark(p, "dst");
    for (index_t p : src_index) mark(p, "src");
    if (!std::is_sorted(dst_index.begin(), dst_index.end()) ||
        !std::is_sorted(src_index.begin(), src_index.end())) {
        throw StateError("fusion state: index sets must be ascending");
    }

    const WeightTriplet* prev = nullptr;
    for (const WeightTriplet& t : weights) {
        if (t.b < 0 || t.i < 0 || t.i >= M || t.j < 0 || t.j >= N) {
            throw StateError("fusion state: triplet (" + std::to_string(t.b) + "," +
                             std::to_string(t.i) + "," + std::to_string(t.j) +
                             ") out of range");
        }
        if (!(t.value > 0.0) || !std::isfinite(t.value)) {
            throw StateError("fusion state: triplet values must be finite and > 0");
        }
        if (preserved_mask[static_cast<std::size_t>(t.j)]) {
            throw StateError("fusion state: triplet references preserved column " +
                             std::to_string(t.j));
        }
        if (prev && !(std::tie(prev->b, prev->i, prev->j) < std::tie(t.b, t.i, t.j))) {
            throw StateError("fusion state: triplets must be strictly sorted by (b, i, j)");
        }
        prev = &t;
    }

    // layout_order must be [0..l_spec) ++ dst_index ++ preserved src positions.
    const index_t r = preserved_count();
    if (static_cast<index_t>(layout_order.size()) != l_spec + M + r) {
        throw StateError("fusion state: layout_order length must be l_spec + M + r");
    }
    index_t slot = 0;
    for (index_t p = 0; p < l_spec; ++p, ++slot) {
        if (layout_order[static_cast<std::size_t>(slot)] != p) {
            throw StateError("fusion state: layout_order specials must map to 0..l_spec-1");
        }
    }
    for (index_t i = 0; i < M; ++i, ++slot) {
        if (layout_order[static_cast<std::size_t>(slot)] != dst_index[static_cast<std::size_t>(i)]) {
            throw StateError("fusion state: layout_order destination slots must follow dst_index");
        }
    }
    for (index_t j = 0; j < N; ++j) {
        if (!preserved_mask[static_cast<std::size_t>(j)]) continue;
        if (layout_order[static_cast<std::size_t>(slot)] != src_index[static_cast<std::size_t>(j)]) {
            throw StateError("fusion state: layout_order preserved slots must follow src order");
        }
        ++slot;
    }
}

namespace tokenio {
namespace {

static_assert(std::endian::native == std::endian::little,
              "this build assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'A', 'M', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 24;

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off, const std::string& path) {
    if (off + sizeof(T) > buf.size()) {
        throw FormatError(path + ": truncated at byte offset " + std::to_string(off));
    }
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(path + ": read failure");
    return buf;
}

void spill(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw IoError(path + ": write failure");
}

}  // namespace

void write_tokens(const TokenMatrix& t, const std::string& path, Dtype dtype) {
    t.validate();
    std::string buf;
    buf.reserve(kHeaderBytes +
                static_cast<std::size_t>(t.values()) * (dtype == Dtype::f64 ? 8 : 4));
    buf.append(kMagic, 4);
    put<std::uint16_t>(buf, kVersion);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(buf, 0);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.batch));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.length));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.dim));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.l_spec));
    if (dtype == Dtype::f64) {
        for (double v : t.data) put<double>(buf, v);
    } else {
        for (double v : t.data) put<float>(buf, static_cast<float>(v));
    }
    spill(path, buf);
}

Dtype read_dtype(const std::string& path) {
    const std::string buf = slurp(path);
    std::size_t off = 0;
    char magic[4];
    for (char& c : magic) c = take<char>(buf, off, path);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path + ": bad magic at byte offset 0");
    }
    take<std::uint16_t>(buf, off, path);
    const auto code = take<std::uint8_t>(buf, off, path);
    if (code > 1) throw FormatError(path + ": unknown dtype code at byte offset 6");
    return static_cast<Dtype>(code);
}

TokenMatrix read_tokens(const std::string& path) {
    const std::string buf = slurp(path);
    std::size_t off = 0;

    char magic[4];
    for (char& c : magic) c = take<char>(buf, off, path);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path + ": bad magic at byte offset 0");
    }
    const auto version = take<std::uint16_t>(buf, off, path);
    if (version != kVersion) {
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    }
    const auto dtype_code = take<std::uint8_t>(buf, off, path);
    if (dtype_code > 1) {
        throw FormatError(path + ": unknown dtype code " + std::to_string(dtype_code) +
                          " at byte offset 6");
    }
    const auto pad = take<std::uint8_t>(buf, off, path);
    if (pad != 0) throw FormatError(path + ": nonzero pad byte at offset 7");

    TokenMatrix t;
    t.batch = take<std::uint32_t>(buf, off, path);
    t.length = take<std::uint32_t>(buf, off, path);
    t.dim = take<std::uint32_t>(buf, off, path);
    t.l_spec = take<std::uint32_t>(buf, off, path);
    if (t.batch < 1 || t.length < 1 || t.dim < 1 || t.l_spec >= t.length) {
        throw FormatError(path + ": inconsistent header counts");
    }

    const index_t n = t.values();
    const std::size_t value_size = (dtype_code == 1) ? 8 : 4;
    const std::size_t want = kHeaderBytes + static_cast<std::size_t>(n) * value_size;
    if (buf.size() != want) {
        throw FormatError(path + ": payload is " + std::to_string(buf.size() - kHeaderBytes) +
                          " bytes, expected " + std::to_string(want - kHeaderBytes) +
                          " (truncation at byte offset " + std::to_string(buf.size()) + ")");
    }

    t.data.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        const double v = (dtype_code == 1) ? take<double>(buf, off, path)
                                           : static_cast<double>(take<float>(buf, off, path));
        if (!std::isfinite(v)) {
            throw FormatError(path + ": non-finite value at byte offset " +
                              std::to_string(off - value_size));
        }
        t.data[static_cast<std::size_t>(i)] = v;
    }
    return t;
}

void write_fusion_state(const FusionStateFile& s, const std::string& path) {
    s.validate();
    nlohmann::json j;
    j["version"] = s.version;
    j["M"] = s.M;
    j["N"] = s.N;
    j["l_spec"] = s.l_spec;
    j["dst_index"] = s.dst_index;
    j["src_index"] = s.src_index;
    j["preserved_mask"] = s.preserved_mask;
    auto& w = j["weights"] = nlohmann::json::array();
    for (const WeightTriplet& t : s.weights) {
        w.push_back({t.b, t.i, t.j, t.value});
    }
    j["layout_order"] = s.layout_order;
    spill(path, j.dump(2) + "\n");
}

FusionStateFile read_fusion_state(const std::string& path) {
    const std::string buf = slurp(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buf);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": invalid JSON: " + e.what());
    }
    FusionStateFile s;
    try {
        s.version = j.at("version").get<int>();
        s.M = j.at("M").get<index_t>();
        s.N = j.at("N").get<index_t>();
        s.l_spec = j.at("l_spec").get<index_t>();
        s.dst_index = j.at("dst_index").get<std::vector<index_t>>();
        s.src_index = j.at("src_index").get<std::vector<index_t>>();
        s.preserved_mask = j.at("preserved_mask").get<std::vector<std::uint8_t>>();
        for (const auto& row : j.at("weights")) {
            if (!row.is_array() || row.size() != 4) {
                throw FormatError(path + ": weight triplets must be [b, i, j, value]");
            }
            s.weights.push_back({row[0].get<index_t>(), row[1].get<index_t>(),
                                 row[2].get<index_t>(), row[3].get<double>()});
        }
        s.layout_order = j.at("layout_order").get<std::vector<index_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    s.validate();
    return s;
}

TokenMatrix gen_synthetic(index_t B, index_t L, index_t d, index_t l_spec,
                          std::uint64_t seed, const GenSpec& spec) {
    if (B < 1 || L < 1 || d < 1 || l_spec < 0 || l_spec >= L) {
        throw std::invalid_argument("gen_synthetic: need B, L, d >= 1 and 0 <= l_spec < L");
    }
    TokenMatrix t(B, L, d, l_spec);
    NormalStream normals(seed);

    if (spec.pattern == Pattern::gaussian) {
        for (double& v : t.data) v = normals.next();
        return t;
    }

    const index_t k = spec.clusters;
    if (k < 1 || k > L) {
        throw std::invalid_argument("gen_synthetic: clustered needs 1 <= k <= L, got k=" +
                                    std::to_string(k));
    }
    // Centers first, then a row-major pass over (b, l); draw order is part of
    // the format so identical seeds give identical tensors.
    Matrix centers(k, d);
    for (index_t c = 0; c < k; ++c) {
        double norm2 = 0.0;
        for (index_t x = 0; x < d; ++x) {
            const double v = normals.next();
            centers(c, x) = v;
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (index_t x = 0; x < d; ++x) centers(c, x) *= inv;
    }
    for (index_t b = 0; b < B; ++b) {
        for (index_t l = 0; l < L; ++l) {
            if (l < l_spec) {
                for (index_t x = 0; x < d; ++x) t.at(b, l, x) = normals.next();
                continue;
            }
            const index_t c = (l - l_spec) % k;
            for (index_t x = 0; x < d; ++x) {
                t.at(b, l, x) = centers(c, x) + spec.noise_scale * normals.next();
            }
        }
    }
    return t;
}

}  // namespace tokenio
}  // namespace mamere
