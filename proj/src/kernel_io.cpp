#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>

#include "socialmkl/error.hpp"
#include "socialmkl/kernels.hpp"

namespace socialmkl {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'M', 'K', 'L', 'K', 'E', 'R', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 32;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(char* dst, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(dst, bytes, sizeof(T));
}

template <typename T>
T get_le(const char* src) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, src, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

void write_kernel(const KernelMatrix& kernel, const std::filesystem::path& path) {
    const std::uint64_t n = kernel.size();
    std::vector<char> buffer(kHeaderSize + n * n * sizeof(double), '\0');
    std::memcpy(buffer.data(), kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(buffer.data() + 8, kVersion);
    put_le<std::uint32_t>(buffer.data() + 12, static_cast<std::uint32_t>(kernel.label()));
    put_le<std::uint64_t>(buffer.data() + 16, n);
    buffer[24] = kernel.normalized() ? 1 : 0;
    char* out = buffer.data() + kHeaderSize;
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t j = 0; j < n; ++j) {
            put_le<double>(out, kernel(i, j));
            out += sizeof(double);
        }
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp);
        f.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
        if (!f) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

KernelMatrix read_kernel(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::array<char, kHeaderSize> header{};
    if (!f.read(header.data(), header.size())) {
        throw ValidationError(path.string() + ": truncated header");
    }
    if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
        throw ValidationError(path.string() + ": bad magic");
    }
    if (get_le<std::uint32_t>(header.data() + 8) != kVersion) {
        throw ValidationError(path.string() + ": unsupported version");
    }
    const auto label = get_le<std::uint32_t>(header.data() + 12);
    if (label >= kKernelCount) throw ValidationError(path.string() + ": bad label");
    const auto n = get_le<std::uint64_t>(header.data() + 16);
    const bool normalized = header[24] != 0;
    if (n > (1u << 20)) throw ValidationError(path.string() + ": implausible size");

    std::vector<char> body(n * n * sizeof(double));
    if (!f.read(body.data(), static_cast<std::streamsize>(body.size()))) {
        throw ValidationError(path.string() + ": truncated body");
    }
    if (f.peek() != std::char_traits<char>::eof()) {
        throw ValidationError(path.string() + ": trailing bytes");
    }
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd values(nn, nn);
    const char* in = body.data();
    for (Eigen::Index i = 0; i < nn; ++i) {
        for (Eigen::Index j = 0; j < nn; ++j) {
            values(i, j) = get_le<double>(in);
            in += sizeof(double);
        }
    }
    return KernelMatrix(static_cast<KernelLabel>(label), std::move(values), normalized);
}

KernelCache::KernelCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create kernel cache " + dir_.string() + ": " + ec.message());
}

KernelMatrix KernelCache::get_or_build(const std::string& key,
                                       const std::function<KernelMatrix()>& build) {
    const auto path = dir_ / (key + ".kern");
    if (std::filesystem::exists(path)) {
        try {
            auto k = read_kernel(path);
            ++hits_;
            return k;
        } catch (const Error& e) {
            std::cerr << "warning: ignoring corrupt kernel cache entry (" << e.what()
                      << "); rebuilding\n";
        }
    }
    ++misses_;
    auto k = build();
    write_kernel(k, path);
    return k;
}

namespace {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    }
    void str(const std::string& s) {
        bytes(s.data(), s.size());
        bytes("\0", 1);
    }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof v);
    }
};

}  // namespace

std::string dataset_fingerprint(const Dataset& dataset) {
    Fnv1a f;
    for (const auto& id : dataset.user_ids()) f.str(id);
    for (const auto& id : dataset.item_ids()) f.str(id);
    for (const auto& e : dataset.ratings().entries()) {
        f.pod<std::uint64_t>(e.user);
        f.pod<std::uint64_t>(e.item);
        f.pod(e.value);
    }
    for (auto [a, b] : dataset.graph().edges()) {
        f.pod<std::uint64_t>(a);
        f.pod<std::uint64_t>(b);
    }
    for (const auto& set : dataset.demographics()) {
        for (const auto& t : set) f.str(t);
        f.str("|");
    }
    for (const auto& set : dataset.claims()) {
        for (const auto& t : set) f.str(t);
        f.str("|");
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
    return buf;
}

std::string kernel_cache_key(const std::string& fingerprint, KernelLabel label,
                             const KernelConfig& config) {
    Fnv1a f;
    f.str(fingerprint);
    f.pod(static_cast<std::uint32_t>(label));
    switch (label) {
        case KernelLabel::ImpactDistribution:
            f.pod(config.alpha);
            f.pod(config.isolated == IsolatedNodePolicy::Strict);
            f.pod(config.normalize);
            break;
        case KernelLabel::CommuteTime: f.pod(config.normalize); break;
        case KernelLabel::Community: f.pod(config.community_seed); break;
        case KernelLabel::Action2: f.pod(config.sigma.value_or(-1.0)); break;
        default: break;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
    return std::string(kernel_label_name(label)) + "-" + buf;
}

KernelBank build_kernel_bank(const Dataset& dataset, const KernelConfig& config, KernelCache& cache) {
    config.validate();
    const auto fingerprint = dataset_fingerprint(dataset);
    KernelBank bank;
    for (auto label : kAllKernelLabels) {
        bank[label] = cache.get_or_build(kernel_cache_key(fingerprint, label, config),
                                         [&] { return build_kernel(dataset, config, label); });
    }
    return bank;
}

}  // namespace socialmkl
