#pragma once

// Binary readers and writers for grids and mask sets, and the taxonomy text
// format. All binary formats are little-endian; see README.md.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ranges>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psc/core.hpp"
#include "psc/error.hpp"
#include "psc/masks.hpp"

namespace psc {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 22;

/// Label values with a reserved meaning in files.
struct LabelCodes {
    ClassId empty = 0;
    ClassId unlabeled = kDefaultUnlabeledId;

    static LabelCodes of(const ClassTaxonomy& tax) { return {tax.empty_class_id(), tax.unlabeled_id()}; }
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void magic(std::string_view m) { out_.insert(out_.end(), m.begin(), m.end()); }
    void coord(const Coord& c) {
        u32(static_cast<std::uint32_t>(c.x));
        u32(static_cast<std::uint32_t>(c.y));
        u32(static_cast<std::uint32_t>(c.z));
    }
    void header(std::string_view m, const Dims& dims, float voxel_size) {
        magic(m);
        u16(kFormatVersion);
        u32(static_cast<std::uint32_t>(dims.x));
        u32(static_cast<std::uint32_t>(dims.y));
        u32(static_cast<std::uint32_t>(dims.z));
        f32(voxel_size);
    }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    Coord coord(const Dims& dims) {
        const std::uint32_t x = u32();
        const std::uint32_t y = u32();
        const std::uint32_t z = u32();
        if (x >= static_cast<std::uint32_t>(dims.x) || y >= static_cast<std::uint32_t>(dims.y) ||
            z >= static_cast<std::uint32_t>(dims.z)) {
            throw FormatError(FormatError::Kind::coord_out_of_range,
                              "coord (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z) +
                                  ") outside dims " + to_string(dims));
        }
        return {static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), static_cast<std::int32_t>(z)};
    }

    // Magic, version and dims; returns (dims, voxel_size).
    std::pair<Dims, float> header(std::string_view expected_magic) {
        if (in_.size() < kHeaderBytes) {
            throw FormatError(FormatError::Kind::size_mismatch,
                              "file has " + std::to_string(in_.size()) + " bytes, shorter than the header");
        }
        if (std::string_view(reinterpret_cast<const char*>(in_.data()), 4) != expected_magic) {
            throw FormatError(FormatError::Kind::bad_magic, "expected magic " + std::string(expected_magic));
        }
        pos_ = 4;
        const auto version = u16();
        if (version != kFormatVersion) {
            throw FormatError(FormatError::Kind::bad_version, "unsupported version " + std::to_string(version));
        }
        std::array<std::uint32_t, 3> d{u32(), u32(), u32()};
        for (auto v : d) {
            if (v == 0 || v > static_cast<std::uint32_t>(INT32_MAX)) {
                throw FormatError(FormatError::Kind::value_out_of_range, "bad grid dims in header");
            }
        }
        const float vs = f32();
        return {Dims{static_cast<std::int32_t>(d[0]), static_cast<std::int32_t>(d[1]), static_cast<std::int32_t>(d[2])},
                vs};
    }

    void expect_total(std::size_t total) const {
        if (in_.size() != total) {
            throw FormatError(FormatError::Kind::size_mismatch, "declared counts need " + std::to_string(total) +
                                                                    " bytes, file has " + std::to_string(in_.size()));
        }
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) {
            throw FormatError(FormatError::Kind::size_mismatch, "unexpected end of data");
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

// Merges labeled sites and invalid coords (written with the unlabeled code)
// in lexicographic order.
template <class Site, class Emit>
void for_each_written_site(const std::vector<Site>& sites, const std::vector<Coord>& invalid, Emit&& emit) {
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < sites.size() || j < invalid.size()) {
        if (j == invalid.size() || (i < sites.size() && sites[i].coord < invalid[j])) {
            emit(&sites[i], sites[i].coord);
            ++i;
        } else {
            emit(static_cast<const Site*>(nullptr), invalid[j++]);
        }
    }
}

template <class Site>
void check_unique_sorted(std::vector<Site>& sites, std::vector<Coord>& invalid) {
    std::ranges::sort(sites, [](const Site& a, const Site& b) { return a.coord < b.coord; });
    std::ranges::sort(invalid);
    std::vector<Coord> all;
    all.reserve(sites.size() + invalid.size());
    std::ranges::merge(sites | std::views::transform(&Site::coord), invalid, std::back_inserter(all));
    if (std::ranges::adjacent_find(all) != all.end()) {
        throw FormatError(FormatError::Kind::duplicate_coord,
                          "duplicate coord " + to_string(*std::ranges::adjacent_find(all)));
    }
}

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dense label files

/// Path of the packed invalid-voxel bitmap next to a dense label file.
inline std::filesystem::path invalid_companion(const std::filesystem::path& labels) {
    auto p = labels;
    p.replace_extension(".invalid");
    return p;
}

/// Dense u16 labels in linear-index order. Voxels holding the unlabeled code
/// become invalid, as do voxels flagged in `invalid_bits` (MSB-first).
inline SparseVoxelGrid decode_dense_labels(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> invalid_bits,
                                           Dims dims, float voxel_size = 0.2F, LabelCodes codes = {}) {
    detail::check_dims(dims);
    const std::size_t volume = dims.volume();
    if (labels.size() != volume * 2) {
        throw FormatError(FormatError::Kind::size_mismatch, "dense labels: expected " + std::to_string(volume * 2) +
                                                                " bytes, got " + std::to_string(labels.size()));
    }
    const std::size_t bitmap_bytes = (volume + 7) / 8;
    if (!invalid_bits.empty() && invalid_bits.size() != bitmap_bytes) {
        throw FormatError(FormatError::Kind::size_mismatch, "invalid bitmap: expected " + std::to_string(bitmap_bytes) +
                                                                " bytes, got " + std::to_string(invalid_bits.size()));
    }
    SparseVoxelGrid out{dims, voxel_size, {}, {}};
    for (std::size_t i = 0; i < volume; ++i) {
        const auto label = static_cast<ClassId>(labels[2 * i] | (labels[2 * i + 1] << 8));
        const bool flagged = !invalid_bits.empty() && ((invalid_bits[i / 8] >> (7 - i % 8)) & 1U) != 0;
        if (flagged || label == codes.unlabeled) {
            out.invalid.push_back(dims.coord_of(i));
        } else if (label != codes.empty) {
            out.sites.push_back({dims.coord_of(i), label});
        }
    }
    return out;
}

struct DenseEncoding {
    Bytes labels;
    /// Empty when the grid has no invalid voxels.
    Bytes invalid_bits;
};

inline DenseEncoding encode_dense_labels(const SparseVoxelGrid& grid, LabelCodes codes = {}) {
    const std::size_t volume = grid.dims.volume();
    std::vector<ClassId> dense(volume, codes.empty);
    for (const auto& s : grid.sites) {
        dense[grid.dims.linear_index(s.coord)] = s.label;
    }
    DenseEncoding out;
    if (!grid.invalid.empty()) {
        out.invalid_bits.assign((volume + 7) / 8, 0);
    }
    for (const auto& c : grid.invalid) {
        const std::size_t i = grid.dims.linear_index(c);
        dense[i] = codes.unlabeled;
        out.invalid_bits[i / 8] |= static_cast<std::uint8_t>(1U << (7 - i % 8));
    }
    out.labels.reserve(volume * 2);
    for (ClassId v : dense) {
        out.labels.push_back(static_cast<std::uint8_t>(v & 0xFFU));
        out.labels.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    return out;
}

inline SparseVoxelGrid read_dense_labels(const std::filesystem::path& path, Dims dims, float voxel_size = 0.2F,
                                         LabelCodes codes = {}) {
    const Bytes labels = detail::read_file(path);
    Bytes bits;
    const auto companion = invalid_companion(path);
    if (std::filesystem::exists(companion)) {
        bits = detail::read_file(companion);
    }
    return decode_dense_labels(labels, bits, dims, voxel_size, codes);
}

/// Writes the label file and, when the grid has invalid voxels, the
/// companion bitmap (a stale companion is removed otherwise).
inline void write_dense_labels(const SparseVoxelGrid& grid, const std::filesystem::path& path, LabelCodes codes = {}) {
    const auto enc = encode_dense_labels(grid, codes);
    detail::write_file(path, enc.labels);
    const auto companion = invalid_companion(path);
    if (!enc.invalid_bits.empty()) {
        detail::write_file(companion, enc.invalid_bits);
    } else {
        std::filesystem::remove(companion);
    }
}

// ---------------------------------------------------------------------------
// PSCG: sparse semantic grid

inline Bytes encode_sparse_grid(const SparseVoxelGrid& grid, LabelCodes codes = {}) {
    detail::ByteWriter w;
    w.header("PSCG", grid.dims, grid.voxel_size);
    w.u32(static_cast<std::uint32_t>(grid.sites.size() + grid.invalid.size()));
    detail::for_each_written_site(grid.sites, grid.invalid, [&](const LabeledSite* s, const Coord& c) {
        w.coord(c);
        w.u16(s != nullptr ? s->label : codes.unlabeled);
    });
    return w.take();
}

inline SparseVoxelGrid decode_sparse_grid(std::span<const std::uint8_t> bytes, LabelCodes codes = {}) {
    detail::ByteReader r(bytes);
    const auto [dims, vs] = r.header("PSCG");
    const std::uint32_t count = r.u32();
    r.expect_total(kHeaderBytes + 4 + static_cast<std::size_t>(count) * 14);
    SparseVoxelGrid out{dims, vs, {}, {}};
    for (std::uint32_t i = 0; i < count; ++i) {
        const Coord c = r.coord(dims);
        const ClassId label = r.u16();
        if (label == codes.unlabeled) {
            out.invalid.push_back(c);
        } else if (label == codes.empty) {
            throw FormatError(FormatError::Kind::bad_label, "explicit empty label at " + to_string(c));
        } else {
            out.sites.push_back({c, label});
        }
    }
    detail::check_unique_sorted(out.sites, out.invalid);
    return out;
}

inline SparseVoxelGrid read_sparse_grid(const std::filesystem::path& path, LabelCodes codes = {}) {
    return decode_sparse_grid(detail::read_file(path), codes);
}

inline void write_sparse_grid(const SparseVoxelGrid& grid, const std::filesystem::path& path, LabelCodes codes = {}) {
    detail::write_file(path, encode_sparse_grid(grid, codes));
}

// ---------------------------------------------------------------------------
// PSCP: panoptic grid

inline Bytes encode_panoptic(const PanopticGrid& grid, LabelCodes codes = {}) {
    detail::ByteWriter w;
    w.header("PSCP", grid.dims, grid.voxel_size);
    w.u32(static_cast<std::uint32_t>(grid.sites.size() + grid.invalid.size()));
    detail::for_each_written_site(grid.sites, grid.invalid, [&](const PanopticSite* s, const Coord& c) {
        w.coord(c);
        w.u16(s != nullptr ? s->label : codes.unlabeled);
        w.u32(s != nullptr ? s->instance : 0);
    });
    return w.take();
}

inline PanopticGrid decode_panoptic(std::span<const std::uint8_t> bytes, LabelCodes codes = {}) {
    detail::ByteReader r(bytes);
    const auto [dims, vs] = r.header("PSCP");
    const std::uint32_t count = r.u32();
    r.expect_total(kHeaderBytes + 4 + static_cast<std::size_t>(count) * 18);
    PanopticGrid out{dims, vs, {}, {}};
    for (std::uint32_t i = 0; i < count; ++i) {
        const Coord c = r.coord(dims);
        const ClassId label = r.u16();
        const InstanceId instance = r.u32();
        if (label == codes.unlabeled) {
            out.invalid.push_back(c);
        } else if (label == codes.empty) {
            throw FormatError(FormatError::Kind::bad_label, "explicit empty label at " + to_string(c));
        } else {
            out.sites.push_back({c, label, instance});
        }
    }
    detail::check_unique_sorted(out.sites, out.invalid);
    return out;
}

inline PanopticGrid read_panoptic(const std::filesystem::path& path, LabelCodes codes = {}) {
    return decode_panoptic(detail::read_file(path), codes);
}

inline void write_panoptic(const PanopticGrid& grid, const std::filesystem::path& path, LabelCodes codes = {}) {
    detail::write_file(path, encode_panoptic(grid, codes));
}

// ---------------------------------------------------------------------------
// PSCM: mask set

inline constexpr double kFileProbTolerance = 1e-4;

inline Bytes encode_maskset(const MaskSet& ms) {
    validate(ms, kFileProbTolerance);
    detail::ByteWriter w;
    w.header("PSCM", ms.dims, ms.voxel_size);
    w.u32(static_cast<std::uint32_t>(ms.sites.size()));
    w.u32(static_cast<std::uint32_t>(ms.queries));
    w.u16(static_cast<std::uint16_t>(ms.classes));
    for (const auto& c : ms.sites) {
        w.coord(c);
    }
    for (double p : ms.class_probs) {
        w.f32(static_cast<float>(p));
    }
    for (double m : ms.mask_scores) {
        w.f32(static_cast<float>(m));
    }
    return w.take();
}

inline MaskSet decode_maskset(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    const auto [dims, vs] = r.header("PSCM");
    const std::size_t n = r.u32();
    const std::size_t k = r.u32();
    const std::size_t c = r.u16();
    r.expect_total(kHeaderBytes + 10 + n * 12 + k * (c + 1) * 4 + k * n * 4);
    MaskSet ms{dims, vs, {}, k, c, {}, {}};
    ms.sites.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Coord coord = r.coord(dims);
        if (!ms.sites.empty() && !(ms.sites.back() < coord)) {
            throw FormatError(ms.sites.back() == coord ? FormatError::Kind::duplicate_coord
                                                       : FormatError::Kind::unsorted_sites,
                              "mask set sites must be strictly lexicographic; offending site " + to_string(coord));
        }
        ms.sites.push_back(coord);
    }
    const auto read_unit = [&r](const char* what) {
        const double v = r.f32();
        if (!(v >= 0.0 && v <= 1.0)) {
            throw FormatError(FormatError::Kind::value_out_of_range, std::string(what) + " outside [0,1]");
        }
        return v;
    };
    ms.class_probs.resize(k * (c + 1));
    for (auto& p : ms.class_probs) {
        p = read_unit("class probability");
    }
    ms.mask_scores.resize(k * n);
    for (auto& m : ms.mask_scores) {
        m = read_unit("mask score");
    }
    for (std::size_t q = 0; q < k; ++q) {
        double sum = 0.0;
        for (double p : ms.probs(q)) {
            sum += p;
        }
        if (std::abs(sum - 1.0) > kFileProbTolerance) {
            throw FormatError(FormatError::Kind::unnormalized_probs,
                              "class probabilities of query " + std::to_string(q) + " sum to " + std::to_string(sum));
        }
    }
    return ms;
}

inline MaskSet read_maskset(const std::filesystem::path& path) { return decode_maskset(detail::read_file(path)); }

inline void write_maskset(const MaskSet& ms, const std::filesystem::path& path) {
    detail::write_file(path, encode_maskset(ms));
}

// ---------------------------------------------------------------------------
// Taxonomy text files
//
//   # comment
//   unlabeled=255
//   0,empty,empty
//   1,car,thing
//   9,road,stuff

inline ClassTaxonomy parse_taxonomy(std::string_view text) {
    std::vector<ClassInfo> classes;
    std::optional<ClassId> empty;
    ClassId unlabeled = kDefaultUnlabeledId;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const auto fail = [&lineno](const std::string& why) {
        throw InvalidArgument("taxonomy line " + std::to_string(lineno) + ": " + why);
    };
    const auto parse_id = [&fail](const std::string& s) {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(s, &used);
        } catch (const std::exception&) {
            fail("expected an integer, got '" + s + "'");
        }
        if (used != s.size() || v > 0xFFFFUL) {
            fail("bad id '" + s + "'");
        }
        return static_cast<ClassId>(v);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) {
            continue;
        }
        if (line.rfind("unlabeled=", 0) == 0) {
            unlabeled = parse_id(trim(line.substr(10)));
            continue;
        }
        std::vector<std::string> fields;
        std::istringstream fs(line);
        for (std::string f; std::getline(fs, f, ',');) {
            fields.push_back(trim(f));
        }
        if (fields.size() != 3) {
            fail("expected 'id,name,kind'");
        }
        ClassInfo info{parse_id(fields[0]), fields[1], ClassKind::stuff};
        if (fields[2] == "thing") {
            info.kind = ClassKind::thing;
        } else if (fields[2] == "empty") {
            if (empty) {
                fail("second empty class");
            }
            empty = info.id;
        } else if (fields[2] != "stuff") {
            fail("kind must be thing, stuff or empty");
        }
        classes.push_back(std::move(info));
    }
    if (!empty) {
        throw InvalidArgument("taxonomy: no class of kind 'empty'");
    }
    std::ranges::sort(classes, [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
    return ClassTaxonomy(std::move(classes), *empty, unlabeled);
}

inline ClassTaxonomy read_taxonomy(const std::filesystem::path& path) {
    const Bytes bytes = detail::read_file(path);
    return parse_taxonomy(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

} // namespace psc
