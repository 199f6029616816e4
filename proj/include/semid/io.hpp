// Copyright 2026-present the semid authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// File formats shared by every module:
//  * NPY v1.0, '<f4', C order, 2-D.
//  * raw little-endian float32 with a "<path>.json" sidecar {"rows", "dim"}.
//  * blob: one line of JSON header, '\n', then raw float32 blocks.
//  * TSV with a header row.

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semid/common.hpp"

namespace semid {

static_assert(std::endian::native == std::endian::little,
              "semid file formats assume a little-endian host");

using json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    SEMID_THROW_IF_NOT(in.good(), Errc::io, "io",
                       "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path,
                            std::string_view text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    SEMID_THROW_IF_NOT(out.good(), Errc::io, "io",
                       "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) {
        ss << std::hex << std::setw(2) << std::setfill('0')
           << static_cast<int>(md[i]);
    }
    return ss.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
    return sha256_hex(read_text_file(path));
}

// ---------------------------------------------------------------------------
// NPY

inline void write_npy(const std::filesystem::path& path, const Matrix& m) {
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
            std::to_string(m.rows()) + ", " + std::to_string(m.cols()) +
            "), }";
    // magic(6) + version(2) + len(2) + header + '\n' is a multiple of 64
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');

    std::string out;
    out.append("\x93NUMPY", 6);
    out.push_back('\x01');
    out.push_back('\x00');
    const auto hlen = static_cast<std::uint16_t>(header.size());
    out.push_back(static_cast<char>(hlen & 0xFF));
    out.push_back(static_cast<char>(hlen >> 8));
    out += header;
    out.append(reinterpret_cast<const char*>(m.values().data()),
               m.values().size() * sizeof(float));
    write_text_file(path, out);
}

namespace detail {

inline std::string npy_field(const std::string& header, const std::string& key) {
    const auto k = header.find("'" + key + "'");
    SEMID_THROW_IF_NOT(k != std::string::npos, Errc::malformed, "io",
                       "npy header lacks " + key);
    auto colon = header.find(':', k);
    SEMID_THROW_IF_NOT(colon != std::string::npos, Errc::malformed, "io",
                       "npy header malformed near " + key);
    auto start = header.find_first_not_of(' ', colon + 1);
    std::size_t end;
    if (header[start] == '(') {
        end = header.find(')', start);
        SEMID_THROW_IF_NOT(end != std::string::npos, Errc::malformed, "io",
                           "npy shape not closed");
        return header.substr(start, end - start + 1);
    }
    end = header.find_first_of(",}", start);
    return header.substr(start, end - start);
}

} // namespace detail

inline Matrix read_npy(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    SEMID_THROW_IF_NOT(bytes.size() >= 10 && bytes.compare(0, 6, "\x93NUMPY") == 0,
                       Errc::malformed, "io", "not an NPY file: " + path.string());
    const auto major = static_cast<unsigned char>(bytes[6]);
    std::size_t hlen;
    std::size_t off;
    if (major == 1) {
        hlen = static_cast<unsigned char>(bytes[8]) |
                (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
        off = 10;
    } else {
        SEMID_THROW_IF_NOT(bytes.size() >= 12, Errc::malformed, "io",
                           "truncated NPY header");
        hlen = 0;
        for (int b = 0; b < 4; ++b) {
            hlen |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + b]))
                    << (8 * b);
        }
        off = 12;
    }
    SEMID_THROW_IF_NOT(off + hlen <= bytes.size(), Errc::malformed, "io",
                       "truncated NPY header");
    const std::string header = bytes.substr(off, hlen);
    const std::string descr = detail::npy_field(header, "descr");
    SEMID_THROW_IF_NOT(descr == "'<f4'" || descr == "'=f4'", Errc::malformed, "io",
                       "NPY dtype must be <f4, got " + descr);
    SEMID_THROW_IF_NOT(detail::npy_field(header, "fortran_order") == "False",
                       Errc::malformed, "io", "NPY must be C-contiguous");
    std::string shape = detail::npy_field(header, "shape");
    std::vector<std::size_t> dims;
    {
        std::string inner = shape.substr(1, shape.size() - 2);
        std::stringstream ss(inner);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok.erase(0, tok.find_first_not_of(' '));
            tok.erase(tok.find_last_not_of(' ') + 1);
            if (!tok.empty()) {
                dims.push_back(std::stoull(tok));
            }
        }
    }
    SEMID_THROW_IF_NOT(dims.size() == 2, Errc::malformed, "io",
                       "NPY array must be 2-D, shape " + shape);
    const std::size_t n = dims[0] * dims[1];
    const std::size_t data_off = off + hlen;
    SEMID_THROW_IF_NOT(bytes.size() - data_off == n * sizeof(float),
                       Errc::shape_mismatch, "io",
                       "NPY payload size does not match shape " + shape);
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + data_off, n * sizeof(float));
    return Matrix(dims[0], dims[1], std::move(data));
}

// ---------------------------------------------------------------------------
// Raw float32 + JSON sidecar

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

inline void write_raw_f32(const std::filesystem::path& path, const Matrix& m) {
    write_text_file(path,
                    std::string_view(reinterpret_cast<const char*>(m.values().data()),
                                     m.values().size() * sizeof(float)));
    write_text_file(sidecar_path(path),
                    json{{"rows", m.rows()}, {"dim", m.cols()}}.dump());
}

inline Matrix read_raw_f32(const std::filesystem::path& path) {
    json side;
    try {
        side = json::parse(read_text_file(sidecar_path(path)));
    } catch (const json::exception& e) {
        throw Error(Errc::malformed, "io",
                    "bad sidecar for " + path.string() + ": " + e.what());
    }
    SEMID_THROW_IF_NOT(side.contains("rows") && side.contains("dim") &&
                               side["rows"].is_number_unsigned() &&
                               side["dim"].is_number_unsigned(),
                       Errc::malformed, "io",
                       "sidecar must hold unsigned 'rows' and 'dim'");
    const auto rows = side["rows"].get<std::size_t>();
    const auto dim = side["dim"].get<std::size_t>();
    const std::string bytes = read_text_file(path);
    SEMID_THROW_IF_NOT(bytes.size() == rows * dim * sizeof(float), Errc::shape_mismatch,
                       "io", "raw payload size does not match sidecar shape");
    std::vector<float> data(rows * dim);
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Matrix(rows, dim, std::move(data));
}

/// Reads either format: NPY by magic bytes, otherwise raw + sidecar.
inline Matrix read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    SEMID_THROW_IF_NOT(in.good(), Errc::io, "io", "cannot open " + path.string());
    char magic[6] = {};
    in.read(magic, 6);
    if (in.gcount() == 6 && std::memcmp(magic, "\x93NUMPY", 6) == 0) {
        return read_npy(path);
    }
    return read_raw_f32(path);
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    if (path.extension() == ".npy") {
        write_npy(path, m);
    } else {
        write_raw_f32(path, m);
    }
}

// ---------------------------------------------------------------------------
// Blob: JSON header line followed by float32 blocks. Used for projectors,
// ENMF models and codebooks.

inline void write_blob(const std::filesystem::path& path, const json& header,
                       const std::vector<std::span<const float>>& blocks) {
    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& b : blocks) {
        out.append(reinterpret_cast<const char*>(b.data()), b.size() * sizeof(float));
    }
    write_text_file(path, out);
}

struct Blob {
    json header;
    std::vector<float> payload;
    std::size_t cursor = 0;

    /// Consume the next `n` floats.
    std::vector<float> take(std::size_t n) {
        SEMID_THROW_IF_NOT(cursor + n <= payload.size(), Errc::malformed, "io",
                           "blob payload shorter than header declares");
        std::vector<float> out(payload.begin() + static_cast<std::ptrdiff_t>(cursor),
                               payload.begin() + static_cast<std::ptrdiff_t>(cursor + n));
        cursor += n;
        return out;
    }
    void expect_consumed() const {
        SEMID_THROW_IF_NOT(cursor == payload.size(), Errc::malformed, "io",
                           "blob payload longer than header declares");
    }
};

inline Blob read_blob(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    const auto nl = bytes.find('\n');
    SEMID_THROW_IF_NOT(nl != std::string::npos, Errc::malformed, "io",
                       "blob lacks header line: " + path.string());
    Blob b;
    try {
        b.header = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
        throw Error(Errc::malformed, "io", std::string("blob header: ") + e.what());
    }
    const std::size_t payload = bytes.size() - nl - 1;
    SEMID_THROW_IF_NOT(payload % sizeof(float) == 0, Errc::malformed, "io",
                       "blob payload is not a whole number of float32 values");
    b.payload.resize(payload / sizeof(float));
    std::memcpy(b.payload.data(), bytes.data() + nl + 1, payload);
    return b;
}

// ---------------------------------------------------------------------------
// TSV

using TsvRow = std::vector<std::string>;

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

struct Tsv {
    std::vector<std::string> header;
    std::vector<TsvRow> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        throw Error(Errc::malformed, "io", "TSV lacks column '" + std::string(name) + "'");
    }
};

inline Tsv read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    SEMID_THROW_IF_NOT(in.good(), Errc::io, "io", "cannot open " + path.string());
    Tsv t;
    std::string line;
    bool first = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto cells = split(line, '\t');
        if (first) {
            t.header = std::move(cells);
            first = false;
            continue;
        }
        SEMID_THROW_IF_NOT(cells.size() == t.header.size(), Errc::malformed, "io",
                           path.string() + ":" + std::to_string(lineno) + ": expected " +
                                   std::to_string(t.header.size()) + " columns");
        t.rows.push_back(std::move(cells));
    }
    SEMID_THROW_IF_NOT(!first, Errc::malformed, "io", "empty TSV " + path.string());
    return t;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    SEMID_THROW_IF_NOT(in.good(), Errc::io, "io", "cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

inline long long parse_int(const std::string& s, std::string_view what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw Error(Errc::malformed, "io", "bad integer for " + std::string(what) + ": '" + s + "'");
}

/// Shortest round-trip decimal for a float score in TSV output.
inline std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

} // namespace semid
