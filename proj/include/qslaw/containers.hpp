// SPDX-License-Identifier: Apache-2.0
//
// Binary file formats, all little-endian:
//   QSLF  full-precision weight matrix (input to the quantize subcommand)
//   QSLW  packed 4-bit container: header, per-group params, packed nibbles
// plus byte-level reader/writer helpers and atomic file output.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qslaw/numerics.hpp"
#include "qslaw/quant.hpp"

namespace qslaw {

// ---------------------------------------------------------------------------
// Byte helpers

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(const void* data, std::size_t n);
    void str(const std::string& s);  // u16 length prefix

    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : buf_(std::move(data)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    void bytes(void* out, std::size_t n);
    std::string str();
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n);
    std::string buf_;
    std::size_t pos_ = 0;
};

// Writes via a temp file in the same directory, then renames into place.
void atomic_write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

// ---------------------------------------------------------------------------
// QSLF: magic "QSLF", version u16, rows u32, cols u32, f64 row-major data.

void write_weights_file(const std::string& path, const Mat& w);
Mat read_weights_file(const std::string& path);

// ---------------------------------------------------------------------------
// QSLW: magic "QSLW", version u16, codebook u8 (0 uniform, 1 nf4), k u16,
// g u32, rows u32, cols u32, then per group delta f32 + zp u8 (for nf4 the
// delta slot holds the group absmax and zp is 0), then the packed nibbles
// for all rows*cols codes in row-major order.

enum class CodebookKind : std::uint8_t { Uniform = 0, Nf4 = 1 };

struct PackedMatrix {
    CodebookKind codebook = CodebookKind::Uniform;
    int k = 4;
    Index g = 128;
    Index rows = 0;
    Index cols = 0;
    std::vector<float> delta;       // per group (absmax for nf4)
    std::vector<std::uint8_t> zp;   // per group (0 for nf4)
    std::vector<std::uint8_t> packed;

    Index n_groups() const { return rows * (cols / g); }
};

// Group-wise quantization of a full matrix. Params are fit per group; the
// per-group delta/absmax is rounded to f32 before encoding so that decoding
// from the file reproduces the encoder's arithmetic exactly.
PackedMatrix quantize_matrix(const Mat& w, Index g, int k, CodebookKind kind,
                             std::span<const double> clip_grid, const Nf4Codebook& cb);

Mat dequantize_packed(const PackedMatrix& pm, const Nf4Codebook& cb);

void write_packed_file(const std::string& path, const PackedMatrix& pm);
PackedMatrix read_packed_file(const std::string& path);

}  // namespace qslaw
