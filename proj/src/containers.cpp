// SPDX-License-Identifier: Apache-2.0

#include "qslaw/containers.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace qslaw {

void ByteWriter::u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
}
void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
}
void ByteWriter::str(const std::string& s) {
    if (s.size() > 0xffff) throw EncodingError("ByteWriter: string too long");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
}

void ByteReader::need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw FileError("truncated file");
}
std::uint8_t ByteReader::u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
}
std::uint16_t ByteReader::u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
}
std::uint32_t ByteReader::u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
}
std::uint64_t ByteReader::u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }
void ByteReader::bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}
std::string ByteReader::str() {
    const std::uint16_t n = u16();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FileError("cannot open for writing: " + tmp);
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw FileError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw FileError("rename failed: " + tmp + " -> " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// QSLF

void write_weights_file(const std::string& path, const Mat& w) {
    ByteWriter bw;
    bw.bytes("QSLF", 4);
    bw.u16(1);
    bw.u32(static_cast<std::uint32_t>(w.rows()));
    bw.u32(static_cast<std::uint32_t>(w.cols()));
    for (Index i = 0; i < w.size(); ++i) bw.f64(w.data()[i]);
    atomic_write_file(path, bw.data());
}

Mat read_weights_file(const std::string& path) {
    ByteReader br(read_file(path));
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, "QSLF", 4) != 0) throw FileError("not a QSLF file: " + path);
    if (br.u16() != 1) throw FileError("unsupported QSLF version: " + path);
    const Index rows = static_cast<Index>(br.u32());
    const Index cols = static_cast<Index>(br.u32());
    Mat w(rows, cols);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = br.f64();
    return w;
}

// ---------------------------------------------------------------------------
// QSLW

PackedMatrix quantize_matrix(const Mat& w, Index g, int k, CodebookKind kind,
                             std::span<const double> clip_grid, const Nf4Codebook& cb) {
    if (kind == CodebookKind::Nf4 && k != 4)
        throw ConfigError("quantize_matrix: the nf4 codebook is 4-bit only");
    PackedMatrix pm;
    pm.codebook = kind;
    pm.k = k;
    pm.g = g;
    pm.rows = w.rows();
    pm.cols = w.cols();

    std::vector<int> codes(static_cast<std::size_t>(w.size()));
    for (const GroupView& gv : partition_groups(w, g)) {
        std::span<const double> slice(w.row(gv.row).data() + gv.col_begin,
                                      static_cast<std::size_t>(gv.length));
        const std::size_t base =
            static_cast<std::size_t>(gv.row * w.cols() + gv.col_begin);
        if (kind == CodebookKind::Uniform) {
            QuantParams p = init_uniform_params(slice, k, clip_grid);
            p.delta = static_cast<double>(static_cast<float>(p.delta));
            const auto fq = uniform_fakequant(slice, p);
            for (std::size_t i = 0; i < slice.size(); ++i) codes[base + i] = fq.codes[i];
            pm.delta.push_back(static_cast<float>(p.delta));
            pm.zp.push_back(static_cast<std::uint8_t>(p.zp));
        } else {
            double absmax = 0.0;
            for (const double v : slice) absmax = std::max(absmax, std::abs(v));
            if (absmax == 0.0) absmax = 1.0;
            absmax = static_cast<double>(static_cast<float>(absmax));
            for (std::size_t i = 0; i < slice.size(); ++i)
                codes[base + i] = nearest_level(slice[i] / absmax, cb.levels);
            pm.delta.push_back(static_cast<float>(absmax));
            pm.zp.push_back(0);
        }
    }
    pm.packed = pack_nibbles(codes);
    return pm;
}

Mat dequantize_packed(const PackedMatrix& pm, const Nf4Codebook& cb) {
    const std::vector<int> codes =
        unpack_nibbles(pm.packed, static_cast<std::size_t>(pm.rows * pm.cols));
    Mat w(pm.rows, pm.cols);
    const Index gpr = pm.cols / pm.g;
    for (Index r = 0; r < pm.rows; ++r)
        for (Index c = 0; c < pm.cols; ++c) {
            const std::size_t gid = static_cast<std::size_t>(r * gpr + c / pm.g);
            const int code = codes[static_cast<std::size_t>(r * pm.cols + c)];
            if (pm.codebook == CodebookKind::Uniform) {
                w(r, c) = static_cast<double>(pm.delta[gid]) *
                          (code - static_cast<int>(pm.zp[gid]));
            } else {
                w(r, c) = cb.levels[static_cast<std::size_t>(code)] *
                          static_cast<double>(pm.delta[gid]);
            }
        }
    return w;
}

void write_packed_file(const std::string& path, const PackedMatrix& pm) {
    ByteWriter bw;
    bw.bytes("QSLW", 4);
    bw.u16(1);
    bw.u8(static_cast<std::uint8_t>(pm.codebook));
    bw.u16(static_cast<std::uint16_t>(pm.k));
    bw.u32(static_cast<std::uint32_t>(pm.g));
    bw.u32(static_cast<std::uint32_t>(pm.rows));
    bw.u32(static_cast<std::uint32_t>(pm.cols));
    for (Index i = 0; i < pm.n_groups(); ++i) {
        bw.f32(pm.delta[static_cast<std::size_t>(i)]);
        bw.u8(pm.zp[static_cast<std::size_t>(i)]);
    }
    bw.bytes(pm.packed.data(), pm.packed.size());
    atomic_write_file(path, bw.data());
}

PackedMatrix read_packed_file(const std::string& path) {
    ByteReader br(read_file(path));
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, "QSLW", 4) != 0) throw FileError("not a QSLW file: " + path);
    if (br.u16() != 1) throw FileError("unsupported QSLW version: " + path);
    PackedMatrix pm;
    pm.codebook = static_cast<CodebookKind>(br.u8());
    pm.k = br.u16();
    pm.g = static_cast<Index>(br.u32());
    pm.rows = static_cast<Index>(br.u32());
    pm.cols = static_cast<Index>(br.u32());
    if (pm.g <= 0 || pm.rows < 0 || pm.cols < 0 || pm.cols % pm.g != 0)
        throw FileError("corrupt QSLW header: " + path);
    const Index n = pm.n_groups();
    pm.delta.resize(static_cast<std::size_t>(n));
    pm.zp.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        pm.delta[static_cast<std::size_t>(i)] = br.f32();
        pm.zp[static_cast<std::size_t>(i)] = br.u8();
    }
    const std::size_t n_bytes = (static_cast<std::size_t>(pm.rows * pm.cols) + 1) / 2;
    pm.packed.resize(n_bytes);
    br.bytes(pm.packed.data(), n_bytes);
    return pm;
}

}  // namespace qslaw
