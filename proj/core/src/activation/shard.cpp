#include "svtc/activation/shard.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "svtc/common/binary_io.hpp"
#include "svtc/common/error.hpp"

namespace svtc {

Eigen::Map<const TokenMatrix> ActivationRecord::layer(std::uint32_t l) const {
    if (!has_layer(l)) throw ValidationError("record " + id + " does not hold layer " + std::to_string(l));
    const std::size_t stride = static_cast<std::size_t>(tokens) * dim;
    return {data.data() + (l - first_layer) * stride, tokens, dim};
}

Eigen::Map<TokenMatrix> ActivationRecord::layer(std::uint32_t l) {
    if (!has_layer(l)) throw ValidationError("record " + id + " does not hold layer " + std::to_string(l));
    const std::size_t stride = static_cast<std::size_t>(tokens) * dim;
    return {data.data() + (l - first_layer) * stride, tokens, dim};
}

ActivationRecord make_record(const ShardHeader& h, std::string id) {
    ActivationRecord r;
    r.id = std::move(id);
    r.num_layers = h.layers;
    r.tokens = h.tokens;
    r.dim = h.dim;
    r.data.assign(static_cast<std::size_t>(h.layers) * h.tokens * h.dim, 0.0f);
    return r;
}

std::uint64_t record_bytes(const ShardHeader& h, std::size_t id_len, std::size_t n_logits) {
    return 4 + 4 + id_len + 1 + 4 + 4 * n_logits + 4ull * h.layers * h.tokens * h.dim;
}

std::filesystem::path index_path(const std::filesystem::path& shard) { return shard.string() + ".index.jsonl"; }

namespace {

void write_floats(std::ostream& out, const float* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) le::put_f32(out, p[i]);
    }
}

void read_floats(std::istream& in, float* p, std::size_t n, const std::string& what) {
    le::read_exact(in, reinterpret_cast<char*>(p), n * 4, what);
    if constexpr (std::endian::native != std::endian::little) {
        auto* c = reinterpret_cast<char*>(p);
        for (std::size_t i = 0; i < n; ++i) p[i] = le::decode_f32(c + 4 * i);
    }
}

} // namespace

ShardWriter::ShardWriter(const std::filesystem::path& path, const ShardHeader& header)
    : path_(path), header_(header), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    if (header.grid_h * header.grid_w > header.tokens) {
        throw ValidationError("shard header: image grid exceeds token count");
    }
    out_.write(kShardMagic, 4);
    le::put_u32(out_, kShardVersion);
    le::put_u32(out_, header.layers);
    le::put_u32(out_, header.tokens);
    le::put_u32(out_, header.dim);
    le::put_u32(out_, header.grid_h);
    le::put_u32(out_, header.grid_w);
    le::put_u8(out_, header.dtype);
}

ShardWriter::~ShardWriter() {
    try {
        close();
    } catch (...) {
    }
}

void ShardWriter::write(const ActivationRecord& r) {
    if (closed_) throw Error("shard writer already closed");
    if (r.first_layer != 0 || r.num_layers != header_.layers || r.tokens != header_.tokens || r.dim != header_.dim) {
        throw ValidationError("record " + r.id + " does not match the shard header dimensions");
    }
    if (r.label < -1 || r.label >= 0xFF) throw ValidationError("record " + r.id + ": label out of range");
    for (float v : r.data) {
        if (!std::isfinite(v)) throw ValidationError("record " + r.id + ": non-finite activation");
    }
    const std::uint64_t len = record_bytes(header_, r.id.size(), r.logits.size()) - 4;
    index_.emplace_back(r.id, offset_);
    le::put_u32(out_, static_cast<std::uint32_t>(len));
    le::put_u32(out_, static_cast<std::uint32_t>(r.id.size()));
    out_.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
    le::put_u8(out_, r.label < 0 ? kNoLabel : static_cast<std::uint8_t>(r.label));
    le::put_u32(out_, static_cast<std::uint32_t>(r.logits.size()));
    write_floats(out_, r.logits.data(), r.logits.size());
    write_floats(out_, r.data.data(), r.data.size());
    if (!out_) throw IoError("write failed: " + path_.string());
    offset_ += len + 4;
}

void ShardWriter::close() {
    if (closed_) return;
    closed_ = true;
    out_.close();
    if (!out_) throw IoError("write failed: " + path_.string());
    std::ofstream idx(index_path(path_), std::ios::binary | std::ios::trunc);
    if (!idx) throw IoError("cannot write " + index_path(path_).string());
    for (const auto& [id, off] : index_) {
        nlohmann::ordered_json j;
        j["id"] = id;
        j["offset"] = off;
        idx << j.dump() << '\n';
    }
    if (!idx) throw IoError("write failed: " + index_path(path_).string());
}

ShardReader::ShardReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
    file_size_ = std::filesystem::file_size(path);
    const std::string what = path.string() + " header";
    char magic[4];
    le::read_exact(in_, magic, 4, what);
    if (std::memcmp(magic, kShardMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, not an SVTC shard");
    const auto version = le::get_u32(in_, what);
    if (version != kShardVersion) {
        throw FormatError(path.string() + ": unsupported shard version " + std::to_string(version));
    }
    header_.layers = le::get_u32(in_, what);
    header_.tokens = le::get_u32(in_, what);
    header_.dim = le::get_u32(in_, what);
    header_.grid_h = le::get_u32(in_, what);
    header_.grid_w = le::get_u32(in_, what);
    header_.dtype = le::get_u8(in_, what);
    if (header_.dtype != kDtypeF32) throw FormatError(path.string() + ": unsupported dtype tag");
    if (header_.image_tokens() > header_.tokens) throw FormatError(path.string() + ": image grid exceeds tokens");
}

void ShardReader::seek(std::uint64_t offset) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(offset));
}

std::optional<ActivationRecord> ShardReader::next() { return read_one(std::nullopt); }

std::optional<ActivationRecord> ShardReader::next_layer(std::uint32_t l) {
    if (l >= header_.layers) throw ValidationError("layer " + std::to_string(l) + " out of range");
    return read_one(l);
}

std::optional<ActivationRecord> ShardReader::read_one(std::optional<std::uint32_t> only) {
    if (in_.peek() == std::char_traits<char>::eof()) return std::nullopt;
    const std::uint64_t start = static_cast<std::uint64_t>(in_.tellg());
    const std::string what = path_.string() + " record at offset " + std::to_string(start);
    const std::uint32_t len = le::get_u32(in_, what);
    if (start + 4 + len > file_size_) {
        throw FormatError(what + ": truncated at byte offset " + std::to_string(file_size_));
    }
    ActivationRecord r;
    const std::uint32_t id_len = le::get_u32(in_, what);
    if (id_len > len) throw FormatError(what + ": id length exceeds record length");
    r.id.resize(id_len);
    le::read_exact(in_, r.id.data(), id_len, what);
    const std::uint8_t label = le::get_u8(in_, what);
    r.label = label == kNoLabel ? -1 : label;
    const std::uint32_t n_logits = le::get_u32(in_, what);
    if (record_bytes(header_, id_len, n_logits) != std::uint64_t{len} + 4) {
        throw FormatError(what + ": record length does not match header dimensions");
    }
    r.logits.resize(n_logits);
    read_floats(in_, r.logits.data(), n_logits, what);
    r.tokens = header_.tokens;
    r.dim = header_.dim;
    const std::size_t stride = static_cast<std::size_t>(header_.tokens) * header_.dim;
    if (only) {
        r.first_layer = *only;
        r.num_layers = 1;
        r.data.resize(stride);
        in_.seekg(static_cast<std::streamoff>(4ull * stride * *only), std::ios::cur);
        read_floats(in_, r.data.data(), stride, what);
        in_.seekg(static_cast<std::streamoff>(4ull * stride * (header_.layers - *only - 1)), std::ios::cur);
    } else {
        r.first_layer = 0;
        r.num_layers = header_.layers;
        r.data.resize(stride * header_.layers);
        read_floats(in_, r.data.data(), r.data.size(), what);
    }
    return r;
}

std::vector<std::pair<std::string, std::uint64_t>> read_index(const std::filesystem::path& shard) {
    std::ifstream in(index_path(shard));
    if (!in) throw IoError("cannot open " + index_path(shard).string());
    std::vector<std::pair<std::string, std::uint64_t>> out;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.emplace_back(j.at("id").get<std::string>(), j.at("offset").get<std::uint64_t>());
    }
    return out;
}

void write_shard(const std::filesystem::path& path, const ShardHeader& header,
                 const std::vector<ActivationRecord>& records) {
    ShardWriter w(path, header);
    for (const auto& r : records) w.write(r);
    w.close();
}

std::vector<ActivationRecord> read_shard(const std::filesystem::path& path, ShardHeader* header) {
    ShardReader reader(path);
    if (header) *header = reader.header();
    std::vector<ActivationRecord> out;
    while (auto r = reader.next()) out.push_back(std::move(*r));
    return out;
}

} // namespace svtc
