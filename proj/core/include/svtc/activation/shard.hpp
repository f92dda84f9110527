#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace svtc {

// Token-major activations: rows are tokens, columns are hidden dimensions.
using TokenMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr char kShardMagic[4] = {'S', 'V', 'T', 'C'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kNoLabel = 0xFF;
inline constexpr std::size_t kShardHeaderBytes = 4 + 6 * 4 + 1;

struct ShardHeader {
    std::uint32_t layers = 0;
    std::uint32_t tokens = 0;
    std::uint32_t dim = 0;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint8_t dtype = kDtypeF32;

    // Image tokens are the contiguous prefix [0, grid_h * grid_w).
    std::uint32_t image_tokens() const { return grid_h * grid_w; }
    bool operator==(const ShardHeader&) const = default;
};

struct ActivationRecord {
    std::string id;
    int label = -1; // option index, -1 when absent
    std::vector<float> logits;
    // Layer-major [layers][tokens][dim]. When read with a layer filter only
    // that layer is present and `first_layer` names it.
    std::vector<float> data;
    std::uint32_t first_layer = 0;
    std::uint32_t num_layers = 0;
    std::uint32_t tokens = 0;
    std::uint32_t dim = 0;

    Eigen::Map<const TokenMatrix> layer(std::uint32_t l) const;
    Eigen::Map<TokenMatrix> layer(std::uint32_t l);
    bool has_layer(std::uint32_t l) const { return l >= first_layer && l < first_layer + num_layers; }

    bool operator==(const ActivationRecord&) const = default;
};

ActivationRecord make_record(const ShardHeader& h, std::string id);

// Bytes one record occupies on disk, including its length prefix.
std::uint64_t record_bytes(const ShardHeader& h, std::size_t id_len, std::size_t n_logits);

// Single-writer shard. The sibling "<path>.index.jsonl" lists {id, offset}
// per record and is written by close().
class ShardWriter {
public:
    ShardWriter(const std::filesystem::path& path, const ShardHeader& header);
    ~ShardWriter();
    ShardWriter(const ShardWriter&) = delete;
    ShardWriter& operator=(const ShardWriter&) = delete;

    void write(const ActivationRecord& r);
    void close();
    std::size_t count() const { return index_.size(); }

private:
    std::filesystem::path path_;
    ShardHeader header_;
    std::ofstream out_;
    std::vector<std::pair<std::string, std::uint64_t>> index_;
    std::uint64_t offset_ = kShardHeaderBytes;
    bool closed_ = false;
};

// Streaming reader. next() returns nullopt at end of file.
class ShardReader {
public:
    explicit ShardReader(const std::filesystem::path& path);

    const ShardHeader& header() const { return header_; }
    std::optional<ActivationRecord> next();
    // Reads only layer `l` of the next record; other layers are skipped.
    std::optional<ActivationRecord> next_layer(std::uint32_t l);
    // Repositions at a record offset taken from the index file.
    void seek(std::uint64_t offset);

private:
    std::optional<ActivationRecord> read_one(std::optional<std::uint32_t> only);

    std::filesystem::path path_;
    std::ifstream in_;
    ShardHeader header_;
    std::uint64_t file_size_ = 0;
};

std::filesystem::path index_path(const std::filesystem::path& shard);
std::vector<std::pair<std::string, std::uint64_t>> read_index(const std::filesystem::path& shard);

void write_shard(const std::filesystem::path& path, const ShardHeader& header,
                 const std::vector<ActivationRecord>& records);
std::vector<ActivationRecord> read_shard(const std::filesystem::path& path, ShardHeader* header = nullptr);

} // namespace svtc
