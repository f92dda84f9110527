#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

#include "svtc/activation/shard.hpp"

namespace svtc {

enum class PoolScope : std::uint8_t { all, image_only };

std::string_view to_string(PoolScope s);
PoolScope parse_pool_scope(std::string_view s);

// Arithmetic mean over the selected tokens of one layer, accumulated in double.
Eigen::VectorXd pool_tokens(const ActivationRecord& record, std::uint32_t layer, PoolScope scope,
                            std::uint32_t image_tokens);

} // namespace svtc
