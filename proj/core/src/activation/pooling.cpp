#include "svtc/activation/pooling.hpp"

#include <string>

#include "svtc/common/error.hpp"

namespace svtc {

std::string_view to_string(PoolScope s) { return s == PoolScope::all ? "all" : "image_only"; }

PoolScope parse_pool_scope(std::string_view s) {
    if (s == "all") return PoolScope::all;
    if (s == "image_only") return PoolScope::image_only;
    throw ValidationError("unknown pooling scope '" + std::string(s) + "'");
}

Eigen::VectorXd pool_tokens(const ActivationRecord& record, std::uint32_t layer, PoolScope scope,
                            std::uint32_t image_tokens) {
    const auto h = record.layer(layer);
    const Eigen::Index n = scope == PoolScope::all ? h.rows() : std::min<Eigen::Index>(image_tokens, h.rows());
    if (n == 0) throw ValidationError("pool_tokens: empty token selection for " + record.id);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(h.cols());
    for (Eigen::Index t = 0; t < n; ++t) sum += h.row(t).transpose().cast<double>();
    return sum / static_cast<double>(n);
}

} // namespace svtc
