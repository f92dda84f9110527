#include "svtc/circuits/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

std::vector<double> SelectivityTable::sigma() const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.sigma);
    return out;
}

namespace {

struct Welford {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    double variance() const { return n > 0 ? std::max(0.0, m2 / static_cast<double>(n)) : 0.0; }
};

} // namespace

SelectivityTable compute_selectivity(const Eigen::MatrixXd& codes, const std::vector<bool>& positive, double eps) {
    if (static_cast<std::size_t>(codes.rows()) != positive.size()) {
        throw ValidationError("selectivity: " + std::to_string(codes.rows()) + " code rows but " +
                              std::to_string(positive.size()) + " labels");
    }
    if (!(eps >= 0.0)) throw ValidationError("selectivity: eps must be non-negative");
    const auto m = codes.cols();
    std::vector<Welford> pos(static_cast<size_t>(m)), neg(static_cast<size_t>(m));
    SelectivityTable t;
    t.eps = eps;
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        auto& acc = positive[static_cast<size_t>(i)] ? pos : neg;
        positive[static_cast<size_t>(i)] ? ++t.n_pos : ++t.n_neg;
        for (Eigen::Index j = 0; j < m; ++j) acc[static_cast<size_t>(j)].add(codes(i, j));
    }
    if (t.n_pos == 0 || t.n_neg == 0) throw ValidationError("selectivity: positive and negative pools must be non-empty");
    t.rows.resize(static_cast<size_t>(m));
    for (std::size_t j = 0; j < t.rows.size(); ++j) {
        auto& r = t.rows[j];
        r.mu_pos = pos[j].mean;
        r.mu_neg = neg[j].mean;
        r.var_pos = pos[j].variance();
        r.var_neg = neg[j].variance();
        const double diff = r.mu_pos - r.mu_neg;
        const double denom = std::sqrt(0.5 * (r.var_pos + r.var_neg) + eps);
        if (denom > 0.0) {
            r.sigma = diff / denom;
        } else {
            r.sigma = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        }
    }
    return t;
}

void write_selectivity_csv(const std::filesystem::path& path, const SelectivityTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "feature,mu_pos,mu_neg,var_pos,var_neg,sigma\n";
    out.precision(17);
    for (std::size_t j = 0; j < table.rows.size(); ++j) {
        const auto& r = table.rows[j];
        out << j << ',' << r.mu_pos << ',' << r.mu_neg << ',' << r.var_pos << ',' << r.var_neg << ',' << r.sigma << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::string_view to_string(SetKind k) {
    switch (k) {
    case SetKind::pattern: return "pattern";
    case SetKind::global: return "global";
    case SetKind::union_set: return "union";
    case SetKind::random_control: return "random_control";
    case SetKind::permuted_control: return "permuted_control";
    }
    return "?";
}

SetKind parse_set_kind(std::string_view s) {
    for (auto k : {SetKind::pattern, SetKind::global, SetKind::union_set, SetKind::random_control,
                   SetKind::permuted_control}) {
        if (to_string(k) == s) return k;
    }
    throw FormatError("unknown feature set kind '" + std::string(s) + "'");
}

bool FeatureSet::contains(int j) const { return std::binary_search(indices.begin(), indices.end(), j); }

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

} // namespace

FeatureSet select_features(const SelectivityTable& table, SetKind kind, const SelectionRule& rule) {
    FeatureSet s;
    s.kind = kind;
    for (int j = 0; j < table.features(); ++j) {
        if (table.rows[static_cast<size_t>(j)].sigma >= rule.threshold) s.indices.push_back(j);
    }
    s.rule = "sigma>=" + fmt_double(rule.threshold);
    if (s.indices.empty() && rule.top_n > 0 && table.features() > 0) {
        std::vector<int> order(static_cast<size_t>(table.features()));
        std::iota(order.begin(), order.end(), 0);
        const auto n = static_cast<std::size_t>(std::min(rule.top_n, table.features()));
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), [&](int a, int b) {
            const double sa = table.rows[static_cast<size_t>(a)].sigma;
            const double sb = table.rows[static_cast<size_t>(b)].sigma;
            return sa > sb || (sa == sb && a < b);
        });
        s.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(s.indices.begin(), s.indices.end());
        s.rule = "top" + std::to_string(n) + " (no feature reached sigma>=" + fmt_double(rule.threshold) + ")";
    }
    if (s.indices.empty()) {
        throw ValidationError("selection for " + std::string(to_string(kind)) + " is empty at sigma>=" +
                              fmt_double(rule.threshold) + "; lower the threshold or enable a top-n fallback");
    }
    return s;
}

FeatureSet union_of(const FeatureSet& pattern, const FeatureSet& global) {
    FeatureSet u;
    u.kind = SetKind::union_set;
    std::set_union(pattern.indices.begin(), pattern.indices.end(), global.indices.begin(), global.indices.end(),
                   std::back_inserter(u.indices));
    u.rule = "pattern|global";
    return u;
}

FeatureSet random_control(int m, std::size_t size, const std::vector<int>& exclude, std::uint64_t seed) {
    std::vector<int> pool;
    for (int j = 0; j < m; ++j) {
        if (!std::binary_search(exclude.begin(), exclude.end(), j)) pool.push_back(j);
    }
    if (size > pool.size()) throw ValidationError("random control: not enough features outside the excluded set");
    Rng rng = make_rng(derive_seed(seed, "random-control"));
    svtc::shuffle(pool.begin(), pool.end(), rng);
    FeatureSet s;
    s.kind = SetKind::random_control;
    s.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(size));
    std::sort(s.indices.begin(), s.indices.end());
    s.rule = "uniform size " + std::to_string(size);
    s.seed = seed;
    return s;
}

FeatureSet permuted_control(const std::vector<int>& pool, std::size_t size, std::uint64_t seed) {
    if (size > pool.size()) throw ValidationError("permuted control: pool smaller than the requested size");
    std::vector<int> p = pool;
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    if (size > p.size()) throw ValidationError("permuted control: pool has duplicate entries");
    Rng rng = make_rng(derive_seed(seed, "permuted-control"));
    svtc::shuffle(p.begin(), p.end(), rng);
    FeatureSet s;
    s.kind = SetKind::permuted_control;
    s.indices.assign(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(size));
    std::sort(s.indices.begin(), s.indices.end());
    s.rule = "shuffled pool of " + std::to_string(p.size()) + ", size " + std::to_string(size);
    s.seed = seed;
    return s;
}

std::string feature_set_to_jsonl(const FeatureSet& s) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(s.kind);
    j["indices"] = s.indices;
    j["rule"] = s.rule;
    j["seed"] = s.seed;
    return j.dump();
}

FeatureSet feature_set_from_jsonl(std::string_view line, int m) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("feature set: ") + e.what());
    }
    FeatureSet s;
    try {
        s.kind = parse_set_kind(j.at("kind").get<std::string>());
        s.indices = j.at("indices").get<std::vector<int>>();
        s.rule = j.at("rule").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("feature set: ") + e.what());
    }
    if (!std::is_sorted(s.indices.begin(), s.indices.end()) ||
        std::adjacent_find(s.indices.begin(), s.indices.end()) != s.indices.end()) {
        throw FormatError("feature set: indices must be sorted and unique");
    }
    for (int i : s.indices) {
        if (i < 0 || (m >= 0 && i >= m)) throw FormatError("feature set: index " + std::to_string(i) + " out of range");
    }
    return s;
}

void write_feature_sets(const std::filesystem::path& path, const std::vector<FeatureSet>& sets) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& s : sets) out << feature_set_to_jsonl(s) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<FeatureSet> read_feature_sets(const std::filesystem::path& path, int m) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<FeatureSet> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(feature_set_from_jsonl(line, m));
    }
    return out;
}

Eigen::MatrixXd token_codes(const ActivationRecord& rec, std::uint32_t layer, const SaeParams& sae, int image_tokens) {
    if (!rec.has_layer(layer)) throw ValidationError("record " + rec.id + " lacks layer " + std::to_string(layer));
    if (image_tokens < 0 || static_cast<std::uint32_t>(image_tokens) > rec.tokens) {
        throw ValidationError("record " + rec.id + ": image token count exceeds the token count");
    }
    const auto h = rec.layer(layer);
    Eigen::MatrixXd out(image_tokens, sae.m());
    for (int t = 0; t < image_tokens; ++t) {
        out.row(t) = encode_dense(h.row(t).transpose().cast<double>(), sae).transpose();
    }
    return out;
}

Eigen::VectorXd pooled_image_code(const ActivationRecord& rec, std::uint32_t layer, const SaeParams& sae,
                                  int image_tokens) {
    if (image_tokens <= 0) throw ValidationError("pooled code: no image tokens");
    return token_codes(rec, layer, sae, image_tokens).colwise().mean().transpose();
}

SpatialMap spatial_map(const ActivationRecord& rec, const SaeParams& sae, int feature, std::uint32_t layer, int height,
                       int width) {
    if (feature < 0 || feature >= sae.m()) {
        throw ValidationError("spatial map: feature " + std::to_string(feature) + " outside [0, " +
                              std::to_string(sae.m()) + ")");
    }
    if (height <= 0 || width <= 0) throw ValidationError("spatial map: empty grid");
    const Eigen::MatrixXd z = token_codes(rec, layer, sae, height * width);
    SpatialMap map;
    map.feature = feature;
    map.height = height;
    map.width = width;
    map.values.resize(static_cast<size_t>(height * width));
    for (int t = 0; t < height * width; ++t) map.values[static_cast<size_t>(t)] = z(t, feature);
    return map;
}

std::vector<int> active_features(const std::vector<Eigen::MatrixXd>& code_blocks, int m) {
    std::vector<char> seen(static_cast<size_t>(m), 0);
    for (const auto& b : code_blocks) {
        if (b.cols() != m) throw ValidationError("active features: code width mismatch");
        for (Eigen::Index j = 0; j < m; ++j) {
            if (!seen[static_cast<size_t>(j)] && (b.col(j).array() != 0.0).any()) seen[static_cast<size_t>(j)] = 1;
        }
    }
    std::vector<int> out;
    for (int j = 0; j < m; ++j) {
        if (seen[static_cast<size_t>(j)]) out.push_back(j);
    }
    return out;
}

} // namespace svtc
