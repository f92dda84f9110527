#include "svtc/activation/surrogate.hpp"

#include <cmath>
#include <string>

#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

std::string_view to_string(InterventionSite s) { return s == InterventionSite::post_mlp ? "post_mlp" : "pre_block"; }

InterventionSite parse_intervention_site(std::string_view s) {
    if (s == "post_mlp") return InterventionSite::post_mlp;
    if (s == "pre_block") return InterventionSite::pre_block;
    throw ValidationError("unknown intervention site '" + std::string(s) + "'");
}

ExampleFeatures features_of(const QAExample& e) {
    ExampleFeatures f;
    f.id = e.id;
    f.task = e.task;
    f.difficulty = e.difficulty;
    f.answer = e.answer;
    f.n_options = static_cast<int>(e.options.size());
    f.cell_object.fill(-1);
    for (const auto& o : e.scene.objects) {
        const int packed = (o.shape * 16 + o.color) * 2 + (o.size == ObjectSize::large ? 1 : 0);
        f.cell_object[static_cast<size_t>(o.cell.y * kGridSize + o.cell.x)] = packed;
    }
    return f;
}

namespace {

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

Eigen::MatrixXf gaussian(Rng& rng, int rows, int cols, double scale) {
    Eigen::MatrixXf m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(scale * standard_normal(rng));
    }
    return m;
}

// Orthonormal basis of the complement of the all-ones vector, in double for
// accuracy, returned as rows.
Eigen::MatrixXd centered_basis(Rng& rng, int d) {
    Eigen::MatrixXd basis(d - 1, d);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
    int filled = 0;
    while (filled < d - 1) {
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v(i) = standard_normal(rng);
        for (int pass = 0; pass < 2; ++pass) {
            v -= ones.dot(v) * ones;
            for (int k = 0; k < filled; ++k) v -= basis.row(k).dot(v) * basis.row(k).transpose();
        }
        const double n = v.norm();
        if (n < 1e-6) continue;
        basis.row(filled++) = v / n;
    }
    return basis;
}

void layer_norm(const Eigen::Ref<const TokenMatrix>& h, const Eigen::VectorXf& gamma, const Eigen::VectorXf& beta,
                TokenMatrix& out) {
    out.resize(h.rows(), h.cols());
    const float d = static_cast<float>(h.cols());
    for (Eigen::Index t = 0; t < h.rows(); ++t) {
        const float mean = h.row(t).sum() / d;
        const float var = (h.row(t).array() - mean).square().sum() / d;
        const float inv = 1.0f / std::sqrt(var + 1e-5f);
        out.row(t) = ((h.row(t).array() - mean) * inv) * gamma.transpose().array() + beta.transpose().array();
    }
}

} // namespace

SurrogateModel::SurrogateModel(SurrogateConfig config) : cfg_(std::move(config)) {
    const int d = cfg_.dim;
    const int n_img = image_tokens();
    if (cfg_.layers < 1 || d < 2 || cfg_.tokens < n_img || n_img != kGridSize * kGridSize) {
        throw ValidationError("surrogate: need layers >= 1, dim >= 2 and a 4x4 image grid within the token count");
    }
    if (cfg_.plant_layer < 0 || cfg_.plant_layer >= cfg_.layers) {
        throw ValidationError("surrogate: plant_layer out of range");
    }
    if (cfg_.mlp_width < kAnswerSlots) throw ValidationError("surrogate: mlp_width must be >= 13");
    const int reserved = kNumTaskTypes + 2 * kAnswerSlots + 2 + cfg_.nuisance_rank;
    if (reserved + 4 > d - 1) throw ValidationError("surrogate: dim too small for the planted subspaces");

    Rng rng = make_rng(derive_seed(cfg_.seed, "surrogate"));
    const Eigen::MatrixXd basis = centered_basis(rng, d);
    int row = 0;
    U_ = basis.middleRows(row, kNumTaskTypes).cast<float>();
    row += kNumTaskTypes;
    A_ = basis.middleRows(row, kAnswerSlots).cast<float>();
    row += kAnswerSlots;
    B_ = basis.middleRows(row, kAnswerSlots).cast<float>();
    row += kAnswerSlots;
    img_carrier_ = (cfg_.carrier_norm * basis.row(row++)).transpose().cast<float>();
    txt_carrier_ = (cfg_.carrier_norm * basis.row(row++)).transpose().cast<float>();
    nuisance_ = basis.middleRows(row, cfg_.nuisance_rank).cast<float>();
    row += cfg_.nuisance_rank;

    // Content and positions live in the remaining free subspace.
    const Eigen::MatrixXd free = basis.bottomRows(d - 1 - row);
    auto free_vectors = [&](int n, double scale) {
        Eigen::MatrixXf out(n, d);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd c(free.rows());
            for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = standard_normal(rng);
            out.row(i) = (scale * (free.transpose() * c).normalized()).transpose().cast<float>();
        }
        return out;
    };
    content_ = free_vectors(cfg_.content_codebook, cfg_.content_scale);
    position_ = free_vectors(cfg_.tokens, cfg_.position_scale);

    const int w = cfg_.mlp_width;
    for (int l = 0; l < cfg_.layers; ++l) {
        Block b;
        b.gamma = Eigen::VectorXf::Ones(d);
        b.beta = Eigen::VectorXf::Zero(d);
        b.w1 = gaussian(rng, w, d, 1.0 / std::sqrt(static_cast<double>(d)));
        b.b1 = gaussian(rng, w, 1, 0.1);
        b.w2 = gaussian(rng, d, w, cfg_.block_scale / std::sqrt(static_cast<double>(w)));
        b.b2 = Eigen::VectorXf::Zero(d);
        if (l == cfg_.gate_layer) {
            // Unit j passes answer evidence B_j to the head direction A_j, but
            // only once a task signal pushes it over threshold.
            const Eigen::VectorXf task_sum = U_.colwise().sum().transpose();
            const float k = static_cast<float>(cfg_.gate_sharpness);
            for (int j = 0; j < kAnswerSlots; ++j) {
                b.w1.row(j) = k * (static_cast<float>(cfg_.gate_evidence_gain) * B_.row(j) +
                                   static_cast<float>(cfg_.gate_task_gain) * task_sum.transpose());
                b.b1(j) = -k * static_cast<float>(cfg_.gate_threshold);
                b.w2.col(j) = static_cast<float>(cfg_.gate_out_gain) * A_.row(j).transpose();
            }
        }
        blocks_.push_back(std::move(b));
    }
}

ShardHeader SurrogateModel::header() const {
    ShardHeader h;
    h.layers = static_cast<std::uint32_t>(cfg_.layers);
    h.tokens = static_cast<std::uint32_t>(cfg_.tokens);
    h.dim = static_cast<std::uint32_t>(cfg_.dim);
    h.grid_h = static_cast<std::uint32_t>(cfg_.grid_h);
    h.grid_w = static_cast<std::uint32_t>(cfg_.grid_w);
    return h;
}

TokenMatrix SurrogateModel::embed(const ExampleFeatures& ex) const {
    const int d = cfg_.dim;
    const int n_img = image_tokens();
    Rng rng = make_rng(derive_seed(cfg_.seed, hash_tag(ex.id)));
    TokenMatrix h(cfg_.tokens, d);

    const int slot = ex.answer >= 0 && ex.answer < kAnswerSlots ? ex.answer : -1;

    for (int t = 0; t < cfg_.tokens; ++t) {
        Eigen::VectorXf v = position_.row(t).transpose();
        if (t < n_img) {
            v += img_carrier_;
            const int obj = ex.cell_object[static_cast<size_t>(t)];
            const int code = obj >= 0 ? obj % cfg_.content_codebook : uniform_int(rng, 0, cfg_.content_codebook - 1);
            const float content_sign = bernoulli(rng, 0.5) ? 1.0f : -1.0f;
            v += content_sign * content_.row(code).transpose();
            if (slot >= 0) {
                v += static_cast<float>(cfg_.evidence_scale) * B_.row(slot).transpose();
            }
            for (int r = 0; r < cfg_.nuisance_rank; ++r) {
                v += static_cast<float>(cfg_.nuisance_scale * standard_normal(rng)) * nuisance_.row(r).transpose();
            }
        } else {
            v += txt_carrier_;
        }
        for (int i = 0; i < d; ++i) v(i) += static_cast<float>(cfg_.noise_scale * standard_normal(rng));
        h.row(t) = v.transpose();
    }
    return h;
}

void SurrogateModel::apply_block(int l, TokenMatrix& h, const ExampleFeatures* ex) const {
    const auto& b = blocks_.at(static_cast<size_t>(l));
    TokenMatrix x;
    layer_norm(h, b.gamma, b.beta, x);
    Eigen::MatrixXf pre = b.w1 * x.transpose(); // width x T
    pre.colwise() += b.b1;
    pre = pre.unaryExpr([](float v) { return gelu(v); });
    Eigen::MatrixXf out = b.w2 * pre; // d x T
    out.colwise() += b.b2;
    h += out.transpose();
    if (ex && l == cfg_.plant_layer) {
        const Eigen::RowVectorXf signal = static_cast<float>(amplitude(ex->difficulty)) * U_.row(index_of(ex->task));
        h.topRows(image_tokens()).rowwise() += signal;
    }
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        if (!std::isfinite(h.data()[i])) throw Error("surrogate: non-finite activation at layer " + std::to_string(l));
    }
}

TokenMatrix SurrogateModel::block_map(int l, const TokenMatrix& h) const {
    TokenMatrix out = h;
    apply_block(l, out, nullptr);
    return out;
}

Eigen::MatrixXd SurrogateModel::block_map_f64(int l, const Eigen::MatrixXd& h) const {
    const auto& b = blocks_.at(static_cast<size_t>(l));
    if (h.cols() != cfg_.dim) throw ValidationError("surrogate: state width does not match the model");
    const double d = static_cast<double>(h.cols());
    Eigen::MatrixXd x(h.rows(), h.cols());
    for (Eigen::Index t = 0; t < h.rows(); ++t) {
        const double mean = h.row(t).sum() / d;
        const double var = (h.row(t).array() - mean).square().sum() / d;
        x.row(t) = ((h.row(t).array() - mean) / std::sqrt(var + 1e-5)) * b.gamma.cast<double>().transpose().array() +
                   b.beta.cast<double>().transpose().array();
    }
    Eigen::MatrixXd pre = b.w1.cast<double>() * x.transpose();
    pre.colwise() += b.b1.cast<double>();
    pre = pre.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752)); });
    Eigen::MatrixXd out = b.w2.cast<double>() * pre;
    out.colwise() += b.b2.cast<double>();
    return h + out.transpose();
}

std::vector<float> SurrogateModel::readout(const TokenMatrix& last, int n_options) const {
    if (n_options < 1 || n_options > kAnswerSlots) throw ValidationError("surrogate: unsupported option count");
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(last.cols());
    for (Eigen::Index t = 0; t < last.rows(); ++t) pooled += last.row(t).transpose().cast<double>();
    pooled /= static_cast<double>(last.rows());
    std::vector<float> logits(static_cast<size_t>(n_options));
    for (int j = 0; j < n_options; ++j) {
        const double prior = j == 0 ? cfg_.prior_first_option : 0.0;
        logits[static_cast<size_t>(j)] =
            static_cast<float>(cfg_.readout_gain * A_.row(j).cast<double>().dot(pooled) + prior);
    }
    return logits;
}

ActivationRecord SurrogateModel::forward(const ExampleFeatures& ex) const {
    ActivationRecord rec = make_record(header(), ex.id);
    rec.label = ex.answer;
    TokenMatrix h = embed(ex);
    for (int l = 0; l < cfg_.layers; ++l) {
        apply_block(l, h, &ex);
        rec.layer(static_cast<std::uint32_t>(l)) = h;
    }
    rec.logits = readout(h, ex.n_options);
    return rec;
}

std::vector<float> SurrogateModel::logits_from(int layer, const TokenMatrix& state, const ExampleFeatures& ex,
                                               InterventionSite site) const {
    if (layer < 0 || layer >= cfg_.layers) throw ValidationError("surrogate: layer out of range");
    TokenMatrix h = state;
    const int first = site == InterventionSite::post_mlp ? layer + 1 : layer;
    for (int l = first; l < cfg_.layers; ++l) apply_block(l, h, &ex);
    return readout(h, ex.n_options);
}

} // namespace svtc
