#include "svtc/geometry/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

DirectionStats mean_effective_direction(const Eigen::MatrixXd& codes, const SaeParams& sae,
                                        const std::vector<int>& features, std::string kind) {
    if (codes.rows() == 0) throw ValidationError("mean effective direction: no examples");
    if (features.empty()) throw ValidationError("mean effective direction: empty feature set");
    if (codes.cols() != sae.m()) throw ValidationError("mean effective direction: code width does not match the SAE");
    DirectionStats s;
    s.kind = std::move(kind);
    s.samples = static_cast<std::size_t>(codes.rows());
    s.delta = Eigen::VectorXd::Zero(sae.d());
    for (int j : features) {
        if (j < 0 || j >= sae.m()) throw ValidationError("mean effective direction: feature out of range");
        s.delta += codes.col(j).mean() * sae.D.col(j);
    }
    s.norm = s.delta.norm();
    return s;
}

CosineInterference cosine_interference(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine: undefined for a zero-norm direction");
    CosineInterference c;
    c.rho = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    c.union_norm = (a + b).norm();
    c.union_ratio = c.union_norm / (na + nb);
    return c;
}

PairwiseAlignment pairwise_alignment(const SaeParams& sae, const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) throw ValidationError("pairwise alignment: empty feature set");
    PairwiseAlignment r;
    r.histogram.assign(20, 0);
    std::size_t negative = 0;
    for (int i : a) {
        for (int j : b) {
            if (i < 0 || j < 0 || i >= sae.m() || j >= sae.m()) {
                throw ValidationError("pairwise alignment: feature out of range");
            }
            const auto fi = sae.D.col(i);
            const auto fj = sae.D.col(j);
            const double c = std::clamp(fi.dot(fj) / (fi.norm() * fj.norm()), -1.0, 1.0);
            negative += c < 0.0;
            const int bin = std::min(19, static_cast<int>(std::floor((c + 1.0) * 10.0)));
            ++r.histogram[static_cast<size_t>(bin)];
            ++r.pairs;
        }
    }
    r.fraction_negative = static_cast<double>(negative) / static_cast<double>(r.pairs);
    return r;
}

SnrResult snr_analysis(const Eigen::VectorXd& delta, const Eigen::VectorXd& noise, double collapse_threshold) {
    const double e = noise.norm();
    if (e == 0.0) throw ValidationError("snr: noise vector must be non-zero");
    const double s = delta.norm();
    SnrResult r;
    r.snr = (s * s) / (e * e);
    if (s == 0.0) {
        r.infinite = true;
        r.nsr_out = std::numeric_limits<double>::infinity();
    } else {
        r.nsr_out = e / s;
    }
    r.collapse = r.nsr_out > collapse_threshold;
    return r;
}

namespace {

Eigen::VectorXd centered(const Eigen::VectorXd& v) { return v.array() - v.mean(); }

// Least-squares slope and intercept of y on x.
std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return {slope, my - slope * mx};
}

Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index d, double scale) {
    Eigen::VectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = scale * standard_normal(rng);
    return v;
}

} // namespace

AmplificationCurve layernorm_amplification_sim(const Eigen::VectorXd& direction, double noise_scale,
                                               const std::vector<double>& delta_norms, const Eigen::VectorXd& gamma,
                                               const Eigen::VectorXd& beta, int draws, std::uint64_t seed) {
    const auto d = direction.size();
    if (d < 2 || gamma.size() != d || beta.size() != d) throw ValidationError("layernorm sim: dimension mismatch");
    if (draws <= 0 || noise_scale < 0.0) throw ValidationError("layernorm sim: need draws > 0 and noise_scale >= 0");
    const Eigen::VectorXd u = direction.normalized();
    const Eigen::VectorXd uc = centered(u);
    if (uc.norm() < 1e-12) throw ValidationError("layernorm sim: signal direction has zero variance across dimensions");
    AmplificationCurve curve;
    for (double a : delta_norms) {
        if (!(a > 0.0)) throw ValidationError("layernorm sim: sweep values must be positive");
    }
    for (std::size_t k = 0; k < delta_norms.size(); ++k) {
        const double a = delta_norms[k];
        double share = 0.0;
        for (int s = 0; s < draws; ++s) {
            // Common noise draws across the sweep.
            Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
            const Eigen::VectorXd eps = gaussian_vector(rng, d, noise_scale / std::sqrt(static_cast<double>(d)));
            const Eigen::VectorXd h = a * u + eps;
            const double sd = std::sqrt(centered(h).squaredNorm() / static_cast<double>(d));
            if (sd == 0.0) throw ValidationError("layernorm sim: zero-variance input");
            const Eigen::VectorXd signal = gamma.cwiseProduct(a * uc) / sd;
            const Eigen::VectorXd noise = gamma.cwiseProduct(centered(eps)) / sd;
            const double sn = signal.norm();
            share += sn > 0.0 ? noise.norm() / sn : std::numeric_limits<double>::infinity();
        }
        curve.points.push_back({a, share / draws});
    }
    std::vector<double> lx, ly;
    for (const auto& p : curve.points) {
        if (p.noise_share > 0.0 && std::isfinite(p.noise_share)) {
            lx.push_back(std::log(p.delta_norm));
            ly.push_back(std::log(p.noise_share));
        }
    }
    if (lx.size() >= 2) curve.slope = linear_fit(lx, ly).first;
    return curve;
}

double softmax_entropy(const Eigen::VectorXd& scores) {
    if (scores.size() == 0) throw ValidationError("entropy: no scores");
    const double mx = scores.maxCoeff();
    const Eigen::ArrayXd e = (scores.array() - mx).exp();
    const double z = e.sum();
    double h = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        const double p = e(i) / z;
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(0.0, h);
}

EntropyCurve attention_entropy_probe(const Eigen::MatrixXd& W_q, const Eigen::MatrixXd& W_k,
                                     const Eigen::VectorXd& direction, const std::vector<double>& signal_norms,
                                     double noise_norm, int patches, int draws, std::uint64_t seed) {
    const auto d = direction.size();
    if (W_q.cols() != d || W_k.cols() != d || W_q.rows() != W_k.rows() || W_q.rows() == 0) {
        throw ValidationError("attention probe: query/key maps do not match the token width");
    }
    if (patches < 1 || draws < 1) throw ValidationError("attention probe: need at least one patch and one draw");
    const Eigen::VectorXd u = direction.normalized();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(W_q.rows()));
    const double per_dim = noise_norm / std::sqrt(static_cast<double>(d));
    EntropyCurve curve;
    curve.max_entropy = std::log(static_cast<double>(patches));
    for (double hs : signal_norms) {
        double total = 0.0;
        for (int s = 0; s < draws; ++s) {
            Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
            const Eigen::VectorXd q = W_q * (hs * u + gaussian_vector(rng, d, per_dim));
            Eigen::VectorXd scores(patches);
            for (int j = 0; j < patches; ++j) {
                Eigen::VectorXd k = gaussian_vector(rng, d, per_dim);
                if (j == 0) k += hs * u;
                scores(j) = q.dot(W_k * k) * inv_sqrt_dk;
            }
            total += softmax_entropy(scores);
        }
        curve.points.push_back({hs, total / draws});
    }
    std::vector<EntropyPoint> sorted = curve.points;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.signal_norm > b.signal_norm; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].entropy + 1e-9 < sorted[i - 1].entropy) curve.non_decreasing_as_signal_shrinks = false;
    }
    return curve;
}

CurvatureResult curvature_drift_error(const VectorMap& F, const Eigen::VectorXd& h0, const Eigen::VectorXd& v,
                                      const std::vector<double>& alphas) {
    if (h0.size() != v.size()) throw ValidationError("curvature: base point and direction differ in size");
    CurvatureResult r;
    const Eigen::VectorXd f0 = F(h0);
    const double scale = 1.0 + h0.norm();
    for (double a : alphas) {
        if (!(a > 0.0)) throw ValidationError("curvature: alpha must be positive");
        if (a * v.norm() < 1e-5 * scale) {
            r.warnings.push_back("alpha " + std::to_string(a) +
                                 " is too small for a reliable second difference; use alpha*|v| in [1e-4, 1e-1]*(1+|h0|)");
        }
        const Eigen::VectorXd g = (F(h0 + a * v) - 2.0 * f0 + F(h0 - a * v)) / (a * a);
        const double gn = g.norm();
        r.points.push_back({a, gn, 0.5 * a * a * gn});
    }
    if (r.points.size() >= 2) {
        std::vector<double> x, y;
        for (const auto& p : r.points) {
            x.push_back(p.alpha * p.alpha);
            y.push_back(p.drift);
        }
        const auto [slope, intercept] = linear_fit(x, y);
        r.fit_slope = slope;
        r.fit_intercept = intercept;
        double my = 0.0;
        for (double yi : y) my += yi;
        my /= static_cast<double>(y.size());
        double ss_res = 0.0, ss_tot = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = y[i] - (slope * x[i] + intercept);
            ss_res += e * e;
            ss_tot += (y[i] - my) * (y[i] - my);
        }
        r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    }
    return r;
}

Eigen::VectorXd osp_compose(const Eigen::VectorXd& delta_p, const Eigen::VectorXd& delta_g) {
    if (delta_p.size() != delta_g.size()) throw ValidationError("osp: dimension mismatch");
    const double pp = delta_p.squaredNorm();
    if (pp == 0.0) throw ValidationError("osp: the first direction must be non-zero");
    return delta_p + (delta_g - (delta_p.dot(delta_g) / pp) * delta_p);
}

std::optional<double> conditional_coactivation(const std::vector<bool>& p_active, const std::vector<bool>& g_active) {
    if (p_active.size() != g_active.size()) throw ValidationError("co-activation: activity vectors differ in length");
    std::size_t p = 0, both = 0;
    for (std::size_t i = 0; i < p_active.size(); ++i) {
        if (p_active[i]) {
            ++p;
            both += g_active[i];
        }
    }
    if (p == 0) return std::nullopt;
    return static_cast<double>(both) / static_cast<double>(p);
}

nlohmann::ordered_json to_json(const InterferenceReport& r) {
    nlohmann::ordered_json j;
    j["rho"] = r.rho;
    j["fraction_negative_pairs"] = r.fraction_negative_pairs;
    j["union_norm_ratio"] = r.union_norm_ratio;
    j["p_g_given_p"] = r.p_g_given_p ? nlohmann::ordered_json(*r.p_g_given_p) : nlohmann::ordered_json(nullptr);
    j["norm_pattern"] = r.norm_pattern;
    j["norm_global"] = r.norm_global;
    j["norm_union"] = r.norm_union;
    return j;
}

} // namespace svtc
