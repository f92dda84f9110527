#include "svtc/intervention/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svtc/circuits/circuits.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/parallel.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/probing/probe.hpp"

namespace svtc {

namespace {

void check_features(const std::vector<int>& features, int m) {
    for (int j : features) {
        if (j < 0 || j >= m) {
            throw ValidationError("intervention: feature " + std::to_string(j) + " outside [0, " + std::to_string(m) +
                                  ")");
        }
    }
}

// (λ − 1) Σ_{j ∈ S} z_j f_j. Codes and features are both sorted.
Eigen::VectorXd masked_delta(const SparseCode& z, const SaeParams& sae, const std::vector<int>& features, double lambda) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(sae.d());
    auto f = features.begin();
    for (std::size_t a = 0; a < z.nnz(); ++a) {
        f = std::lower_bound(f, features.end(), z.index[a]);
        if (f == features.end()) break;
        if (*f == z.index[a]) v += z.value[a] * sae.D.col(z.index[a]);
    }
    return (lambda - 1.0) * v;
}

} // namespace

double InterventionResult::mean_rel() const {
    if (rel.empty()) return 0.0;
    return std::accumulate(rel.begin(), rel.end(), 0.0) / static_cast<double>(rel.size());
}

InterventionResult apply_intervention(const TokenMatrix& h, const SaeParams& sae, const std::vector<int>& features,
                                      double lambda, int image_tokens) {
    if (!(lambda >= 0.0)) throw ValidationError("intervention: lambda must be non-negative");
    if (image_tokens < 0 || image_tokens > h.rows()) throw ValidationError("intervention: image mask exceeds tokens");
    if (h.cols() != sae.d()) throw ValidationError("intervention: state width does not match the SAE");
    check_features(features, sae.m());
    if (!std::is_sorted(features.begin(), features.end())) throw ValidationError("intervention: features must be sorted");

    InterventionResult r;
    r.state = h;
    r.delta = Eigen::MatrixXd::Zero(image_tokens, h.cols());
    r.delta_norm.assign(static_cast<size_t>(image_tokens), 0.0);
    r.rel.assign(static_cast<size_t>(image_tokens), 0.0);
    if (lambda == 1.0 || features.empty()) return r;
    for (int t = 0; t < image_tokens; ++t) {
        const Eigen::VectorXd ht = h.row(t).transpose().cast<double>();
        const Eigen::VectorXd d = masked_delta(encode(ht, sae), sae, features, lambda);
        r.delta.row(t) = d.transpose();
        r.state.row(t) = (ht + d).transpose().cast<float>();
        const double n = d.norm();
        const double hn = ht.norm();
        r.delta_norm[static_cast<size_t>(t)] = n;
        r.rel[static_cast<size_t>(t)] = hn > 0.0 ? n / hn : 0.0;
    }
    return r;
}

int predict_option(const std::vector<float>& logits) {
    if (logits.empty()) throw ValidationError("prediction: no option logits");
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
        if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

Evaluator::Evaluator(const SurrogateModel& model, const SaeParams& sae, int layer, InterventionSite site,
                     std::vector<ExampleFeatures> examples, const std::vector<ActivationRecord>* records, int jobs)
    : model_(model), sae_(sae), layer_(layer), site_(site), jobs_(jobs) {
    const int L = model.config().layers;
    if (layer < 0 || layer >= L) throw ValidationError("evaluator: layer " + std::to_string(layer) + " out of range");
    if (sae.d() != model.config().dim) throw ValidationError("evaluator: SAE width does not match the model");
    if (records) {
        if (records->size() != examples.size()) {
            throw ValidationError("evaluator: " + std::to_string(records->size()) + " activation records for " +
                                  std::to_string(examples.size()) + " examples");
        }
        for (std::size_t i = 0; i < examples.size(); ++i) {
            if ((*records)[i].id != examples[i].id) {
                throw ValidationError("evaluator: id mismatch at position " + std::to_string(i) + ": shard has '" +
                                      (*records)[i].id + "', split has '" + examples[i].id + "'");
            }
        }
    }
    items_.resize(examples.size());
    const int n_img = model.image_tokens();
    parallel_for(examples.size(), jobs, [&](std::size_t i) {
        Item& it = items_[i];
        it.ex = std::move(examples[i]);
        const int source = site == InterventionSite::post_mlp ? layer : layer - 1;
        std::vector<float> logits;
        if (records) {
            const auto& rec = (*records)[i];
            if (source >= 0) {
                if (!rec.has_layer(static_cast<std::uint32_t>(source))) {
                    throw ValidationError("evaluator: record " + rec.id + " lacks layer " + std::to_string(source));
                }
                it.state = rec.layer(static_cast<std::uint32_t>(source));
            } else {
                it.state = model.embed(it.ex);
            }
            logits = rec.logits;
        } else {
            TokenMatrix h = model.embed(it.ex);
            for (int l = 0; l <= source; ++l) model.apply_block(l, h, &it.ex);
            it.state = h;
            logits = model.logits_from(layer, h, it.ex, site);
        }
        it.clean_pred = predict_option(logits);
        it.codes.reserve(static_cast<size_t>(n_img));
        it.token_norm.reserve(static_cast<size_t>(n_img));
        for (int t = 0; t < n_img; ++t) {
            const Eigen::VectorXd ht = it.state.row(t).transpose().cast<double>();
            it.codes.push_back(encode(ht, sae_));
            it.token_norm.push_back(ht.norm());
        }
    });
}

std::vector<std::size_t> Evaluator::all_or(const std::vector<std::size_t>* subset) const {
    if (subset) {
        for (std::size_t i : *subset) {
            if (i >= items_.size()) throw ValidationError("evaluator: subset index out of range");
        }
        return *subset;
    }
    std::vector<std::size_t> all(items_.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

std::vector<int> Evaluator::predictions(const std::vector<int>& features, double lambda,
                                        const std::vector<std::size_t>* subset) const {
    if (!(lambda >= 0.0)) throw ValidationError("intervention: lambda must be non-negative");
    check_features(features, sae_.m());
    const auto idx = all_or(subset);
    std::vector<int> out(idx.size());
    const int n_img = model_.image_tokens();
    parallel_for(idx.size(), jobs_, [&](std::size_t k) {
        const Item& it = items_[idx[k]];
        if (lambda == 1.0 || features.empty()) {
            out[k] = it.clean_pred;
            return;
        }
        TokenMatrix h = it.state;
        bool touched = false;
        for (int t = 0; t < n_img; ++t) {
            const Eigen::VectorXd d = masked_delta(it.codes[static_cast<size_t>(t)], sae_, features, lambda);
            if (d.isZero(0.0)) continue;
            h.row(t) = (h.row(t).transpose().cast<double>() + d).transpose().cast<float>();
            touched = true;
        }
        out[k] = touched ? predict_option(model_.logits_from(layer_, h, it.ex, site_)) : it.clean_pred;
    });
    return out;
}

double Evaluator::rel_perturbation(const std::vector<int>& features, double lambda,
                                   const std::vector<std::size_t>* subset) const {
    check_features(features, sae_.m());
    const auto idx = all_or(subset);
    if (idx.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i : idx) {
        const Item& it = items_[i];
        double ex_sum = 0.0;
        for (std::size_t t = 0; t < it.codes.size(); ++t) {
            if (it.token_norm[t] > 0.0) ex_sum += masked_delta(it.codes[t], sae_, features, lambda).norm() / it.token_norm[t];
        }
        total += it.codes.empty() ? 0.0 : ex_sum / static_cast<double>(it.codes.size());
    }
    return total / static_cast<double>(idx.size());
}

EvalMetrics Evaluator::run(const std::vector<int>& features, double lambda,
                           const std::vector<std::size_t>* subset) const {
    const auto idx = all_or(subset);
    const auto pred = predictions(features, lambda, &idx);
    EvalMetrics m;
    m.n = idx.size();
    if (m.n == 0) return m;
    std::size_t clean_ok = 0, ok = 0, changed = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Item& it = items_[idx[k]];
        clean_ok += it.clean_pred == it.ex.answer;
        ok += pred[k] == it.ex.answer;
        changed += pred[k] != it.clean_pred;
    }
    const double n = static_cast<double>(m.n);
    m.base_acc = clean_ok / n;
    m.acc = ok / n;
    m.delta_pp = 100.0 * (static_cast<double>(ok) - static_cast<double>(clean_ok)) / n;
    m.chg_pct = 100.0 * changed / n;
    m.rel_perturbation = lambda == 1.0 ? 0.0 : rel_perturbation(features, lambda, &idx);
    return m;
}

std::vector<bool> Evaluator::set_active(const std::vector<int>& features) const {
    std::vector<bool> out(items_.size(), false);
    for (std::size_t i = 0; i < items_.size(); ++i) {
        for (const auto& z : items_[i].codes) {
            for (int j : z.index) {
                if (std::binary_search(features.begin(), features.end(), j)) {
                    out[i] = true;
                    break;
                }
            }
            if (out[i]) break;
        }
    }
    return out;
}

std::vector<double> lambda_grid(int lo_k, int hi_k, int steps_per_unit) {
    if (steps_per_unit <= 0 || hi_k < lo_k) throw ValidationError("lambda grid: empty range");
    std::vector<double> out;
    for (int k = lo_k; k <= hi_k; ++k) out.push_back(static_cast<double>(k) / steps_per_unit);
    return out;
}

Calibration calibrate_norm_match(double reference, const std::function<double(double)>& perturbation, int coarse_steps,
                                 int fine_steps) {
    if (coarse_steps <= 0 || fine_steps <= 0 || fine_steps % coarse_steps != 0) {
        throw ValidationError("calibration: fine grid must refine the coarse grid");
    }
    Calibration c;
    c.target = reference;
    std::size_t best = 0;
    // The perturbation is symmetric about λ = 1, so mirror points differ only by
    // rounding; residuals this close count as ties.
    const double tie = 1e-12 * std::abs(reference);
    auto scan = [&](const std::vector<double>& grid) {
        for (double lam : grid) {
            const double p = perturbation(lam);
            c.table.push_back({lam, p, std::abs(p - reference)});
            const auto& cur = c.table.back();
            const auto& b = c.table[best];
            const bool tied = std::abs(cur.residual - b.residual) <= tie;
            if (c.table.size() == 1 || (!tied && cur.residual < b.residual) || (tied && cur.lambda < b.lambda)) {
                best = c.table.size() - 1;
            }
        }
    };
    scan(lambda_grid(1, 2 * coarse_steps, coarse_steps));
    const int ratio = fine_steps / coarse_steps;
    const int centre = static_cast<int>(std::lround(c.table[best].lambda * fine_steps));
    std::vector<double> fine;
    for (int k = std::max(1, centre - ratio); k <= std::min(2 * fine_steps, centre + ratio); ++k) {
        if (k % ratio != 0) fine.push_back(static_cast<double>(k) / fine_steps);
    }
    scan(fine);
    c.lambda = c.table[best].lambda;
    c.residual = c.table[best].residual;
    return c;
}

std::vector<SensitivityRow> layer_sensitivity_profile(const std::vector<const Evaluator*>& evaluators,
                                                      const std::vector<std::vector<int>>& sets,
                                                      const std::vector<double>& lambdas) {
    if (evaluators.size() != sets.size()) throw ValidationError("sensitivity: one feature set per layer is required");
    std::vector<SensitivityRow> rows;
    for (std::size_t i = 0; i < evaluators.size(); ++i) {
        if (!evaluators[i]) continue;
        for (double lam : lambdas) {
            SensitivityRow r;
            r.layer = evaluators[i]->layer();
            r.lambda = lam;
            r.metrics = evaluators[i]->run(sets[i], lam);
            r.sensitivity = std::abs(r.metrics.delta_pp);
            rows.push_back(r);
        }
    }
    return rows;
}

FlipRate zero_ablation_fliprate(const Evaluator& eval, const std::vector<int>& features,
                                const std::vector<std::size_t>* subset) {
    FlipRate f;
    f.set_size = features.size();
    f.set_fraction = static_cast<double>(features.size()) / eval.sae().m();
    f.flip_pct = eval.run(features, 0.0, subset).chg_pct;
    return f;
}

std::vector<std::size_t> draw_subsample(std::size_t population, std::size_t n, std::uint64_t seed) {
    if (n > population) {
        throw ValidationError("subsample of " + std::to_string(n) + " requested from " + std::to_string(population) +
                              " examples");
    }
    std::vector<std::size_t> idx(population);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed);
    // Partial Fisher-Yates: the first n slots are a uniform sample.
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(population - i - 1)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

BootstrapReport bootstrap(const BootstrapFn& run_fn, std::size_t population, std::uint64_t seed, std::size_t perm_seeds,
                          std::size_t subsamples, std::size_t n) {
    if (n > population) {
        throw ValidationError("bootstrap: n = " + std::to_string(n) + " exceeds the split size " +
                              std::to_string(population));
    }
    BootstrapReport rep;
    std::vector<std::vector<std::size_t>> draws;
    for (std::size_t s = 0; s < subsamples; ++s) {
        draws.push_back(draw_subsample(population, n, derive_seed(derive_seed(seed, "subsample"), s)));
    }
    std::vector<double> dpp, chg, base, rel;
    for (std::size_t p = 0; p < perm_seeds; ++p) {
        const std::uint64_t ps = derive_seed(derive_seed(seed, "permutation"), p);
        for (std::size_t s = 0; s < subsamples; ++s) {
            BootstrapRun r;
            r.perm_index = p;
            r.subsample_index = s;
            r.perm_seed = ps;
            r.subsample_seed = derive_seed(derive_seed(seed, "subsample"), s);
            r.metrics = run_fn(ps, draws[s]);
            dpp.push_back(r.metrics.delta_pp);
            chg.push_back(r.metrics.chg_pct);
            base.push_back(r.metrics.base_acc);
            rel.push_back(r.metrics.rel_perturbation);
            rep.runs.push_back(r);
        }
    }
    rep.delta_pp_mean = mean_of(dpp);
    rep.delta_pp_std = std_of(dpp);
    rep.chg_mean = mean_of(chg);
    rep.chg_std = std_of(chg);
    rep.base_mean = mean_of(base);
    rep.rel_mean = mean_of(rel);
    return rep;
}

namespace {

std::string lambda_label(double lam) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", lam);
    return buf;
}

} // namespace

std::vector<ControlRow> run_controls(const Evaluator& eval, const ControlInputs& in, std::uint64_t seed,
                                     std::size_t perm_seeds, std::size_t subsamples, std::size_t n) {
    std::vector<ControlRow> rows;
    const int m = eval.sae().m();
    auto fixed = [&](const std::string& name, const std::vector<int>& set, double lam) {
        ControlRow r;
        r.config = name + " (s=" + lambda_label(lam) + ")";
        r.lambda = lam;
        r.set_size = set.size();
        r.report = bootstrap([&](std::uint64_t, const std::vector<std::size_t>& sub) { return eval.run(set, lam, &sub); },
                             eval.size(), seed, perm_seeds, subsamples, n);
        rows.push_back(std::move(r));
    };
    auto matched = [&](const std::vector<int>& set, double target) {
        return calibrate_norm_match(target, [&](double lam) { return eval.rel_perturbation(set, lam); }).lambda;
    };

    const double ref = eval.rel_perturbation(in.pattern, in.pattern_lambda);
    const double union_lambda = matched(in.union_set, ref);
    const double union_rel = eval.rel_perturbation(in.union_set, union_lambda);

    fixed("pattern", in.pattern, in.pattern_lambda);
    fixed("union", in.union_set, union_lambda);

    // Seed-dependent controls draw a fresh set for every permutation seed.
    auto per_seed = [&](const std::string& name, const std::function<std::vector<int>(std::uint64_t)>& make,
                        bool match_norm) {
        ControlRow r;
        r.set_size = in.union_set.size();
        double lam_sum = 0.0;
        std::size_t lam_count = 0;
        std::uint64_t cached_seed = 0;
        std::vector<int> set;
        double lam = union_lambda;
        r.report = bootstrap(
            [&](std::uint64_t ps, const std::vector<std::size_t>& sub) {
                if (set.empty() || ps != cached_seed) {
                    set = make(ps);
                    cached_seed = ps;
                    lam = match_norm ? matched(set, union_rel) : union_lambda;
                    lam_sum += lam;
                    ++lam_count;
                }
                return eval.run(set, lam, &sub);
            },
            eval.size(), seed, perm_seeds, subsamples, n);
        r.lambda = lam_count ? lam_sum / static_cast<double>(lam_count) : union_lambda;
        r.config = name + " (s=" + lambda_label(r.lambda) + ")";
        rows.push_back(std::move(r));
    };
    per_seed("random", [&](std::uint64_t ps) { return random_control(m, in.union_set.size(), in.union_set, ps).indices; },
             false);
    per_seed("permutation", [&](std::uint64_t ps) { return permuted_control(in.pool, in.union_set.size(), ps).indices; },
             true);

    fixed("pattern norm-matched", in.pattern, matched(in.pattern, union_rel));
    fixed("global norm-matched", in.global, matched(in.global, union_rel));
    return rows;
}

} // namespace svtc
