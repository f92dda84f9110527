#include "svtc/sae/sae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "svtc/common/binary_io.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

double SparseCode::get(int j) const {
    const auto it = std::lower_bound(index.begin(), index.end(), j);
    if (it == index.end() || *it != j) return 0.0;
    return value[static_cast<size_t>(it - index.begin())];
}

void SaeParams::validate() const {
    const auto dd = D.rows();
    const auto mm = D.cols();
    if (W_enc.rows() != mm || W_enc.cols() != dd || b_enc.size() != mm || b_dec.size() != dd) {
        throw ValidationError("sae: parameter shapes are inconsistent");
    }
    if (k < 0 || k > mm) throw ValidationError("sae: need 0 <= k <= m");
    if (mm < dd) throw ValidationError("sae: dictionary must be overcomplete (m >= d)");
}

double SaeParams::max_norm_deviation() const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < D.cols(); ++j) worst = std::max(worst, std::abs(D.col(j).norm() - 1.0));
    return worst;
}

namespace {

// Indices of the k largest entries, ties broken toward the lower index,
// returned in ascending index order.
std::vector<int> topk_indices(const Eigen::Ref<const Eigen::VectorXd>& v, int k) {
    const int n = static_cast<int>(v.size());
    k = std::min(k, n);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (k <= 0) return {};
    auto before = [&](int a, int b) { return v(a) > v(b) || (v(a) == v(b) && a < b); };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), before);
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

Eigen::VectorXd pre_activation(const Eigen::Ref<const Eigen::VectorXd>& h, const SaeParams& p) {
    if (h.size() != p.d()) {
        throw ValidationError("sae: input has dimension " + std::to_string(h.size()) + ", expected " +
                              std::to_string(p.d()));
    }
    if (p.pre_bias) return p.W_enc * (h - p.b_dec) + p.b_enc;
    return p.W_enc * h + p.b_enc;
}

} // namespace

Eigen::VectorXd topk(const Eigen::Ref<const Eigen::VectorXd>& v, int k) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
    for (int i : topk_indices(v, k)) out(i) = v(i);
    return out;
}

SparseCode encode(const Eigen::Ref<const Eigen::VectorXd>& h, const SaeParams& p) {
    const Eigen::VectorXd pre = pre_activation(h, p).cwiseMax(0.0);
    SparseCode z;
    for (int i : topk_indices(pre, p.k)) {
        if (pre(i) > 0.0) {
            z.index.push_back(i);
            z.value.push_back(pre(i));
        }
    }
    return z;
}

Eigen::VectorXd encode_dense(const Eigen::Ref<const Eigen::VectorXd>& h, const SaeParams& p) {
    const SparseCode z = encode(h, p);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p.m());
    for (std::size_t i = 0; i < z.nnz(); ++i) out(z.index[i]) = z.value[i];
    return out;
}

Eigen::VectorXd decode(const SparseCode& z, const SaeParams& p) {
    Eigen::VectorXd out = p.b_dec;
    for (std::size_t i = 0; i < z.nnz(); ++i) {
        if (z.index[i] < 0 || z.index[i] >= p.m()) throw ValidationError("sae: code index out of range");
        out += z.value[i] * p.D.col(z.index[i]);
    }
    return out;
}

Eigen::VectorXd decode_dense(const Eigen::Ref<const Eigen::VectorXd>& z, const SaeParams& p) {
    if (z.size() != p.m()) throw ValidationError("sae: code has wrong dimension");
    return p.D * z + p.b_dec;
}

SaeParams init_sae(int d, int m, int k, const Eigen::MatrixXd& data_sample, std::uint64_t seed) {
    SaeParams p;
    p.k = k;
    Rng rng = make_rng(derive_seed(seed, "sae-init"));
    p.D.resize(d, m);
    for (Eigen::Index i = 0; i < p.D.size(); ++i) p.D.data()[i] = standard_normal(rng);
    p.D.colwise().normalize();
    p.W_enc = p.D.transpose();
    p.b_enc = Eigen::VectorXd::Zero(m);
    p.b_dec = data_sample.rows() > 0 ? Eigen::VectorXd(data_sample.colwise().mean().transpose())
                                     : Eigen::VectorXd::Zero(d);
    p.validate();
    return p;
}

double reconstruction_loss(const Eigen::MatrixXd& data, const SaeParams& p) {
    if (data.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const Eigen::VectorXd h = data.row(i).transpose();
        total += (h - decode(encode(h, p), p)).squaredNorm();
    }
    return total / static_cast<double>(data.rows());
}

double mean_relative_error(const Eigen::MatrixXd& data, const SaeParams& p) {
    if (data.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const Eigen::VectorXd h = data.row(i).transpose();
        const double n = h.norm();
        if (n > 0.0) total += (h - decode(encode(h, p), p)).norm() / n;
    }
    return total / static_cast<double>(data.rows());
}

Eigen::MatrixXd decoder_gradient(const Eigen::MatrixXd& data, const SaeParams& p) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p.d(), p.m());
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const Eigen::VectorXd h = data.row(i).transpose();
        const SparseCode z = encode(h, p);
        const Eigen::VectorXd e = decode(z, p) - h;
        for (std::size_t a = 0; a < z.nnz(); ++a) g.col(z.index[a]) += 2.0 * z.value[a] * e;
    }
    return g / static_cast<double>(std::max<Eigen::Index>(1, data.rows()));
}

namespace {

struct Adam {
    Eigen::MatrixXd m, v;
    explicit Adam(Eigen::Index rows, Eigen::Index cols)
        : m(Eigen::MatrixXd::Zero(rows, cols)), v(Eigen::MatrixXd::Zero(rows, cols)) {}

    template <typename Param>
    void step(Param& param, const Eigen::MatrixXd& grad, const SaeTrainConfig& c, int t) {
        m = c.beta1 * m + (1.0 - c.beta1) * grad;
        v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(c.beta1, t);
        const double bc2 = 1.0 - std::pow(c.beta2, t);
        param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    }
};

} // namespace

SaeParams train_sae(const Eigen::MatrixXd& data, int m, int k, const SaeTrainConfig& config, TrainStats* stats,
                    const CheckpointFn& on_checkpoint) {
    const int d = static_cast<int>(data.cols());
    const auto n = data.rows();
    if (n == 0) throw ValidationError("train_sae: no training vectors");
    if (config.batch_size <= 0 || config.steps < 0 || config.lr <= 0.0) {
        throw ValidationError("train_sae: batch size, steps and learning rate must be positive");
    }
    SaeParams p = init_sae(d, m, k, data, config.seed);
    p.pre_bias = config.pre_bias;

    TrainStats local;
    TrainStats& st = stats ? *stats : local;
    st = TrainStats{};
    st.initial_loss = reconstruction_loss(data, p);
    st.max_norm_deviation = p.max_norm_deviation();

    Adam adam_W(m, d), adam_be(m, 1), adam_D(d, m), adam_bd(d, 1);
    std::vector<int> last_active(static_cast<size_t>(m), -1);
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(derive_seed(config.seed, "sae-batches"));
    std::size_t cursor = order.size();

    Eigen::MatrixXd gW(m, d), gD(d, m);
    Eigen::VectorXd gbe(m), gbd(d);
    for (int step = 1; step <= config.steps; ++step) {
        gW.setZero();
        gD.setZero();
        gbe.setZero();
        gbd.setZero();
        double loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor >= order.size()) {
                svtc::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const Eigen::VectorXd h = data.row(order[cursor++]).transpose();
            const Eigen::VectorXd x = p.pre_bias ? Eigen::VectorXd(h - p.b_dec) : h;
            const SparseCode z = encode(h, p);
            const Eigen::VectorXd e = decode(z, p) - h; // dL/dĥ = 2e
            loss += e.squaredNorm();
            gbd += 2.0 * e;
            for (std::size_t a = 0; a < z.nnz(); ++a) {
                const int j = z.index[a];
                last_active[static_cast<size_t>(j)] = step;
                gD.col(j) += 2.0 * z.value[a] * e;
                const double dz = 2.0 * p.D.col(j).dot(e);
                gW.row(j) += dz * x.transpose();
                gbe(j) += dz;
                if (p.pre_bias) gbd -= dz * p.W_enc.row(j).transpose();
            }
        }
        const double inv = 1.0 / config.batch_size;
        loss *= inv;
        if (!std::isfinite(loss)) throw Error("train_sae: non-finite loss at step " + std::to_string(step));
        st.step_loss.push_back(loss);
        gW *= inv;
        gD *= inv;
        gbe *= inv;
        gbd *= inv;

        // Keep updates tangent to the unit sphere of each decoder column.
        for (int j = 0; j < m; ++j) gD.col(j) -= p.D.col(j).dot(gD.col(j)) * p.D.col(j);

        adam_W.step(p.W_enc, gW, config, step);
        adam_be.step(p.b_enc, gbe, config, step);
        adam_D.step(p.D, gD, config, step);
        adam_bd.step(p.b_dec, gbd, config, step);
        p.D.colwise().normalize();
        st.max_norm_deviation = std::max(st.max_norm_deviation, p.max_norm_deviation());

        if (on_checkpoint && config.checkpoint_every > 0 &&
            (step % config.checkpoint_every == 0 || step == config.steps)) {
            on_checkpoint(step, p);
        }
    }

    st.final_loss = reconstruction_loss(data, p);
    st.final_relative_error = mean_relative_error(data, p);
    st.dead_features = 0;
    for (int last : last_active) {
        if (last < 0 || config.steps - last >= config.dead_window) ++st.dead_features;
    }
    return p;
}

namespace {

void put_f32s(std::ostream& out, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) le::put_f32(out, static_cast<float>(p[i]));
}

void get_f32s(std::istream& in, double* p, std::size_t n, const std::string& what) {
    std::vector<char> buf(n * 4);
    le::read_exact(in, buf.data(), buf.size(), what);
    for (std::size_t i = 0; i < n; ++i) p[i] = le::decode_f32(buf.data() + 4 * i);
}

} // namespace

void save_sae(const std::filesystem::path& path, const SaeParams& p) {
    p.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write("SAE1", 4);
    le::put_u32(out, static_cast<std::uint32_t>(p.d()));
    le::put_u32(out, static_cast<std::uint32_t>(p.m()));
    le::put_u32(out, static_cast<std::uint32_t>(p.k));
    // Row-major payloads.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> W = p.W_enc;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> D = p.D;
    put_f32s(out, W.data(), static_cast<size_t>(W.size()));
    put_f32s(out, p.b_enc.data(), static_cast<size_t>(p.b_enc.size()));
    put_f32s(out, D.data(), static_cast<size_t>(D.size()));
    put_f32s(out, p.b_dec.data(), static_cast<size_t>(p.b_dec.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

SaeParams load_sae(const std::filesystem::path& path, bool pre_bias) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string what = path.string();
    char magic[4];
    le::read_exact(in, magic, 4, what);
    if (std::memcmp(magic, "SAE1", 4) != 0) throw FormatError(what + ": bad magic, not an SAE1 checkpoint");
    const auto d = static_cast<Eigen::Index>(le::get_u32(in, what));
    const auto m = static_cast<Eigen::Index>(le::get_u32(in, what));
    const int k = static_cast<int>(le::get_u32(in, what));
    if (d == 0 || m == 0 || d > (1 << 16) || m > (1 << 22)) throw FormatError(what + ": implausible dimensions");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> W(m, d), D(d, m);
    SaeParams p;
    p.k = k;
    p.pre_bias = pre_bias;
    p.b_enc.resize(m);
    p.b_dec.resize(d);
    get_f32s(in, W.data(), static_cast<size_t>(W.size()), what);
    get_f32s(in, p.b_enc.data(), static_cast<size_t>(m), what);
    get_f32s(in, D.data(), static_cast<size_t>(D.size()), what);
    get_f32s(in, p.b_dec.data(), static_cast<size_t>(d), what);
    p.W_enc = W;
    p.D = D;
    p.validate();
    return p;
}

} // namespace svtc
