#include "nptrack/sparse_gp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "nptrack/rng.hpp"

namespace nptrack {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'G', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr double kJitterScale = 1e-8;
constexpr std::uint32_t kEigCheckInterval = 256;

void validate_hyper(const KernelHyper& hyper) {
    if (!(hyper.sigma_f2 > 0.0) || !std::isfinite(hyper.sigma_f2) || !(hyper.sigma_eps2 > 0.0) ||
        !std::isfinite(hyper.sigma_eps2) || !hyper.lengthscale.allFinite() ||
        (hyper.lengthscale.array() <= 0.0).any()) {
        throw ConfigError("kernel hyperparameters must be finite and strictly positive");
    }
}

Eigen::MatrixXd cross_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const KernelHyper& hyper) {
    const GPInput inv_ls2 = hyper.lengthscale.array().square().inverse();
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            const auto d = (A.row(i) - B.row(j)).transpose().array();
            K(i, j) = hyper.sigma_f2 * std::exp(-0.5 * (d.square() * inv_ls2.array()).sum());
        }
    }
    return K;
}

} // namespace

double kernel(const GPInput& a, const GPInput& b, const KernelHyper& hyper) {
    const auto d = (a - b).array() / hyper.lengthscale.array();
    return hyper.sigma_f2 * std::exp(-0.5 * d.square().sum());
}

SparseGPHead::SparseGPHead(Eigen::MatrixXd inducing, const KernelHyper& hyper, double forgetting) {
    validate_hyper(hyper);
    if (inducing.rows() < 1 || inducing.cols() != 9) {
        throw DimensionMismatch("inducing inputs must be M x 9 with M >= 1");
    }
    if (!(forgetting > 0.0) || forgetting > 1.0) {
        throw ConfigError("forgetting factor must lie in (0, 1]");
    }
    inducing_ = inducing;
    hyper_ = hyper;
    lambda_ = forgetting;
    rebuild_kernel_cache();
    mean_ = Eigen::VectorXd::Zero(size());
    cov_ = km_;
    refresh_alpha();
}

void SparseGPHead::rebuild_kernel_cache() {
    inv_ls2_ = hyper_.lengthscale.array().square().inverse();
    km_ = cross_kernel(inducing_, inducing_, hyper_);
    km_.diagonal().array() += kJitterScale * hyper_.sigma_f2;
    Eigen::LLT<Eigen::MatrixXd> llt(km_);
    if (llt.info() != Eigen::Success) {
        throw SingularKernelMatrix("inducing kernel matrix is not positive definite");
    }
    km_inv_ = llt.solve(Eigen::MatrixXd::Identity(size(), size()));
}

void SparseGPHead::refresh_alpha() { alpha_ = km_inv_ * mean_; }

SparseGPHead SparseGPHead::batch_fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& Y,
                                     Eigen::MatrixXd inducing, const KernelHyper& hyper,
                                     double forgetting) {
    if (Z.rows() != Y.size() || (Z.rows() > 0 && Z.cols() != 9)) {
        throw DimensionMismatch("batch_fit: Z must be N x 9 and Y length N");
    }
    SparseGPHead head(std::move(inducing), hyper, forgetting);
    if (Z.rows() == 0) {
        return head;  // prior
    }
    const double inv_se2 = 1.0 / hyper.sigma_eps2;
    const Eigen::MatrixXd kmn = cross_kernel(head.inducing_, Z, hyper);
    const Eigen::MatrixXd a = head.km_ + inv_se2 * (kmn * kmn.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) {
        throw SingularKernelMatrix("batch_fit: information matrix factorization failed");
    }
    head.cov_ = head.km_ * ldlt.solve(head.km_);
    head.cov_ = 0.5 * (head.cov_ + head.cov_.transpose()).eval();
    head.mean_ = inv_se2 * head.cov_ * (head.km_inv_ * (kmn * Y));
    if (!head.cov_.allFinite() || !head.mean_.allFinite()) {
        throw SingularKernelMatrix("batch_fit produced non-finite posterior");
    }
    head.refresh_alpha();
    return head;
}

void SparseGPHead::kernel_row(const GPInput& z, double* out) const {
    const int m = size();
    for (int i = 0; i < m; ++i) {
        double q = 0.0;
        const double* zu = inducing_.data() + static_cast<std::size_t>(i) * 9;
        for (int d = 0; d < 9; ++d) {
            const double diff = z[d] - zu[d];
            q += diff * diff * inv_ls2_[d];
        }
        out[i] = -0.5 * q;
    }
    Eigen::Map<Eigen::ArrayXd> row(out, m);
    row = hyper_.sigma_f2 * row.exp();
}

double SparseGPHead::predict_mean(const GPInput& z) const {
    if (size() == 0) throw Error("predict on an empty GP head");
    double buf[256];
    std::vector<double> heap;
    double* row = buf;
    if (size() > 256) {
        heap.resize(size());
        row = heap.data();
    }
    kernel_row(z, row);
    return Eigen::Map<const Eigen::VectorXd>(row, size()).dot(alpha_);
}

SparseGPHead::Prediction SparseGPHead::predict(const GPInput& z) const {
    if (size() == 0) throw Error("predict on an empty GP head");
    Eigen::VectorXd krow(size());
    kernel_row(z, krow.data());
    const Eigen::VectorXd phi = km_inv_ * krow;
    const double k_star = hyper_.sigma_f2;
    const double var = k_star - phi.dot(krow) + phi.dot(cov_ * phi);
    return {krow.dot(alpha_), std::max(var, 0.0)};
}

Eigen::RowVectorXd SparseGPHead::feature_row(const GPInput& z) const {
    if (size() == 0) throw Error("feature_row on an empty GP head");
    Eigen::VectorXd krow(size());
    kernel_row(z, krow.data());
    return (km_inv_ * krow).transpose();
}

void SparseGPHead::recursive_update(const GPInput& z, double y) {
    const Eigen::RowVectorXd phi = feature_row(z);
    const double innovation = y - phi.dot(mean_);
    const Eigen::VectorXd s_phi = cov_ * phi.transpose();
    const double gain_denom = lambda_ + phi.dot(s_phi);
    if (!(gain_denom > 0.0) || !std::isfinite(gain_denom)) {
        throw NonPositiveGain("recursive_update: gain denominator is not positive");
    }
    mean_ += s_phi * (innovation / gain_denom);
    cov_ = (cov_ - (s_phi * s_phi.transpose()) / gain_denom) / lambda_;
    cov_ = 0.5 * (cov_ + cov_.transpose()).eval();

    // Roundoff can push tiny eigenvalues negative over long streams; clip
    // them back to zero when a periodic check finds any below -1e-10.
    if (++updates_since_eig_check_ >= kEigCheckInterval) {
        updates_since_eig_check_ = 0;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_);
        if (eig.eigenvalues().minCoeff() < -1e-10) {
            const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
            cov_ = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
            cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
        }
    }
    refresh_alpha();
}

void SparseGPHead::save(std::ostream& out) const {
    out.write(kMagic, 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kVersion);
    put_u32(static_cast<std::uint32_t>(size()));
    put_u32(9);
    put_f64(lambda_);
    for (int d = 0; d < 9; ++d) put_f64(hyper_.lengthscale[d]);
    put_f64(hyper_.sigma_f2);
    put_f64(hyper_.sigma_eps2);
    for (Eigen::Index i = 0; i < inducing_.rows(); ++i) {
        for (int d = 0; d < 9; ++d) put_f64(inducing_(i, d));
    }
    for (Eigen::Index i = 0; i < mean_.size(); ++i) put_f64(mean_[i]);
    for (Eigen::Index i = 0; i < cov_.rows(); ++i) {
        for (Eigen::Index j = 0; j < cov_.cols(); ++j) put_f64(cov_(i, j));
    }
    if (!out) throw IoError("failed writing GP head");
}

SparseGPHead SparseGPHead::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("not a GP head (NPGP) record");
    }
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_f64 = [&] {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_u32() != kVersion) throw IoError("unsupported NPGP version");
    const std::uint32_t m = get_u32();
    const std::uint32_t dim = get_u32();
    if (dim != 9 || m < 1) throw IoError("NPGP record has invalid dimensions");
    const double lambda = get_f64();
    KernelHyper hyper;
    for (int d = 0; d < 9; ++d) hyper.lengthscale[d] = get_f64();
    hyper.sigma_f2 = get_f64();
    hyper.sigma_eps2 = get_f64();
    Eigen::MatrixXd inducing(m, 9);
    for (std::uint32_t i = 0; i < m; ++i) {
        for (int d = 0; d < 9; ++d) inducing(i, d) = get_f64();
    }
    SparseGPHead head(std::move(inducing), hyper, lambda);
    for (std::uint32_t i = 0; i < m; ++i) head.mean_[i] = get_f64();
    for (std::uint32_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) head.cov_(i, j) = get_f64();
    }
    if (!in) throw IoError("truncated NPGP record");
    head.refresh_alpha();
    return head;
}

ResidualModel::ResidualModel(SparseGPHead dv, SparseGPHead dbeta, SparseGPHead dr)
    : heads_{std::move(dv), std::move(dbeta), std::move(dr)} {
    if (heads_[0].inducing() != heads_[1].inducing() ||
        heads_[0].inducing() != heads_[2].inducing()) {
        throw DimensionMismatch("residual heads must share inducing inputs");
    }
    // Equal lengthscales let one exponential row serve all heads (signal
    // variances only scale it).
    shared_kernel_ = heads_[0].hyper().lengthscale == heads_[1].hyper().lengthscale &&
                     heads_[0].hyper().lengthscale == heads_[2].hyper().lengthscale;
}

ResidualModel ResidualModel::prior(const Eigen::MatrixXd& inducing,
                                   const std::array<KernelHyper, 3>& hyper, double forgetting) {
    return ResidualModel(SparseGPHead(inducing, hyper[0], forgetting),
                         SparseGPHead(inducing, hyper[1], forgetting),
                         SparseGPHead(inducing, hyper[2], forgetting));
}

Eigen::Vector3d ResidualModel::predict_mean(const GPInput& z) const {
    if (empty()) return Eigen::Vector3d::Zero();
    if (shared_kernel_) {
        const int m = heads_[0].size();
        double buf[256];
        std::vector<double> heap;
        double* row = buf;
        if (m > 256) {
            heap.resize(m);
            row = heap.data();
        }
        const auto& h0 = heads_[0];
        const GPInput inv_ls2 = h0.hyper().lengthscale.array().square().inverse();
        const double* zu = h0.inducing().data();
        for (int i = 0; i < m; ++i) {
            double q = 0.0;
            const double* zrow = zu + static_cast<std::size_t>(i) * 9;
            for (int d = 0; d < 9; ++d) {
                const double diff = z[d] - zrow[d];
                q += diff * diff * inv_ls2[d];
            }
            row[i] = -0.5 * q;
        }
        Eigen::Map<Eigen::ArrayXd> arr(row, m);
        arr = arr.exp();
        Eigen::Map<const Eigen::VectorXd> krow(row, m);
        Eigen::Vector3d out;
        out << heads_[0].hyper().sigma_f2 * krow.dot(heads_[0].alpha()),
            heads_[1].hyper().sigma_f2 * krow.dot(heads_[1].alpha()),
            heads_[2].hyper().sigma_f2 * krow.dot(heads_[2].alpha());
        return out;
    }
    return {heads_[0].predict_mean(z), heads_[1].predict_mean(z), heads_[2].predict_mean(z)};
}

std::array<SparseGPHead::Prediction, 3> ResidualModel::predict(const GPInput& z) const {
    return {heads_[0].predict(z), heads_[1].predict(z), heads_[2].predict(z)};
}

void ResidualModel::update(const GPInput& z, const Eigen::Vector3d& y) {
    for (int i = 0; i < 3; ++i) heads_[i].recursive_update(z, y[i]);
}

void ResidualModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& head : heads_) head.save(out);
}

ResidualModel ResidualModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    SparseGPHead dv = SparseGPHead::load(in);
    SparseGPHead dbeta = SparseGPHead::load(in);
    SparseGPHead dr = SparseGPHead::load(in);
    return ResidualModel(std::move(dv), std::move(dbeta), std::move(dr));
}

std::optional<Eigen::Vector3d> residual_target(const VehicleState& x, const ControlInput& u,
                                               const VehicleState& x_next_measured,
                                               const VehicleParams& p, double dt,
                                               const OutlierGate& gate, std::uint64_t* rejected) {
    const VehicleState nominal = ode_step(x, u, p, dt);
    const Eigen::Vector3d y{x_next_measured.v - nominal.v, x_next_measured.beta - nominal.beta,
                            x_next_measured.r - nominal.r};
    if ((y.cwiseAbs().array() > gate.max_abs.array()).any()) {
        if (rejected) ++*rejected;
        return std::nullopt;
    }
    return y;
}

Eigen::MatrixXd kmeans_inducing(const Eigen::MatrixXd& data, int m, std::uint64_t seed,
                                int iterations) {
    const Eigen::Index n = data.rows();
    if (n == 0) throw DimensionMismatch("kmeans_inducing: empty dataset");
    m = static_cast<int>(std::min<Eigen::Index>(std::max(1, m), n));

    auto uniform_index = [&](std::uint32_t c0, std::uint32_t c1, Eigen::Index bound) {
        const auto u = counter_uniform2(seed, RngDomain::kmeans, c0, c1, 0);
        return std::min<Eigen::Index>(static_cast<Eigen::Index>(u[0] * bound), bound - 1);
    };

    // k-means++ seeding.
    Eigen::MatrixXd centers(m, data.cols());
    std::vector<Eigen::Index> chosen;
    chosen.push_back(uniform_index(0, 0, n));
    centers.row(0) = data.row(chosen[0]);
    Eigen::VectorXd dist2 = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < m; ++c) {
        const double total = dist2.sum();
        Eigen::Index pick;
        if (total <= 0.0) {
            pick = uniform_index(static_cast<std::uint32_t>(c), 1, n);
        } else {
            const auto u = counter_uniform2(seed, RngDomain::kmeans, static_cast<std::uint32_t>(c), 2, 0);
            double target = u[0] * total;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                target -= dist2[i];
                if (target <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.row(c) = data.row(pick);
        dist2 = dist2.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    // Lloyd iterations.
    std::vector<int> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < m; ++c) {
                const double d = (data.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, data.cols());
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += data.row(i);
            counts[assign[i]] += 1.0;
        }
        for (int c = 0; c < m; ++c) {
            if (counts[c] > 0.0) centers.row(c) = sums.row(c) / counts[c];
        }
    }
    return centers;
}

double gp_log_marginal(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                       const KernelHyper& hyper) {
    const Eigen::Index n = Z.rows();
    Eigen::MatrixXd k = cross_kernel(Z, Z, hyper);
    k.diagonal().array() += hyper.sigma_eps2;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = llt.solve(y);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
    return -0.5 * y.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * M_PI);
}

KernelHyper grid_search_hyper(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                              const KernelHyper& base, const HyperGrid& grid, int max_points) {
    const Eigen::Index n = std::min<Eigen::Index>(Z.rows(), max_points);
    if (n < 2) return base;
    // Strided subsample keeps coverage of the whole stream.
    const Eigen::Index stride = std::max<Eigen::Index>(1, Z.rows() / n);
    Eigen::MatrixXd zs(n, Z.cols());
    Eigen::VectorXd ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        zs.row(i) = Z.row(std::min(i * stride, Z.rows() - 1));
        ys[i] = y[std::min(i * stride, Z.rows() - 1)];
    }
    KernelHyper best = base;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (double scale : grid.lengthscale_scales) {
        for (double sf2 : grid.signal_variances) {
            for (double se2 : grid.noise_variances) {
                KernelHyper h = base;
                h.lengthscale = base.lengthscale * scale;
                h.sigma_f2 = sf2;
                h.sigma_eps2 = se2;
                const double lml = gp_log_marginal(zs, ys, h);
                if (lml > best_lml) {
                    best_lml = lml;
                    best = h;
                }
            }
        }
    }
    return best;
}

void ResidualDataset::append(const GPInput& xi, const Eigen::Vector3d& y) {
    const Eigen::Index n = inputs.rows();
    inputs.conservativeResize(n + 1, 9);
    targets.conservativeResize(n + 1, 3);
    inputs.row(n) = xi.transpose();
    targets.row(n) = y.transpose();
}

void ResidualDataset::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "# xi[0..8] y_dv y_dbeta y_dr\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < size(); ++i) {
        for (int d = 0; d < 9; ++d) out << inputs(i, d) << ' ';
        out << targets(i, 0) << ' ' << targets(i, 1) << ' ' << targets(i, 2) << '\n';
    }
}

ResidualDataset ResidualDataset::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::array<double, 12>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::array<double, 12> row;
        if (!(ss >> row[0])) continue;
        for (int d = 1; d < 12; ++d) {
            if (!(ss >> row[d])) {
                throw IoError("malformed dataset row at " + path.string() + ":" +
                              std::to_string(lineno));
            }
        }
        rows.push_back(row);
    }
    ResidualDataset ds;
    ds.inputs.resize(rows.size(), 9);
    ds.targets.resize(rows.size(), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int d = 0; d < 9; ++d) ds.inputs(i, d) = rows[i][d];
        for (int d = 0; d < 3; ++d) ds.targets(i, d) = rows[i][9 + d];
    }
    return ds;
}

} // namespace nptrack
