#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "nptrack/dynamics.hpp"
#include "nptrack/errors.hpp"

namespace nptrack {

// ARD squared-exponential kernel hyperparameters. Fixed during online
// recursive updates; only the posterior (m_u, S_u) adapts.
struct KernelHyper {
    GPInput lengthscale = GPInput::Ones();
    double sigma_f2 = 1.0;    // signal variance
    double sigma_eps2 = 0.01; // observation noise variance (batch fit only)

    bool operator==(const KernelHyper& o) const {
        return lengthscale == o.lengthscale && sigma_f2 == o.sigma_f2 && sigma_eps2 == o.sigma_eps2;
    }
};

double kernel(const GPInput& a, const GPInput& b, const KernelHyper& hyper);

// Inducing inputs, one 9-dim row per point (row-major for the hot loops).
using InducingMatrix = Eigen::Matrix<double, Eigen::Dynamic, 9, Eigen::RowMajor>;

// One single-output variational sparse GP with a fixed inducing set,
// closed-form batch fit and recursive least-squares online updates.
class SparseGPHead {
public:
    SparseGPHead() = default;

    // Prior head: m_u = 0, S_u = K_M.
    SparseGPHead(Eigen::MatrixXd inducing, const KernelHyper& hyper, double forgetting);

    // Variational posterior from a batch:
    //   S_u = K_M (K_M + se^-2 K_MN K_NM)^-1 K_M,  m_u = se^-2 S_u K_M^-1 K_MN Y.
    // N = 0 degenerates to the prior.
    static SparseGPHead batch_fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& Y,
                                  Eigen::MatrixXd inducing, const KernelHyper& hyper,
                                  double forgetting);

    struct Prediction {
        double mean = 0.0;
        double variance = 0.0;
    };
    Prediction predict(const GPInput& z) const;
    double predict_mean(const GPInput& z) const;

    // Phi(z) = K_zM K_M^-1; predict(z).mean == feature_row(z) . m_u.
    Eigen::RowVectorXd feature_row(const GPInput& z) const;

    // RLS step with forgetting factor lambda:
    //   r = y - Phi m,  G = lambda + Phi S Phi^T,  L = S Phi^T / G,
    //   m += L r,  S = (S - L G L^T) / lambda  (then re-symmetrized).
    // Throws NonPositiveGain on numerical breakdown (caller resets to prior).
    void recursive_update(const GPInput& z, double y);

    int size() const { return static_cast<int>(inducing_.rows()); }
    const InducingMatrix& inducing() const { return inducing_; }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& covariance() const { return cov_; }
    const Eigen::MatrixXd& kernel_matrix() const { return km_; }
    const Eigen::MatrixXd& kernel_inverse() const { return km_inv_; }
    const Eigen::VectorXd& alpha() const { return alpha_; }
    const KernelHyper& hyper() const { return hyper_; }
    double forgetting() const { return lambda_; }

    void save(std::ostream& out) const;
    static SparseGPHead load(std::istream& in);

private:
    void kernel_row(const GPInput& z, double* out) const;
    void rebuild_kernel_cache();
    void refresh_alpha();

    InducingMatrix inducing_;
    KernelHyper hyper_;
    double lambda_ = 1.0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd km_;      // jittered K_M
    Eigen::MatrixXd km_inv_;
    Eigen::VectorXd alpha_;   // K_M^-1 m_u, cached for fast means
    GPInput inv_ls2_ = GPInput::Ones();
    std::uint32_t updates_since_eig_check_ = 0;
};

// Residual heads for (dv, dbeta, dr). All heads share the inducing set and
// the 9-dim input; hyperparameters may differ per head.
class ResidualModel {
public:
    ResidualModel() = default;
    ResidualModel(SparseGPHead dv, SparseGPHead dbeta, SparseGPHead dr);

    static ResidualModel prior(const Eigen::MatrixXd& inducing,
                               const std::array<KernelHyper, 3>& hyper, double forgetting);

    Eigen::Vector3d predict_mean(const GPInput& z) const;
    std::array<SparseGPHead::Prediction, 3> predict(const GPInput& z) const;
    void update(const GPInput& z, const Eigen::Vector3d& y);

    const SparseGPHead& head(int i) const { return heads_[i]; }
    SparseGPHead& head(int i) { return heads_[i]; }
    bool empty() const { return heads_[0].size() == 0; }

    void save(const std::filesystem::path& path) const;
    static ResidualModel load(const std::filesystem::path& path);

private:
    std::array<SparseGPHead, 3> heads_;
    bool shared_kernel_ = false;  // identical hyper: one kernel row serves all heads
};

// Per-component gate on residual targets; a sample exceeding any component
// bound is rejected rather than fed to the recursion.
struct OutlierGate {
    Eigen::Vector3d max_abs{0.5, 0.2, 0.5};  // dv [m/s], dbeta [rad], dr [rad/s]
};

// Measured-minus-nominal target y = H^T (x_meas - ode_step(x, u)) on
// (v, beta, r). Returns nullopt and bumps *rejected when gated.
std::optional<Eigen::Vector3d> residual_target(const VehicleState& x, const ControlInput& u,
                                               const VehicleState& x_next_measured,
                                               const VehicleParams& p, double dt,
                                               const OutlierGate& gate = {},
                                               std::uint64_t* rejected = nullptr);

// k-means (k-means++ seeding, Lloyd iterations) centroids used as inducing
// inputs. Deterministic in (data, m, seed). m is clamped to the row count.
Eigen::MatrixXd kmeans_inducing(const Eigen::MatrixXd& data, int m, std::uint64_t seed,
                                int iterations = 25);

// Coarse log-grid search over (shared lengthscale scale, sigma_f2,
// sigma_eps2) maximizing the exact-GP log marginal likelihood on at most
// max_points rows. Stands in for full ELBO hyperparameter training.
struct HyperGrid {
    std::vector<double> lengthscale_scales{0.5, 1.0, 2.0, 4.0};
    std::vector<double> signal_variances{0.01, 0.1, 1.0};
    std::vector<double> noise_variances{1e-4, 1e-3, 1e-2};
};
KernelHyper grid_search_hyper(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                              const KernelHyper& base, const HyperGrid& grid,
                              int max_points = 500);

// Exact GP log marginal likelihood (the grid-search objective).
double gp_log_marginal(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                       const KernelHyper& hyper);

// Offline dataset: rows of 9 input values + 3 targets, '#' comments.
struct ResidualDataset {
    Eigen::Matrix<double, Eigen::Dynamic, 9> inputs;
    Eigen::Matrix<double, Eigen::Dynamic, 3> targets;

    Eigen::Index size() const { return inputs.rows(); }
    void append(const GPInput& xi, const Eigen::Vector3d& y);
    void save(const std::filesystem::path& path) const;
    static ResidualDataset load(const std::filesystem::path& path);
};

} // namespace nptrack
