#pragma once

// Linear dynamical systems (Kalman filter models):
//
//   h_1 ~ N(pi1, V),  h_{t+1} = A h_t + rho_t,  v_t = C h_t + eps_t,
//   rho_t ~ N(0, Q),  eps_t ~ N(0, R).
//
// Time indices in comments are 1-based as in the model; arrays are 0-based.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oem/error.hpp"
#include "oem/expfam.hpp"
#include "oem/numeric.hpp"

namespace oem {

struct KalmanModel {
    Vector pi1;
    Matrix V;
    Matrix A;
    Matrix C;
    Matrix Q;
    Matrix R;

    Eigen::Index hidden_dim() const { return pi1.size(); }
    Eigen::Index obs_dim() const { return C.rows(); }
};

inline void validate(const KalmanModel& m) {
    const auto n = m.hidden_dim();
    const auto d = m.obs_dim();
    if (n < 1 || d < 1) throw InvalidModel("kalman: dimensions must be positive");
    if (m.V.rows() != n || m.V.cols() != n || m.A.rows() != n || m.A.cols() != n || m.C.cols() != n ||
        m.Q.rows() != n || m.Q.cols() != n || m.R.rows() != d || m.R.cols() != d)
        throw InvalidModel("kalman: parameter dimensions are inconsistent");
    if (!m.pi1.allFinite() || !m.A.allFinite() || !m.C.allFinite())
        throw InvalidModel("kalman: non-finite parameters");
    if (!is_spd(m.V)) throw InvalidModel("kalman: V must be symmetric positive definite");
    if (!is_spd(m.Q)) throw InvalidModel("kalman: Q must be symmetric positive definite");
    if (!is_spd(m.R)) throw InvalidModel("kalman: R must be symmetric positive definite");
}

// Posterior moments of one sequence.
//   h_hat[t]  = E[h_t | v]
//   P[t]      = E[h_t h_t^T | v]
//   P_pair[t] = E[h_t h_{t-1}^T | v] for t >= 1 (P_pair[0] is zero)
struct SmoothedMoments {
    std::vector<Vector> h_hat;
    std::vector<Matrix> P;
    std::vector<Matrix> P_pair;
    double log_likelihood = 0.0;
    double posterior_log_det = 0.0;  // log-determinant of the joint posterior covariance of h_1..h_T
};

// U_1 = V + pi1 pi1^T, U_{t+1} = Q + A U_t A^T.
inline std::vector<Matrix> prior_moments(const KalmanModel& m, std::size_t T) {
    std::vector<Matrix> U;
    U.reserve(T);
    if (T == 0) return U;
    U.push_back(symmetrize(m.V + m.pi1 * m.pi1.transpose()));
    for (std::size_t t = 1; t < T; ++t) U.push_back(symmetrize(m.Q + m.A * U.back() * m.A.transpose()));
    return U;
}

namespace detail {

inline void check_sequence(const KalmanModel& m, const Sequence& seq, const char* op) {
    if (seq.empty()) throw InvalidArgument(std::string(op) + ": empty sequence");
    for (std::size_t t = 0; t < seq.size(); ++t)
        if (seq[t].size() != m.obs_dim())
            throw InvalidArgument(std::string(op) + ": observation " + std::to_string(t) + " has dimension " +
                                  std::to_string(seq[t].size()) + ", expected " + std::to_string(m.obs_dim()));
}

struct FilterPass {
    std::vector<Vector> pred_mean, filt_mean;
    std::vector<Matrix> pred_cov, filt_cov;
    double log_likelihood = 0.0;
};

// Forward filter with Joseph-form covariance updates.
inline FilterPass filter(const KalmanModel& m, const Sequence& seq) {
    const auto n = m.hidden_dim();
    const auto d = m.obs_dim();
    const std::size_t T = seq.size();
    FilterPass f;
    f.pred_mean.reserve(T);
    f.pred_cov.reserve(T);
    f.filt_mean.reserve(T);
    f.filt_cov.reserve(T);
    Vector mean = m.pi1;
    Matrix cov = m.V;
    const Matrix eye = Matrix::Identity(n, n);
    for (std::size_t t = 0; t < T; ++t) {
        f.pred_mean.push_back(mean);
        f.pred_cov.push_back(cov);
        const Matrix S = symmetrize(m.C * cov * m.C.transpose() + m.R);
        Eigen::LLT<Matrix> llt(S);
        if (llt.info() != Eigen::Success || !S.allFinite())
            throw NumericalError("kalman filter: innovation covariance is not positive definite at time " +
                                 std::to_string(t));
        const Vector innovation = seq[t] - m.C * mean;
        const Matrix gain = llt.solve(m.C * cov).transpose();  // cov C^T S^-1
        const double log_det_s = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        f.log_likelihood -= 0.5 * (static_cast<double>(d) * kLog2Pi + log_det_s + innovation.dot(llt.solve(innovation)));
        mean = mean + gain * innovation;
        const Matrix ikc = eye - gain * m.C;
        cov = symmetrize(ikc * cov * ikc.transpose() + gain * m.R * gain.transpose());
        f.filt_mean.push_back(mean);
        f.filt_cov.push_back(cov);
        mean = m.A * mean;
        cov = symmetrize(m.A * cov * m.A.transpose() + m.Q);
    }
    if (!std::isfinite(f.log_likelihood)) throw NumericalError("kalman filter: non-finite log-likelihood");
    return f;
}

}  // namespace detail

// Forward filter followed by the Rauch-Tung-Striebel smoother.
inline SmoothedMoments smooth(const KalmanModel& m, const Sequence& seq) {
    detail::check_sequence(m, seq, "smooth");
    const std::size_t T = seq.size();
    const auto n = m.hidden_dim();
    const detail::FilterPass f = detail::filter(m, seq);

    std::vector<Vector> mean(T);
    std::vector<Matrix> cov(T);
    std::vector<Matrix> gain(T);
    mean[T - 1] = f.filt_mean[T - 1];
    cov[T - 1] = f.filt_cov[T - 1];
    SmoothedMoments out;
    out.posterior_log_det = log_det_spd(cov[T - 1]);
    for (std::size_t t = T - 1; t-- > 0;) {
        const Matrix& pred = f.pred_cov[t + 1];
        Eigen::LLT<Matrix> llt(pred);
        if (llt.info() != Eigen::Success)
            throw NumericalError("kalman smoother: predicted covariance is not positive definite at time " +
                                 std::to_string(t + 1));
        gain[t] = llt.solve(m.A * f.filt_cov[t]).transpose();  // F_t A^T P_{t+1|t}^-1
        mean[t] = f.filt_mean[t] + gain[t] * (mean[t + 1] - f.pred_mean[t + 1]);
        cov[t] = symmetrize(f.filt_cov[t] + gain[t] * (cov[t + 1] - pred) * gain[t].transpose());
        out.posterior_log_det += log_det_spd(symmetrize(f.filt_cov[t] - gain[t] * pred * gain[t].transpose()));
    }

    out.log_likelihood = f.log_likelihood;
    out.h_hat = mean;
    out.P.resize(T);
    out.P_pair.assign(T, Matrix::Zero(n, n));
    for (std::size_t t = 0; t < T; ++t) out.P[t] = symmetrize(cov[t] + mean[t] * mean[t].transpose());
    for (std::size_t t = 1; t < T; ++t)
        out.P_pair[t] = cov[t] * gain[t - 1].transpose() + mean[t] * mean[t - 1].transpose();
    return out;
}

inline double nll(const KalmanModel& m, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("kalman nll: no sequences");
    double total = 0.0;
    for (const auto& seq : sequences) {
        detail::check_sequence(m, seq, "kalman nll");
        total -= detail::filter(m, seq).log_likelihood;
    }
    return total / static_cast<double>(sequences.size());
}

// Relative entropy between the joint (h, v) distributions of a and b over
// sequences of length T, using the prior moments of a:
//   1/2 [ (pi1 - pi1~)^T V~^-1 (pi1 - pi1~) + D_ld(V, V~)
//       + tr(Q~^-1 (A - A~) (sum_{t<T} U_t) (A - A~)^T) + (T-1) D_ld(Q, Q~)
//       + tr(R~^-1 (C - C~) (sum_{t<=T} U_t) (C - C~)^T) + T D_ld(R, R~) ]
inline double kalman_divergence(const KalmanModel& a, const KalmanModel& b, std::size_t T) {
    if (T < 1) throw InvalidArgument("kalman_divergence: T must be at least 1");
    if (a.hidden_dim() != b.hidden_dim() || a.obs_dim() != b.obs_dim())
        throw InvalidArgument("kalman_divergence: models have different dimensions");
    validate(a);
    validate(b);
    const auto U = prior_moments(a, T);
    Matrix u_head = Matrix::Zero(a.hidden_dim(), a.hidden_dim());
    for (std::size_t t = 0; t + 1 < T; ++t) u_head += U[t];
    const Matrix u_all = u_head + U[T - 1];

    const Vector dpi = a.pi1 - b.pi1;
    const Eigen::LLT<Matrix> v_llt(symmetrize(b.V));
    const Eigen::LLT<Matrix> q_llt(symmetrize(b.Q));
    const Eigen::LLT<Matrix> r_llt(symmetrize(b.R));
    const Matrix dA = a.A - b.A;
    const Matrix dC = a.C - b.C;
    double value = dpi.dot(v_llt.solve(dpi)) + log_det_divergence(a.V, b.V);
    if (T > 1) {
        value += q_llt.solve(dA * u_head * dA.transpose()).trace();
        value += static_cast<double>(T - 1) * log_det_divergence(a.Q, b.Q);
    }
    value += r_llt.solve(dC * u_all * dC.transpose()).trace();
    value += static_cast<double>(T) * log_det_divergence(a.R, b.R);
    return 0.5 * std::max(0.0, value);
}

// Upper bound on the nll of `candidate` built from the posterior of `at`,
// including the posterior entropy so that em_upper_bound(m, m, V) = nll(m, V).
inline double em_upper_bound(const KalmanModel& at, const KalmanModel& candidate, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("kalman em_upper_bound: no sequences");
    validate(candidate);
    const auto n = static_cast<double>(at.hidden_dim());
    const auto d = static_cast<double>(at.obs_dim());
    const Eigen::LLT<Matrix> v_llt(candidate.V), q_llt(candidate.Q), r_llt(candidate.R);
    const double ld_v = log_det_spd(candidate.V), ld_q = log_det_spd(candidate.Q), ld_r = log_det_spd(candidate.R);
    const Matrix& A = candidate.A;
    const Matrix& C = candidate.C;
    double total = 0.0;
    for (const auto& seq : sequences) {
        const SmoothedMoments sm = smooth(at, seq);
        const std::size_t T = seq.size();
        const Vector& p = candidate.pi1;
        const Matrix e1 = sm.P[0] - sm.h_hat[0] * p.transpose() - p * sm.h_hat[0].transpose() + p * p.transpose();
        double value = 0.5 * (n * kLog2Pi + ld_v + v_llt.solve(e1).trace());
        for (std::size_t t = 1; t < T; ++t) {
            const Matrix et = sm.P[t] - A * sm.P_pair[t].transpose() - sm.P_pair[t] * A.transpose() +
                              A * sm.P[t - 1] * A.transpose();
            value += 0.5 * (n * kLog2Pi + ld_q + q_llt.solve(et).trace());
        }
        for (std::size_t t = 0; t < T; ++t) {
            const Vector& v = seq[t];
            const Vector ch = C * sm.h_hat[t];
            const Matrix et = v * v.transpose() - ch * v.transpose() - v * ch.transpose() + C * sm.P[t] * C.transpose();
            value += 0.5 * (d * kLog2Pi + ld_r + r_llt.solve(et).trace());
        }
        const double entropy = 0.5 * (n * static_cast<double>(T) * (1.0 + kLog2Pi) + sm.posterior_log_det);
        total += value - entropy;
    }
    return total / static_cast<double>(sequences.size());
}

inline double online_objective(const KalmanModel& at, const KalmanModel& candidate, std::span<const Sequence> sequences,
                               double eta) {
    return em_upper_bound(at, candidate, sequences) + kalman_divergence(at, candidate, sequences.front().size()) / eta;
}

// Which parameters an update may change. Masked-off parameters pass through.
struct KalmanUpdateMask {
    bool pi1 = true;
    bool V = true;
    bool A = true;
    bool C = true;
    bool Q = true;
    bool R = true;
};

// Smoothed statistics averaged over N sequences of common length T.
struct KalmanStats {
    std::size_t T = 0;
    std::vector<Vector> h_hat;    // (1/N) sum_n h_hat_{n,t}
    std::vector<Matrix> P;        // (1/N) sum_n P^n_t
    std::vector<Matrix> P_pair;   // (1/N) sum_n P^n_{t,t-1}
    std::vector<Matrix> vh;       // (1/N) sum_n v_{n,t} h_hat_{n,t}^T
    std::vector<Matrix> vv;       // (1/N) sum_n v_{n,t} v_{n,t}^T
    std::vector<Vector> h_first;  // h_hat_{n,1} per sequence (for V-hat)
    std::vector<Matrix> P_first;
};

inline KalmanStats batch_statistics(const KalmanModel& m, std::span<const Sequence> sequences) {
    if (sequences.empty()) throw InvalidArgument("kalman: empty batch of sequences");
    const std::size_t T = sequences.front().size();
    if (T < 2) throw InvalidArgument("kalman: sequences must have length at least 2");
    const auto n = m.hidden_dim();
    const auto d = m.obs_dim();
    KalmanStats st;
    st.T = T;
    st.h_hat.assign(T, Vector::Zero(n));
    st.P.assign(T, Matrix::Zero(n, n));
    st.P_pair.assign(T, Matrix::Zero(n, n));
    st.vh.assign(T, Matrix::Zero(d, n));
    st.vv.assign(T, Matrix::Zero(d, d));
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const Sequence& seq = sequences[i];
        if (seq.size() != T)
            throw InvalidArgument("kalman: sequence " + std::to_string(i) + " has length " + std::to_string(seq.size()) +
                                  ", expected " + std::to_string(T));
        const SmoothedMoments sm = smooth(m, seq);
        for (std::size_t t = 0; t < T; ++t) {
            st.h_hat[t] += sm.h_hat[t];
            st.P[t] += sm.P[t];
            st.P_pair[t] += sm.P_pair[t];
            st.vh[t] += seq[t] * sm.h_hat[t].transpose();
            st.vv[t] += seq[t] * seq[t].transpose();
        }
        st.h_first.push_back(sm.h_hat[0]);
        st.P_first.push_back(sm.P[0]);
    }
    const double inv_n = 1.0 / static_cast<double>(sequences.size());
    for (std::size_t t = 0; t < T; ++t) {
        st.h_hat[t] *= inv_n;
        st.P[t] *= inv_n;
        st.P_pair[t] *= inv_n;
        st.vh[t] *= inv_n;
        st.vv[t] *= inv_n;
    }
    return st;
}

namespace detail {

inline Matrix checked_covariance(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NumericalError(std::string("kalman update: ") + what + " is not finite");
    const Matrix out = floor_eigenvalues(m);
    if (!is_spd(out, 0.0)) throw NumericalError(std::string("kalman update: ") + what + " is not positive definite");
    return out;
}

// X S^-1 for SPD S, via Cholesky.
inline Matrix right_solve_spd(const Matrix& x, const Matrix& s, const char* what) {
    Eigen::LLT<Matrix> llt(symmetrize(s));
    if (llt.info() != Eigen::Success) throw NumericalError(std::string("kalman update: ") + what + " is singular");
    return llt.solve(x.transpose()).transpose();
}

}  // namespace detail

// Inertia-regularized EM step. Updates are computed in the order
// A, C -> Q, R -> pi1, V; later updates use the new earlier parameters.
inline KalmanModel online_em_step(const KalmanModel& m, std::span<const Sequence> sequences, double eta,
                                  const KalmanUpdateMask& mask = {}) {
    if (!(eta > 0.0)) throw InvalidArgument("kalman online_em_step: eta must be positive");
    validate(m);
    const KalmanStats st = batch_statistics(m, sequences);
    const std::size_t T = st.T;
    const double inertia = 1.0 / eta;
    const double inv_n = 1.0 / static_cast<double>(sequences.size());
    const auto U = prior_moments(m, T);
    const auto n = m.hidden_dim();
    const auto d = m.obs_dim();

    Matrix u_head = Matrix::Zero(n, n), p_head = Matrix::Zero(n, n), pair_sum = Matrix::Zero(n, n);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        u_head += U[t];
        p_head += st.P[t];
        pair_sum += st.P_pair[t + 1];
    }
    const Matrix u_all = u_head + U[T - 1];
    const Matrix p_all = p_head + st.P[T - 1];
    Matrix vh_sum = Matrix::Zero(d, n);
    for (std::size_t t = 0; t < T; ++t) vh_sum += st.vh[t];

    KalmanModel out = m;
    if (mask.A)
        out.A = detail::right_solve_spd(inertia * m.A * u_head + pair_sum, inertia * u_head + p_head, "S_{T-1}");
    if (mask.C) out.C = detail::right_solve_spd(inertia * m.C * u_all + vh_sum, inertia * u_all + p_all, "S_T");

    const Matrix& A = out.A;
    const Matrix& C = out.C;
    if (mask.Q) {
        Matrix q_hat = Matrix::Zero(n, n);
        for (std::size_t t = 1; t < T; ++t)
            q_hat += st.P[t] - A * st.P_pair[t].transpose() - st.P_pair[t] * A.transpose() + A * st.P[t - 1] * A.transpose();
        q_hat /= static_cast<double>(T - 1);
        const Matrix dA = m.A - A;
        const Matrix delta = dA * u_head * dA.transpose() / static_cast<double>(T - 1);
        out.Q = detail::checked_covariance((inertia * (m.Q + delta) + q_hat) / (inertia + 1.0), "Q");
    }
    if (mask.R) {
        Matrix r_hat = Matrix::Zero(d, d);
        for (std::size_t t = 0; t < T; ++t)
            r_hat += st.vv[t] - C * st.vh[t].transpose() - st.vh[t] * C.transpose() + C * st.P[t] * C.transpose();
        r_hat /= static_cast<double>(T);
        const Matrix dC = m.C - C;
        const Matrix delta = dC * u_all * dC.transpose() / static_cast<double>(T);
        out.R = detail::checked_covariance((inertia * (m.R + delta) + r_hat) / (inertia + 1.0), "R");
    }
    if (mask.pi1) out.pi1 = (inertia * m.pi1 + st.h_hat[0]) / (inertia + 1.0);
    if (mask.V) {
        const Vector& p = out.pi1;
        Matrix v_hat = Matrix::Zero(n, n);
        for (std::size_t i = 0; i < st.h_first.size(); ++i)
            v_hat += st.P_first[i] - st.h_first[i] * p.transpose() - p * st.h_first[i].transpose() + p * p.transpose();
        v_hat *= inv_n;
        const Vector dp = m.pi1 - p;
        out.V = detail::checked_covariance((inertia * (m.V + dp * dp.transpose()) + v_hat) / (inertia + 1.0), "V");
    }
    return out;
}

// Classical EM M-step for linear dynamical systems.
inline KalmanModel batch_em_step(const KalmanModel& m, std::span<const Sequence> sequences,
                                 const KalmanUpdateMask& mask = {}) {
    validate(m);
    const KalmanStats st = batch_statistics(m, sequences);
    const std::size_t T = st.T;
    const auto n = m.hidden_dim();
    const auto d = m.obs_dim();
    Matrix p_head = Matrix::Zero(n, n), p_tail = Matrix::Zero(n, n), pair_sum = Matrix::Zero(n, n);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        p_head += st.P[t];
        p_tail += st.P[t + 1];
        pair_sum += st.P_pair[t + 1];
    }
    const Matrix p_all = p_head + st.P[T - 1];
    Matrix vh_sum = Matrix::Zero(d, n), vv_sum = Matrix::Zero(d, d);
    for (std::size_t t = 0; t < T; ++t) {
        vh_sum += st.vh[t];
        vv_sum += st.vv[t];
    }
    KalmanModel out = m;
    if (mask.A) out.A = detail::right_solve_spd(pair_sum, p_head, "sum of P_t");
    if (mask.C) out.C = detail::right_solve_spd(vh_sum, p_all, "sum of P_t");
    if (mask.Q) {
        const Matrix q = mask.A ? Matrix(p_tail - out.A * pair_sum.transpose())
                                : Matrix(p_tail - out.A * pair_sum.transpose() - pair_sum * out.A.transpose() +
                                         out.A * p_head * out.A.transpose());
        out.Q = detail::checked_covariance(q / static_cast<double>(T - 1), "Q");
    }
    if (mask.R) {
        const Matrix r = mask.C ? Matrix(vv_sum - out.C * vh_sum.transpose())
                                : Matrix(vv_sum - out.C * vh_sum.transpose() - vh_sum * out.C.transpose() +
                                         out.C * p_all * out.C.transpose());
        out.R = detail::checked_covariance(r / static_cast<double>(T), "R");
    }
    if (mask.pi1) out.pi1 = st.h_hat[0];
    if (mask.V) {
        Matrix p1 = Matrix::Zero(n, n);
        for (const auto& p : st.P_first) p1 += p;
        p1 /= static_cast<double>(st.P_first.size());
        const Vector& pi = out.pi1;
        out.V = detail::checked_covariance(p1 - st.h_hat[0] * pi.transpose() - pi * st.h_hat[0].transpose() +
                                               pi * pi.transpose(),
                                           "V");
    }
    return out;
}

struct KalmanTrajectory {
    std::vector<Vector> states;
    Sequence observations;
};

namespace detail {

inline Matrix sampling_factor(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    return psd_sqrt(cov);
}

inline Vector standard_normal(Eigen::Index dim, Rng& rng) {
    std::normal_distribution<double> normal;
    Vector z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal(rng);
    return z;
}

}  // namespace detail

inline std::vector<KalmanTrajectory> sample_trajectories(const KalmanModel& m, std::size_t count, std::size_t T, Rng& rng) {
    if (T < 1) throw InvalidArgument("kalman sample_sequences: T must be at least 1");
    const Matrix lv = detail::sampling_factor(m.V);
    const Matrix lq = detail::sampling_factor(m.Q);
    const Matrix lr = detail::sampling_factor(m.R);
    std::vector<KalmanTrajectory> out(count);
    for (auto& traj : out) {
        Vector h = m.pi1 + lv * detail::standard_normal(m.hidden_dim(), rng);
        for (std::size_t t = 0; t < T; ++t) {
            if (t > 0) h = m.A * h + lq * detail::standard_normal(m.hidden_dim(), rng);
            traj.states.push_back(h);
            traj.observations.push_back(m.C * h + lr * detail::standard_normal(m.obs_dim(), rng));
        }
    }
    return out;
}

inline std::vector<Sequence> sample_sequences(const KalmanModel& m, std::size_t count, std::size_t T, Rng& rng) {
    std::vector<Sequence> out;
    out.reserve(count);
    for (auto& traj : sample_trajectories(m, count, T, rng)) out.push_back(std::move(traj.observations));
    return out;
}

}  // namespace oem
