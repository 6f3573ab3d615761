#include "vaedef/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vaedef::theory {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
Tensor cholesky(const Tensor& a) {
    const std::size_t d = a.dim(0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (std::abs(a.at2(i, j) - a.at2(j, i)) > 1e-10)
                throw std::runtime_error("cholesky: matrix not symmetric");
    Tensor l({d, d});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at2(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at2(i, k) * l.at2(j, k);
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
                l.at2(i, i) = std::sqrt(s);
            } else {
                l.at2(i, j) = s / l.at2(j, j);
            }
        }
    }
    return l;
}

// Solve L y = b (forward) then L^T x = y (backward).
Tensor chol_solve(const Tensor& l, const Tensor& b) {
    const std::size_t d = l.dim(0);
    Tensor y({d});
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l.at2(i, k) * y[k];
        y[i] = s / l.at2(i, i);
    }
    Tensor x({d});
    for (std::size_t i = d; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= l.at2(k, i) * x[k];
        x[i] = s / l.at2(i, i);
    }
    return x;
}

Tensor mat_vec(const Tensor& m, const Tensor& v) {
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    Tensor out({rows});
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += m.at2(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Tensor inverse_spd(const Tensor& a) {
    const std::size_t d = a.dim(0);
    Tensor l = cholesky(a);
    Tensor inv({d, d});
    Tensor e({d});
    for (std::size_t j = 0; j < d; ++j) {
        std::fill(e.vec().begin(), e.vec().end(), 0.0);
        e[j] = 1.0;
        Tensor col = chol_solve(l, e);
        for (std::size_t i = 0; i < d; ++i) inv.at2(i, j) = col[i];
    }
    return inv;
}

}  // namespace

FullGaussian::FullGaussian(Tensor mean_, Tensor cov_) {
    mean = std::move(mean_);
    cov = std::move(cov_);
    if (cov.rank() != 2 || cov.dim(0) != mean.size() || cov.dim(1) != mean.size())
        throw std::invalid_argument("FullGaussian: covariance shape mismatch");
    chol_ = cholesky(cov);
    log_det_ = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i)
        log_det_ += 2.0 * std::log(chol_.at2(i, i));
}

double FullGaussian::log_density(const Tensor& z) const {
    const std::size_t d = dim();
    Tensor diff({d});
    for (std::size_t i = 0; i < d; ++i) diff[i] = z[i] - mean[i];
    Tensor solved = chol_solve(chol_, diff);
    return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det_ + dot(diff, solved));
}

Tensor FullGaussian::sample(RngStream& rng) const {
    const std::size_t d = dim();
    Tensor u({d});
    for (auto& v : u.vec()) v = rng.normal();
    Tensor out({d});
    for (std::size_t i = 0; i < d; ++i) {
        double s = mean[i];
        for (std::size_t j = 0; j <= i; ++j) s += chol_.at2(i, j) * u[j];
        out[i] = s;
    }
    return out;
}

double FullGaussian::marginal_std(std::size_t i) const { return std::sqrt(cov.at2(i, i)); }

FullGaussian from_diag(const GaussianParams& p) {
    const std::size_t d = p.mean.size();
    Tensor cov({d, d});
    for (std::size_t i = 0; i < d; ++i) cov.at2(i, i) = std::exp(p.log_var[i]);
    return FullGaussian(p.mean, std::move(cov));
}

void LinearGaussianVae::validate() const {
    if (obs_var <= 0) throw std::invalid_argument("LinearGaussianVae: obs_var must be > 0");
    // smallest singular value of W via the smallest eigenvalue of W^T W
    // (power iteration on the inverse is overkill at this size; use the
    // Cholesky of W^T W + 0 and check the diagonal growth instead)
    const std::size_t lat = decoder_weight.dim(1);
    Tensor wtw({lat, lat});
    for (std::size_t i = 0; i < lat; ++i)
        for (std::size_t j = 0; j < lat; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < decoder_weight.dim(0); ++r)
                s += decoder_weight.at2(r, i) * decoder_weight.at2(r, j);
            wtw.at2(i, j) = s;
        }
    Tensor l = cholesky(wtw);  // throws if rank-deficient
    for (std::size_t i = 0; i < lat; ++i)
        if (l.at2(i, i) * l.at2(i, i) <= 1e-8)
            throw std::runtime_error("LinearGaussianVae: decoder matrix near rank-deficient");
}

FullGaussian exact_posterior(const LinearGaussianVae& lgv, const Tensor& x) {
    const std::size_t dd = lgv.decoder_weight.dim(0);
    const std::size_t lat = lgv.decoder_weight.dim(1);
    if (x.size() != dd) throw std::invalid_argument("exact_posterior: x dimension mismatch");
    Tensor prec({lat, lat});
    for (std::size_t i = 0; i < lat; ++i) {
        for (std::size_t j = 0; j < lat; ++j) {
            double s = (i == j) ? 1.0 : 0.0;
            for (std::size_t r = 0; r < dd; ++r)
                s += lgv.decoder_weight.at2(r, i) * lgv.decoder_weight.at2(r, j) / lgv.obs_var;
            prec.at2(i, j) = s;
        }
    }
    Tensor cov = inverse_spd(prec);
    Tensor rhs({lat});
    for (std::size_t i = 0; i < lat; ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < dd; ++r)
            s += lgv.decoder_weight.at2(r, i) * (x[r] - lgv.offset[r]) / lgv.obs_var;
        rhs[i] = s;
    }
    Tensor mu = mat_vec(cov, rhs);
    return FullGaussian(std::move(mu), std::move(cov));
}

double kl_full_gaussians(const FullGaussian& a, const FullGaussian& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("kl_full_gaussians: dim mismatch");
    const std::size_t d = a.dim();
    // tr(Sigma_b^-1 Sigma_a)
    double trace = 0.0;
    Tensor col({d});
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) col[i] = a.cov.at2(i, j);
        Tensor solved = chol_solve(b.chol(), col);
        trace += solved[j];
    }
    Tensor diff({d});
    for (std::size_t i = 0; i < d; ++i) diff[i] = b.mean[i] - a.mean[i];
    Tensor solved = chol_solve(b.chol(), diff);
    const double quad = dot(diff, solved);
    return 0.5 * (trace + quad - static_cast<double>(d) + b.log_det() - a.log_det());
}

namespace {

double tv_grid_1d(const FullGaussian& a, const FullGaussian& b) {
    const double lo = std::min(a.mean[0] - 8.0 * a.marginal_std(0),
                               b.mean[0] - 8.0 * b.marginal_std(0));
    const double hi = std::max(a.mean[0] + 8.0 * a.marginal_std(0),
                               b.mean[0] + 8.0 * b.marginal_std(0));
    auto integrate = [&](std::size_t n) {
        // composite Simpson
        const double h = (hi - lo) / static_cast<double>(n);
        Tensor z({1});
        auto f = [&](double t) {
            z[0] = t;
            return std::abs(a.density(z) - b.density(z));
        };
        double s = f(lo) + f(hi);
        for (std::size_t i = 1; i < n; ++i) s += f(lo + h * i) * (i % 2 ? 4.0 : 2.0);
        return 0.5 * s * h / 3.0;
    };
    double prev = integrate(512);
    for (std::size_t n = 1024; n <= 65536; n *= 2) {
        const double cur = integrate(n);
        if (std::abs(cur - prev) < 1e-8) return cur;
        prev = cur;
    }
    return prev;
}

double tv_grid_2d(const FullGaussian& a, const FullGaussian& b) {
    double lo[2], hi[2];
    for (std::size_t i = 0; i < 2; ++i) {
        lo[i] = std::min(a.mean[i] - 8.0 * a.marginal_std(i),
                         b.mean[i] - 8.0 * b.marginal_std(i));
        hi[i] = std::max(a.mean[i] + 8.0 * a.marginal_std(i),
                         b.mean[i] + 8.0 * b.marginal_std(i));
    }
    auto integrate = [&](std::size_t n) {
        const double hx = (hi[0] - lo[0]) / n, hy = (hi[1] - lo[1]) / n;
        Tensor z({2});
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            z[0] = lo[0] + hx * (i + 0.5);
            for (std::size_t j = 0; j < n; ++j) {
                z[1] = lo[1] + hy * (j + 0.5);
                s += std::abs(a.density(z) - b.density(z));
            }
        }
        return 0.5 * s * hx * hy;
    };
    double prev = integrate(64);
    for (std::size_t n = 128; n <= 512; n *= 2) {
        const double cur = integrate(n);
        if (std::abs(cur - prev) < 1e-5) return cur;
        prev = cur;
    }
    return prev;
}

}  // namespace

TvEstimate tv_gaussians(const FullGaussian& a, const FullGaussian& b, TvMethod method,
                        std::uint64_t seed, std::size_t mc_samples) {
    if (a.dim() != b.dim()) throw std::invalid_argument("tv_gaussians: dim mismatch");
    TvEstimate est;
    if (method == TvMethod::kGrid) {
        if (a.dim() == 1)
            est.value = tv_grid_1d(a, b);
        else if (a.dim() == 2)
            est.value = tv_grid_2d(a, b);
        else
            throw std::invalid_argument("tv_gaussians: grid method needs dim <= 2");
        return est;
    }
    // Monte Carlo under the equal-weight mixture.
    RngStream rng = RngStream::derived(seed, "tv-mc", 0);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < mc_samples; ++i) {
        const bool from_a = rng.uniform() < 0.5;
        Tensor z = from_a ? a.sample(rng) : b.sample(rng);
        const double da = a.density(z);
        const double db = b.density(z);
        const double mix = 0.5 * (da + db);
        const double v = mix > 0 ? 0.5 * std::abs(da - db) / mix : 0.0;
        sum += v;
        sum_sq += v * v;
    }
    const double n = static_cast<double>(mc_samples);
    est.value = sum / n;
    est.std_error = std::sqrt(std::max(0.0, sum_sq / n - est.value * est.value) / n);
    return est;
}

Lemma1Result lemma1_scaling_check(const LinearGaussianVae& lgv, const Tensor& x,
                                  const Tensor& direction, const std::vector<double>& radii) {
    double dir_norm = 0.0;
    for (double v : direction.vec()) dir_norm += v * v;
    dir_norm = std::sqrt(dir_norm);
    Lemma1Result res;
    if (dir_norm < 1e-12) {
        res.degenerate = true;
        return res;
    }
    const FullGaussian p_ref = exact_posterior(lgv, x);
    for (double r : radii) {
        if (r <= 0) throw std::invalid_argument("lemma1_scaling_check: radii must be > 0");
        Tensor xa(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
            xa[i] = x[i] + r * direction[i] / dir_norm;
        const double kl = kl_full_gaussians(p_ref, exact_posterior(lgv, xa));
        if (kl < 1e-300) {
            res.excluded_radii.push_back(r);
            continue;
        }
        res.radii.push_back(r);
        res.kls.push_back(kl);
    }
    if (res.radii.size() < 2) {
        res.degenerate = true;
        return res;
    }
    // least squares on (log r, log KL)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(res.radii.size());
    for (std::size_t i = 0; i < res.radii.size(); ++i) {
        const double lx = std::log(res.radii[i]);
        const double ly = std::log(res.kls[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return res;
}

PinskerReport pinsker_check(const std::vector<std::pair<FullGaussian, FullGaussian>>& pairs) {
    PinskerReport rep;
    rep.min_slack = 1e300;
    rep.max_slack = -1e300;
    for (const auto& [a, b] : pairs) {
        const double tv = tv_gaussians(a, b, TvMethod::kGrid).value;
        const double bound = std::sqrt(0.5 * kl_full_gaussians(a, b));
        const double slack = bound - tv;
        rep.min_slack = std::min(rep.min_slack, slack);
        rep.max_slack = std::max(rep.max_slack, slack);
        if (slack < -1e-9) ++rep.violations;
        ++rep.pairs_checked;
    }
    if (rep.pairs_checked == 0) {
        rep.min_slack = 0.0;
        rep.max_slack = 0.0;
    }
    return rep;
}

GaussianParams DiagGaussianEncoder::at(const Tensor& x) const {
    GaussianParams p;
    p.mean = mat_vec(weight, x);
    for (std::size_t i = 0; i < p.mean.size(); ++i) p.mean[i] += offset[i];
    p.log_var = log_var;
    return p;
}

double Theorem1Result::combined_se() const {
    return std::sqrt(lhs_se * lhs_se + rhs_chain_se * rhs_chain_se);
}

bool Theorem1Result::holds(double se_multiplier) const {
    return lhs <= rhs_sum() + se_multiplier * combined_se();
}

namespace {

// Histogram TV of samples against a closed-form density, with an explicit
// out-of-window cell. Window: density mean +- 8 std per axis.
struct HistTv {
    double value;
    double std_error;
};

HistTv histogram_tv(const std::vector<Tensor>& samples, const FullGaussian& ref) {
    const std::size_t d = ref.dim();
    const std::size_t bins_per_axis = (d == 1) ? 512 : 64;
    double lo[2] = {0, 0}, width[2] = {0, 0};
    for (std::size_t i = 0; i < d; ++i) {
        const double s = ref.marginal_std(i);
        lo[i] = ref.mean[i] - 8.0 * s;
        width[i] = 16.0 * s / static_cast<double>(bins_per_axis);
    }
    const std::size_t cells = (d == 1) ? bins_per_axis : bins_per_axis * bins_per_axis;
    std::vector<double> counts(cells + 1, 0.0);  // last cell: outside window
    for (const auto& z : samples) {
        bool inside = true;
        std::size_t idx = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double t = (z[i] - lo[i]) / width[i];
            if (t < 0 || t >= static_cast<double>(bins_per_axis)) {
                inside = false;
                break;
            }
            idx = idx * bins_per_axis + static_cast<std::size_t>(t);
        }
        counts[inside ? idx : cells] += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    // reference probability per cell (midpoint rule), remainder outside
    std::vector<double> q(cells + 1, 0.0);
    Tensor z({d});
    double q_in = 0.0;
    const double area = (d == 1) ? width[0] : width[0] * width[1];
    for (std::size_t c = 0; c < cells; ++c) {
        if (d == 1) {
            z[0] = lo[0] + width[0] * (c + 0.5);
        } else {
            z[0] = lo[0] + width[0] * (c / bins_per_axis + 0.5);
            z[1] = lo[1] + width[1] * (c % bins_per_axis + 0.5);
        }
        q[c] = ref.density(z) * area;
        q_in += q[c];
    }
    q[cells] = std::max(0.0, 1.0 - q_in);

    HistTv out{0.0, 0.0};
    double var = 0.0;
    for (std::size_t c = 0; c <= cells; ++c) {
        const double p_hat = counts[c] / n;
        out.value += std::abs(p_hat - q[c]);
        var += p_hat * (1.0 - p_hat) / n;
    }
    out.value *= 0.5;
    out.std_error = 0.5 * std::sqrt(var);
    return out;
}

}  // namespace

Theorem1Result theorem1_decomposition(const LinearGaussianVae& lgv,
                                      const DiagGaussianEncoder& enc, const Tensor& x_r,
                                      const Tensor& x_a, const HmcConfig& hmc,
                                      std::size_t budget, std::uint64_t seed) {
    if (budget < 1000)
        throw std::invalid_argument("theorem1_decomposition: sample budget must be >= 1000");
    const std::size_t lat = lgv.decoder_weight.dim(1);
    if (lat > 2)
        throw std::invalid_argument("theorem1_decomposition: latent dim must be 1 or 2");
    lgv.validate();

    const FullGaussian p_r = exact_posterior(lgv, x_r);
    const FullGaussian p_a = exact_posterior(lgv, x_a);
    const FullGaussian q_r = from_diag(enc.at(x_r));
    const GaussianParams q_a_diag = enc.at(x_a);

    // quadratic potential of the exact posterior for x_a:
    //   U(z) = 1/2 (z - mu)^T Prec (z - mu) + const
    Tensor prec = inverse_spd(p_a.cov);
    const Tensor mu_a = p_a.mean;
    Potential pot;
    pot.eval = [prec, mu_a](const Tensor& z, Tensor* grad_out) {
        const std::size_t d = mu_a.size();
        Tensor diff({d});
        for (std::size_t i = 0; i < d; ++i) diff[i] = z[i] - mu_a[i];
        Tensor pd = mat_vec(prec, diff);
        if (grad_out)
            for (std::size_t i = 0; i < d; ++i) (*grad_out)[i] = pd[i];
        return 0.5 * dot(diff, pd);
    };

    std::vector<Tensor> samples;
    samples.reserve(budget);
    HmcConfig chain = hmc;
    for (std::size_t i = 0; i < budget; ++i) {
        RngStream rng = RngStream::derived(seed, "theorem1-chain", i);
        Tensor noise({lat});
        for (auto& v : noise.vec()) v = rng.normal();
        Tensor z0 = reparameterize(q_a_diag, noise);
        if (chain.steps == 0) {
            samples.push_back(std::move(z0));
        } else {
            samples.push_back(run_hmc(pot, std::move(z0), chain, rng).first);
        }
    }

    Theorem1Result res;
    const HistTv lhs = histogram_tv(samples, q_r);
    const HistTv rhs1 = histogram_tv(samples, p_a);
    res.lhs = lhs.value;
    res.lhs_se = lhs.std_error;
    res.rhs_chain = rhs1.value;
    res.rhs_chain_se = rhs1.std_error;
    res.rhs_posterior_shift = std::sqrt(0.5 * kl_full_gaussians(p_r, p_a));
    res.rhs_approx_gap = std::sqrt(0.5 * kl_full_gaussians(q_r, p_r));
    return res;
}

}  // namespace vaedef::theory
