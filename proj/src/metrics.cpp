#include "vaedef/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vaedef/rng.hpp"

namespace vaedef {

namespace {

std::size_t shrunk_window(std::size_t requested, std::size_t side) {
    std::size_t w = std::min(requested, side);
    if (w % 2 == 0) --w;
    return w;
}

std::vector<double> gaussian_window(std::size_t w, double sigma) {
    std::vector<double> g(w);
    const double c = 0.5 * (w - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
        g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

struct SsimTerms {
    double luminance = 0.0;          // mean luminance term
    double contrast_structure = 0.0; // mean cs term
    double full = 0.0;               // mean full SSIM
};

SsimTerms ssim_terms(const Tensor& x, const Tensor& y, std::size_t side,
                     std::size_t window, SsimConstants k) {
    const std::size_t w = shrunk_window(window, side);
    if (w < 3)
        throw std::invalid_argument("ssim: image side " + std::to_string(side) +
                                 " too small for a window");
    const double sigma = 1.5 * static_cast<double>(w) / 11.0;
    const std::vector<double> g = gaussian_window(w, sigma);
    const std::size_t out = side - w + 1;

    SsimTerms t;
    for (std::size_t r0 = 0; r0 < out; ++r0) {
        for (std::size_t c0 = 0; c0 < out; ++c0) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (std::size_t i = 0; i < w; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    const double wij = g[i] * g[j];
                    const double xv = x[(r0 + i) * side + (c0 + j)];
                    const double yv = y[(r0 + i) * side + (c0 + j)];
                    mx += wij * xv;
                    my += wij * yv;
                    mxx += wij * xv * xv;
                    myy += wij * yv * yv;
                    mxy += wij * xv * yv;
                }
            }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cxy = mxy - mx * my;
            const double lum = (2.0 * mx * my + k.c1) / (mx * mx + my * my + k.c1);
            const double cs = (2.0 * cxy + k.c2) / (vx + vy + k.c2);
            t.luminance += lum;
            t.contrast_structure += cs;
            t.full += lum * cs;
        }
    }
    const double n = static_cast<double>(out * out);
    t.luminance /= n;
    t.contrast_structure /= n;
    t.full /= n;
    return t;
}

Tensor downsample2(const Tensor& img, std::size_t side, std::size_t* new_side) {
    const std::size_t half = side / 2;
    Tensor out({half * half});
    for (std::size_t r = 0; r < half; ++r)
        for (std::size_t c = 0; c < half; ++c)
            out[r * half + c] = 0.25 * (img[(2 * r) * side + 2 * c] +
                                        img[(2 * r) * side + 2 * c + 1] +
                                        img[(2 * r + 1) * side + 2 * c] +
                                        img[(2 * r + 1) * side + 2 * c + 1]);
    *new_side = half;
    return out;
}

constexpr double kMsssimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

}  // namespace

double ssim(const Tensor& x, const Tensor& y, std::size_t image_side,
            std::size_t window_size, SsimConstants constants) {
    if (!x.same_shape(y)) throw std::invalid_argument("ssim: shape mismatch");
    if (x.size() != image_side * image_side)
        throw std::invalid_argument("ssim: not a square image");
    return ssim_terms(x, y, image_side, window_size, constants).full;
}

double msssim(const Tensor& x, const Tensor& y, std::size_t image_side,
              std::size_t levels) {
    if (!x.same_shape(y)) throw std::invalid_argument("msssim: shape mismatch");
    if (levels < 1) throw std::invalid_argument("msssim: levels must be >= 1");

    // largest level count whose coarsest scale still fits a 3-wide window
    std::size_t feasible = 0;
    for (std::size_t s = image_side; s >= 3 && feasible < levels; s /= 2) ++feasible;
    if (feasible == 0) throw std::runtime_error("msssim: image too small");
    const std::size_t used = feasible;

    double wsum = 0.0;
    for (std::size_t l = 0; l < used; ++l)
        wsum += kMsssimWeights[std::min<std::size_t>(l, 4)];

    Tensor cur_x = x, cur_y = y;
    std::size_t side = image_side;
    double result = 1.0;
    for (std::size_t l = 0; l < used; ++l) {
        SsimTerms t = ssim_terms(cur_x, cur_y, side, 11, {});
        const double weight = kMsssimWeights[std::min<std::size_t>(l, 4)] / wsum;
        const double cs = std::max(t.contrast_structure, 0.0);
        result *= std::pow(cs, weight);
        if (l + 1 == used) {
            const double lum = std::max(t.luminance, 0.0);
            result *= std::pow(lum, weight);
        } else {
            std::size_t new_side;
            cur_x = downsample2(cur_x, side, &new_side);
            cur_y = downsample2(cur_y, side, &new_side);
            side = new_side;
        }
    }
    return result;
}

double mse(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("mse: shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        total += d * d;
    }
    if (x.rank() == 2 && x.dim(0) > 1) return total / static_cast<double>(x.dim(0));
    return total;
}

// ----------------------------------------------------------------------
// Linear classifier

std::vector<double> LinearClassifier::logits(const Tensor& features) const {
    const std::size_t c = classes();
    const std::size_t d = weight.dim(1);
    if (features.size() != d)
        throw std::invalid_argument("classifier: feature dimension mismatch");
    std::vector<double> out(c);
    for (std::size_t i = 0; i < c; ++i) {
        double s = bias[i];
        for (std::size_t j = 0; j < d; ++j) s += weight.at2(i, j) * features[j];
        out[i] = s;
    }
    return out;
}

int LinearClassifier::predict(const Tensor& features) const {
    auto l = logits(features);
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

LinearClassifier fit_linear_classifier(const Tensor& features, const std::vector<int>& labels,
                                       const ClassifierConfig& config) {
    if (features.rank() != 2 || features.dim(0) != labels.size())
        throw std::invalid_argument("fit_linear_classifier: feature/label mismatch");
    const std::size_t n = labels.size();
    const std::size_t d = features.dim(1);
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    const std::size_t c = static_cast<std::size_t>(max_label) + 1;
    {
        std::vector<bool> present(c, false);
        for (int l : labels) present[static_cast<std::size_t>(l)] = true;
        std::size_t distinct = 0;
        for (bool p : present) distinct += p;
        if (distinct < 2)
            throw std::invalid_argument("fit_linear_classifier: need >= 2 classes present");
    }

    LinearClassifier clf;
    clf.weight = Tensor({c, d});
    clf.bias = Tensor({c});

    std::vector<double> logits(c), probs(c);
    Tensor gw({c, d});
    Tensor gb({c});
    double prev_loss = 1e300;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::fill(gw.vec().begin(), gw.vec().end(), 0.0);
        std::fill(gb.vec().begin(), gb.vec().end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* f = features.data() + i * d;
            double m = -1e300;
            for (std::size_t k = 0; k < c; ++k) {
                double s = clf.bias[k];
                for (std::size_t j = 0; j < d; ++j) s += clf.weight.at2(k, j) * f[j];
                logits[k] = s;
                m = std::max(m, s);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < c; ++k) z += std::exp(logits[k] - m);
            const double lse = m + std::log(z);
            loss -= logits[static_cast<std::size_t>(labels[i])] - lse;
            for (std::size_t k = 0; k < c; ++k) {
                probs[k] = std::exp(logits[k] - lse);
                const double delta = probs[k] - (k == static_cast<std::size_t>(labels[i]) ? 1.0 : 0.0);
                gb[k] += delta;
                for (std::size_t j = 0; j < d; ++j) gw.at2(k, j) += delta * f[j];
            }
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t k = 0; k < c; ++k) {
            clf.bias[k] -= config.learning_rate * gb[k] * inv_n;
            for (std::size_t j = 0; j < d; ++j) {
                const double g = gw.at2(k, j) * inv_n +
                                 config.weight_decay * clf.weight.at2(k, j);
                clf.weight.at2(k, j) -= config.learning_rate * g;
                loss += 0.5 * config.weight_decay * n *
                        clf.weight.at2(k, j) * clf.weight.at2(k, j);
            }
        }
        loss *= inv_n;
        if (std::abs(prev_loss - loss) < config.tolerance) break;
        prev_loss = loss;
    }
    return clf;
}

void save_classifier(const LinearClassifier& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write classifier " + path);
    out.write("LCL1", 4);
    const std::uint32_t rows = static_cast<std::uint32_t>(c.weight.dim(0));
    const std::uint32_t cols = static_cast<std::uint32_t>(c.weight.dim(1));
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    for (double v : c.weight.vec()) out.write(reinterpret_cast<const char*>(&v), 8);
    for (double v : c.bias.vec()) out.write(reinterpret_cast<const char*>(&v), 8);
}

LinearClassifier load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open classifier " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LCL1", 4) != 0)
        throw std::runtime_error("bad classifier magic in " + path);
    std::uint32_t rows, cols;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw std::runtime_error("truncated classifier file");
    LinearClassifier c;
    c.weight = Tensor({rows, cols});
    c.bias = Tensor({rows});
    for (auto& v : c.weight.vec()) in.read(reinterpret_cast<char*>(&v), 8);
    for (auto& v : c.bias.vec()) in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw std::runtime_error("truncated classifier file");
    return c;
}

// ----------------------------------------------------------------------
// Robustness evaluation

namespace {

Tensor adv_latent(const VaeModel& model, const Tensor& x_adv,
                  const std::optional<HmcConfig>& defence, std::uint64_t seed,
                  std::size_t index) {
    // T = 0 is "defence disabled": fall back to the encoder mean so the
    // report column matches the no-defence column exactly.
    if (defence && defence->steps > 0) {
        RngStream rng = RngStream::derived(seed, "defend", index);
        return defend(model, x_adv, *defence, rng).first;
    }
    return encode(model, x_adv).mean;
}

}  // namespace

double adversarial_accuracy(const VaeModel& model, const LinearClassifier& classifier,
                            const std::vector<std::pair<Tensor, Tensor>>& pairs,
                            const std::optional<HmcConfig>& defence, std::uint64_t seed) {
    if (pairs.empty())
        throw std::invalid_argument("adversarial_accuracy: empty pair list");
    std::size_t matches = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const int pred_ref = classifier.predict(encode(model, pairs[i].first).mean);
        const int pred_adv =
            classifier.predict(adv_latent(model, pairs[i].second, defence, seed, i));
        if (pred_ref == pred_adv) ++matches;
    }
    return static_cast<double>(matches) / static_cast<double>(pairs.size());
}

RobustnessReport robustness_report(const VaeModel& model, const LinearClassifier& classifier,
                                   const Dataset& references, const AttackArchive& archive,
                                   const std::optional<HmcConfig>& defence,
                                   std::uint64_t seed) {
    if (archive.best_per_reference.empty())
        throw std::invalid_argument("robustness_report: archive has no best-per-reference index");
    RobustnessReport rep;
    rep.defended = defence.has_value();
    rep.hmc_steps = defence ? defence->steps : 0;
    const std::size_t side = references.image_side;

    double acc = 0.0;
    for (std::size_t ri = 0; ri < archive.best_per_reference.size(); ++ri) {
        const auto& rec = archive.records.at(archive.best_per_reference[ri]);
        const Tensor x_ref = references.image(rec.reference_index);
        Tensor x_adv(x_ref.shape());
        for (std::size_t i = 0; i < x_ref.size(); ++i)
            x_adv[i] = std::clamp(x_ref[i] + rec.epsilon[i], 0.0, 1.0);

        const Tensor mu_ref = encode(model, x_ref).mean;
        const Tensor z_adv = adv_latent(model, x_adv, defence, seed, ri);
        const Tensor recon_ref = decode(model, mu_ref);
        const Tensor recon_adv = decode(model, z_adv);

        PairMetrics pm;
        pm.reference_index = rec.reference_index;
        pm.msssim_recon = msssim(recon_ref, recon_adv, side);
        pm.msssim_input = msssim(x_ref, x_adv, side);
        pm.mse_recon = mse(recon_ref, recon_adv);
        pm.class_match = classifier.predict(mu_ref) == classifier.predict(z_adv);
        acc += pm.class_match ? 1.0 : 0.0;
        rep.pairs.push_back(pm);
    }

    const double n = static_cast<double>(rep.pairs.size());
    for (const auto& p : rep.pairs) {
        rep.msssim_mean += p.msssim_recon;
        rep.mse_mean += p.mse_recon;
    }
    rep.msssim_mean /= n;
    rep.mse_mean /= n;
    double var = 0.0;
    for (const auto& p : rep.pairs) {
        const double d = p.msssim_recon - rep.msssim_mean;
        var += d * d;
    }
    rep.msssim_std = std::sqrt(var / n);
    rep.adversarial_accuracy = acc / n;
    return rep;
}

}  // namespace vaedef
