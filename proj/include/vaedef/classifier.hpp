#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaedef/tensor.hpp"

namespace vaedef {

// Multinomial logistic regression on latent features.
struct LinearClassifier {
    Tensor weight;  // (classes, feature_dim)
    Tensor bias;    // (classes)

    std::size_t classes() const { return weight.dim(0); }
    std::vector<double> logits(const Tensor& features) const;
    int predict(const Tensor& features) const;
};

struct ClassifierConfig {
    std::size_t iterations = 500;
    double learning_rate = 0.5;
    double tolerance = 1e-7;
    // L2 penalty on the weights (not the bias); keeps near-constant latent
    // dimensions from picking up arbitrary weights that amplify sampling noise.
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;
};

LinearClassifier fit_linear_classifier(const Tensor& features /* (N, d) */,
                                       const std::vector<int>& labels,
                                       const ClassifierConfig& config);

void save_classifier(const LinearClassifier& c, const std::string& path);
LinearClassifier load_classifier(const std::string& path);

}  // namespace vaedef
