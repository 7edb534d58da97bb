#pragma once

#include <vector>

#include "gbs/blend.hpp"
#include "gbs/net.hpp"

// Training objectives of the separation model.
namespace gbs::losses {

using ad::Var;

struct LossWeights {
  double gamma_adv = 1.0;
  double gamma_neg = 1.0;
  double gamma_i2t = 0.1;
  double temperature = 10.0;
};

// Mean over all pixels of the squared difference.
double mse(const Grid& x, const Grid& y);

template <typename T>
Var<T> mse(const Var<T>& heatmap, const Grid& target);

// Alpha map reduced to the model's heatmap resolution by area averaging.
Grid native_alpha(const Grid& alpha, int heatmap_height, int heatmap_width);

// Output-level forms; heatmaps are [1, H, W] at native resolution.
// L_sep = MSE(h_a, alpha) + MSE(h_b, 1 - alpha)
template <typename T>
Var<T> separation_loss(const Var<T>& heatmap_a, const Var<T>& heatmap_b, const Grid& alpha_native);
// L_adv = MSE(h_unconditioned, 0.5)
template <typename T>
Var<T> adversarial_loss(const Var<T>& heatmap_unconditioned);
// L_neg = MSE(h_negative, 0)
template <typename T>
Var<T> negative_loss(const Var<T>& heatmap_negative);

// Model-level forms.
template <typename T>
Var<T> loss_sep(const net::GbsModel<T>& model, const blend::BlendedSample& sample);
template <typename T>
Var<T> loss_adv(const net::GbsModel<T>& model, const Image& blended);
template <typename T>
Var<T> loss_neg(const net::GbsModel<T>& model, const Image& blended, const blend::Tokens& text_neg);

// Z[k, m] = max_i cos(sum_p cos+(W_k^i, E_m^i[p]) * E_m^i[p], W_k^i); rows are
// texts, columns images. Returns a [B, B] matrix.
template <typename T>
Var<T> similarity_matrix(const std::vector<std::vector<Var<T>>>& pyramids,
                         const std::vector<std::vector<Var<T>>>& texts);

// Symmetric softmax cross-entropy of t * Z against the diagonal, averaged
// over rows and over columns, the two directions summed.
template <typename T>
Var<T> loss_i2t(const Var<T>& z, double temperature);

template <typename T>
Var<T> loss_i2t(const net::GbsModel<T>& model, const std::vector<Image>& images,
                const std::vector<blend::Tokens>& texts, double temperature);

template <typename T>
struct LossParts {
  Var<T> sep, adv, neg, i2t;
};

// L = L_sep + g_adv L_adv + g_neg L_neg + g_i2t L_i2t. Undefined parts are
// skipped.
template <typename T>
Var<T> loss_total(const LossParts<T>& parts, const LossWeights& weights);
double loss_total(double sep, double adv, double neg, double i2t, const LossWeights& weights);

// All four objectives of one training batch; the blended-image encoding is
// shared by the four decoder passes of a sample.
template <typename T>
LossParts<T> batch_losses(const net::GbsModel<T>& model, const blend::TrainingBatch& batch,
                          const LossWeights& weights);

}  // namespace gbs::losses
