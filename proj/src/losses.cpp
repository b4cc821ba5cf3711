#include "mmfuse/losses.hpp"

namespace mmfuse::losses {

using model::BoundModel;
using model::InferenceMode;
using model::TokenPolicy;

ModalitySubset SubsetSampler::draw() {
    switch (gen_.next_below(3)) {
    case 0: return ModalitySubset::ImageOnly;
    case 1: return ModalitySubset::TabularOnly;
    default: return ModalitySubset::Both;
    }
}

ad::Tensor pair_labeling(const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    ad::Tensor a(n, n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            a.data[u * n + v] = labels[u] == labels[v] ? 1.0 : -1.0;
    return a;
}

ad::Var loss_base(ad::Graph& g, ad::Var logits, ad::Var y) {
    const ad::Tensor& l = g.value(logits);
    const ad::Tensor& yy = g.value(y);
    if (l.rows != yy.rows || l.cols != 1 || yy.cols != 1) {
        throw DimensionError("loss_base: logits and labels must both be n x 1");
    }
    return g.reduce_mean(g.sub(g.softplus(logits), g.mul(y, logits)));
}

ad::Var loss_base_mode(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                       ad::Var y, InferenceMode mode, TokenPolicy policy) {
    const ad::Var logits = model::forward_logit_vars(g, m, x_image, x_tabular, mode, policy);
    return loss_base(g, logits, y);
}

namespace {

InferenceMode mode_of(ModalitySubset subset) {
    switch (subset) {
    case ModalitySubset::ImageOnly: return InferenceMode::ImageOnly;
    case ModalitySubset::TabularOnly: return InferenceMode::TabularOnly;
    default: return InferenceMode::Both;
    }
}

} // namespace

ad::Var loss_md_subset(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                       ad::Var y, ModalitySubset subset, TokenPolicy policy) {
    return loss_base_mode(g, m, x_image, x_tabular, y, mode_of(subset), policy);
}

ad::Var loss_md(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular, ad::Var y,
                SubsetSampler& sampler, TokenPolicy policy) {
    return loss_md_subset(g, m, x_image, x_tabular, y, sampler.draw(), policy);
}

ad::Var loss_smd(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular, ad::Var y,
                 double lambda, TokenPolicy policy) {
    if (lambda < 0.0) throw ContractError("loss_smd: lambda must be >= 0");
    const ad::Var both =
        loss_base_mode(g, m, x_image, x_tabular, y, InferenceMode::Both, policy);
    const ad::Var image =
        loss_base_mode(g, m, x_image, x_tabular, y, InferenceMode::ImageOnly, policy);
    const ad::Var tabular =
        loss_base_mode(g, m, x_image, x_tabular, y, InferenceMode::TabularOnly, policy);
    return g.add(both, g.scalar_mul(g.add(image, tabular), lambda));
}

ad::Var loss_con_pair(ad::Graph& g, ad::Var z_i, ad::Var z_j, const ad::Tensor& pair_labels,
                      ad::Var t, ad::Var b) {
    const ad::Tensor& zi = g.value(z_i);
    const ad::Tensor& zj = g.value(z_j);
    if (zi.rows != zj.rows || zi.cols != zj.cols) {
        throw DimensionError("loss_con_pair: representation batches must share shape, (" +
                             std::to_string(zi.rows) + "x" + std::to_string(zi.cols) + ") vs (" +
                             std::to_string(zj.rows) + "x" + std::to_string(zj.cols) + ")");
    }
    if (pair_labels.rows != zi.rows || pair_labels.cols != zi.rows) {
        throw DimensionError("loss_con_pair: pair labeling must be n x n");
    }
    const ad::Var sim = g.matmul(z_i, g.transpose(z_j)); // n x n dot products
    const ad::Var pre = g.add(g.neg(g.mul(t, sim)), b);  // -t*<.,.> + b
    const ad::Var arg = g.mul(g.constant(pair_labels), pre);
    return g.reduce_sum_sym(g.softplus(arg));
}

ad::Var loss_con(ad::Graph& g, ad::Var z_image, ad::Var z_tabular, const ad::Tensor& pair_labels,
                 ad::Var t, ad::Var b) {
    return loss_con_pair(g, z_image, z_tabular, pair_labels, t, b);
}

ad::Var loss_con_hat(ad::Graph& g, ad::Var z_image, ad::Var z_tabular, ad::Var z_fused,
                     const ad::Tensor& pair_labels, ad::Var t, ad::Var b) {
    const ad::Tensor& zc = g.value(z_image);
    const ad::Tensor& zt = g.value(z_tabular);
    const ad::Tensor& zf = g.value(z_fused);
    if (zc.rows != zt.rows || zc.cols != zt.cols || zc.rows != zf.rows || zc.cols != zf.cols) {
        throw DimensionError("loss_con_hat: the three representation batches must share shape");
    }
    const ad::Var ct = loss_con_pair(g, z_image, z_tabular, pair_labels, t, b);
    const ad::Var cf = loss_con_pair(g, z_image, z_fused, pair_labels, t, b);
    const ad::Var tf = loss_con_pair(g, z_tabular, z_fused, pair_labels, t, b);
    return g.add(g.add(ct, cf), tf);
}

} // namespace mmfuse::losses
