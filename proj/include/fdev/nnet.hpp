#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fdev/environment.hpp"
#include "fdev/rng.hpp"

namespace fdev {

// Shared-trunk residual CNN: a conv block plus n_res_blocks residual blocks
// (two conv blocks each, identity skip), then two arms. Each arm reduces
// with 1x1 convs (head_channels, then head_reduced kernels) and an
// embedding FC layer; the policy arm ends in a 2-logit drill layer and an
// nx*ny location-logit layer, the value arm in a scalar.
struct ArchConfig {
    int nc = 17, nx = 50, ny = 50;
    int trunk_channels = 64;
    int n_res_blocks = 6;
    int head_channels = 128;
    int head_reduced = 2;
    int embed = 50;

    int hw() const { return nx * ny; }
};

struct LayerRef {
    size_t w = 0, b = 0;      // offsets into the flat parameter vector
    int in = 0, out = 0, k = 0;  // k = kernel size for convs, 0 for FC
    size_t w_size = 0, b_size = 0;
};

struct NetworkParams {
    ArchConfig arch;
    LayerRef trunk0;
    std::vector<std::pair<LayerRef, LayerRef>> res;
    LayerRef pconv1, pconv2, pfc, pdrill, ploc;
    LayerRef vconv1, vconv2, vfc, vout;
    std::vector<double> data;

    size_t num_params() const { return data.size(); }
    // Layers in declared (checkpoint) order.
    std::vector<const LayerRef*> layer_order() const;
};

// He-style fan-in Gaussian weights, zero biases; the final policy layers
// are zero-initialized so the initial policy is uniform over valid actions.
NetworkParams init_params(const ArchConfig& arch, Rng& rng);

struct PolicyValueOutput {
    int batch = 0, hw = 0;
    std::vector<double> drill_logp;  // [batch][2]
    std::vector<double> loc_logp;    // [batch][hw]; exactly -inf on masked cells
    std::vector<double> value;       // [batch]
};

// Opaque activation storage reused between forward and backward.
struct ForwardCache {
    int batch = 0;
    std::vector<double> input;
    std::vector<double> trunk_act;            // after trunk0
    std::vector<double> res_mid, res_out;     // per block, concatenated
    std::vector<double> p1, p2, pe, v1, v2, ve;
    std::vector<double> drill_logits, loc_logits, value_pre;
};

// obs layout: [batch][nc][ny][nx]; masks: [batch][hw] in {0,1}.
PolicyValueOutput forward(const NetworkParams& params, const double* obs, int batch,
                          const uint8_t* masks, ForwardCache* cache = nullptr,
                          int n_threads = 1);

// Exact reverse-mode gradients accumulated (+=) into grads (flat vector the
// size of params.data). Upstream gradients are with respect to the full
// drill_logp / loc_logp vectors and value. Masked entries contribute zero.
void backward(const NetworkParams& params, const ForwardCache& cache,
              const PolicyValueOutput& out, const uint8_t* masks,
              const double* d_drill_logp, const double* d_loc_logp,
              const double* d_value, std::vector<double>& grads, int n_threads = 1);

// logp = drill_logp[w] + [w = 1] * loc_logp[u];
// entropy = H(drill) + p(drill) * H(location) (joint-distribution entropy).
double action_log_prob(const PolicyValueOutput& out, int row, const Action& action);
double joint_entropy(const PolicyValueOutput& out, int row);

// Versioned checkpoint: text header (arch + user fields) + flat
// little-endian 64-bit parameter array in declared layer order.
void save_checkpoint(const std::string& path, const NetworkParams& params,
                     const std::vector<std::pair<std::string, std::string>>& extra = {});
NetworkParams load_checkpoint(const std::string& path,
                              std::vector<std::pair<std::string, std::string>>* extra = nullptr);

}  // namespace fdev
