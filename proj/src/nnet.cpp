#include "fdev/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fdev {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void parallel_for_chunks(int n, int n_threads, const std::function<void(int, int, int)>& fn) {
    n_threads = std::max(1, std::min(n_threads, n));
    if (n_threads == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    const int chunk = (n + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
        const int lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(fn, t, lo, hi);
    }
    for (auto& th : pool) th.join();
}

// Zero-padded stride-1 convolution, NCHW single sample.
void conv_forward(const double* W, const double* b, int in_c, int out_c, int k, int H,
                  int Wd, const double* in, double* out) {
    const int pad = k / 2;
    for (int oc = 0; oc < out_c; ++oc) {
        double* o = out + static_cast<size_t>(oc) * H * Wd;
        for (int p = 0; p < H * Wd; ++p) o[p] = b[oc];
        for (int ic = 0; ic < in_c; ++ic) {
            const double* x = in + static_cast<size_t>(ic) * H * Wd;
            const double* w = W + (static_cast<size_t>(oc) * in_c + ic) * k * k;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = w[ky * k + kx];
                    if (wv == 0.0) continue;
                    const int dy = ky - pad, dx = kx - pad;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(Wd, Wd - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + y * Wd;
                        const double* xrow = x + (y + dy) * Wd + dx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
                    }
                }
        }
    }
}

// din may be null (input layer). dW/db accumulated.
void conv_backward(const double* W, int in_c, int out_c, int k, int H, int Wd,
                   const double* in, const double* dout, double* din, double* dW, double* db) {
    const int pad = k / 2;
    for (int oc = 0; oc < out_c; ++oc) {
        const double* go = dout + static_cast<size_t>(oc) * H * Wd;
        double bsum = 0.0;
        for (int p = 0; p < H * Wd; ++p) bsum += go[p];
        db[oc] += bsum;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* x = in + static_cast<size_t>(ic) * H * Wd;
            const double* w = W + (static_cast<size_t>(oc) * in_c + ic) * k * k;
            double* gw = dW + (static_cast<size_t>(oc) * in_c + ic) * k * k;
            double* gx = din ? din + static_cast<size_t>(ic) * H * Wd : nullptr;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int dy = ky - pad, dx = kx - pad;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(Wd, Wd - dx);
                    double wgrad = 0.0;
                    const double wv = w[ky * k + kx];
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = go + y * Wd;
                        const double* xrow = x + (y + dy) * Wd + dx;
                        double* gxrow = gx ? gx + (y + dy) * Wd + dx : nullptr;
                        for (int xx = x0; xx < x1; ++xx) {
                            wgrad += grow[xx] * xrow[xx];
                            if (gxrow) gxrow[xx] += grow[xx] * wv;
                        }
                    }
                    gw[ky * k + kx] += wgrad;
                }
        }
    }
}

void fc_forward(const double* W, const double* b, int in, int out, const double* x, double* y) {
    for (int o = 0; o < out; ++o) {
        const double* w = W + static_cast<size_t>(o) * in;
        double acc = b[o];
        for (int i = 0; i < in; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

void fc_backward(const double* W, int in, int out, const double* x, const double* dy,
                 double* dx, double* dW, double* db) {
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        db[o] += g;
        const double* w = W + static_cast<size_t>(o) * in;
        double* gw = dW + static_cast<size_t>(o) * in;
        if (g != 0.0) {
            for (int i = 0; i < in; ++i) gw[i] += g * x[i];
            if (dx)
                for (int i = 0; i < in; ++i) dx[i] += g * w[i];
        }
    }
}

inline void relu_inplace(double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// d *= [act > 0], where act is the post-ReLU value.
inline void relu_backward_inplace(const double* act, double* d, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (act[i] <= 0.0) d[i] = 0.0;
}

// Log-softmax over entries with mask != 0 (mask nullptr = all valid);
// invalid entries get -inf. Returns the number of valid entries.
int masked_log_softmax(const double* logits, const uint8_t* mask, int n, double* logp) {
    double hi = kNegInf;
    int valid = 0;
    for (int i = 0; i < n; ++i)
        if (!mask || mask[i]) {
            hi = std::max(hi, logits[i]);
            ++valid;
        }
    if (valid == 0) {
        for (int i = 0; i < n; ++i) logp[i] = kNegInf;
        return 0;
    }
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        if (!mask || mask[i]) sum += std::exp(logits[i] - hi);
    const double lse = hi + std::log(sum);
    for (int i = 0; i < n; ++i) logp[i] = (!mask || mask[i]) ? logits[i] - lse : kNegInf;
    return valid;
}

// dlogit_i = d_i - p_i * sum_valid(d), zero on invalid entries.
void log_softmax_backward(const double* logp, const uint8_t* mask, int n, const double* d,
                          double* dlogits) {
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        if (!mask || mask[i]) total += d[i];
    for (int i = 0; i < n; ++i)
        dlogits[i] = (!mask || mask[i]) ? d[i] - std::exp(logp[i]) * total : 0.0;
}

}  // namespace

std::vector<const LayerRef*> NetworkParams::layer_order() const {
    std::vector<const LayerRef*> order{&trunk0};
    for (const auto& r : res) {
        order.push_back(&r.first);
        order.push_back(&r.second);
    }
    for (const LayerRef* l : {&pconv1, &pconv2, &pfc, &pdrill, &ploc, &vconv1, &vconv2, &vfc, &vout})
        order.push_back(l);
    return order;
}

namespace {

LayerRef alloc_conv(size_t& off, int in_c, int out_c, int k) {
    LayerRef r;
    r.in = in_c;
    r.out = out_c;
    r.k = k;
    r.w_size = static_cast<size_t>(out_c) * in_c * k * k;
    r.b_size = out_c;
    r.w = off;
    off += r.w_size;
    r.b = off;
    off += r.b_size;
    return r;
}

LayerRef alloc_fc(size_t& off, int in, int out) {
    LayerRef r;
    r.in = in;
    r.out = out;
    r.k = 0;
    r.w_size = static_cast<size_t>(out) * in;
    r.b_size = out;
    r.w = off;
    off += r.w_size;
    r.b = off;
    off += r.b_size;
    return r;
}

}  // namespace

NetworkParams init_params(const ArchConfig& arch, Rng& rng) {
    if (arch.nc <= 0 || arch.nx <= 0 || arch.ny <= 0 || arch.trunk_channels <= 0 ||
        arch.n_res_blocks < 0 || arch.head_channels <= 0 || arch.head_reduced <= 0 ||
        arch.embed <= 0)
        throw std::invalid_argument("init_params: invalid architecture");

    NetworkParams net;
    net.arch = arch;
    size_t off = 0;
    const int C = arch.trunk_channels;
    net.trunk0 = alloc_conv(off, arch.nc, C, 3);
    for (int r = 0; r < arch.n_res_blocks; ++r)
        net.res.emplace_back(alloc_conv(off, C, C, 3), alloc_conv(off, C, C, 3));
    net.pconv1 = alloc_conv(off, C, arch.head_channels, 1);
    net.pconv2 = alloc_conv(off, arch.head_channels, arch.head_reduced, 1);
    net.pfc = alloc_fc(off, arch.head_reduced * arch.hw(), arch.embed);
    net.pdrill = alloc_fc(off, arch.embed, 2);
    net.ploc = alloc_fc(off, arch.embed, arch.hw());
    net.vconv1 = alloc_conv(off, C, arch.head_channels, 1);
    net.vconv2 = alloc_conv(off, arch.head_channels, arch.head_reduced, 1);
    net.vfc = alloc_fc(off, arch.head_reduced * arch.hw(), arch.embed);
    net.vout = alloc_fc(off, arch.embed, 1);
    net.data.assign(off, 0.0);

    auto he_fill = [&](const LayerRef& l) {
        const int fan_in = l.k > 0 ? l.in * l.k * l.k : l.in;
        const double scale = std::sqrt(2.0 / fan_in);
        for (size_t i = 0; i < l.w_size; ++i) net.data[l.w + i] = scale * rng.normal();
    };
    he_fill(net.trunk0);
    for (const auto& r : net.res) {
        he_fill(r.first);
        he_fill(r.second);
    }
    for (const LayerRef* l : {&net.pconv1, &net.pconv2, &net.pfc, &net.vconv1, &net.vconv2,
                              &net.vfc, &net.vout})
        he_fill(*l);
    // pdrill / ploc stay zero: uniform masked policy at the first forward.
    return net;
}

PolicyValueOutput forward(const NetworkParams& net, const double* obs, int batch,
                          const uint8_t* masks, ForwardCache* cache, int n_threads) {
    const ArchConfig& a = net.arch;
    const int hw = a.hw();
    const int C = a.trunk_channels;
    const size_t chw = static_cast<size_t>(C) * hw;

    PolicyValueOutput out;
    out.batch = batch;
    out.hw = hw;
    out.drill_logp.resize(static_cast<size_t>(batch) * 2);
    out.loc_logp.resize(static_cast<size_t>(batch) * hw);
    out.value.resize(batch);

    ForwardCache local;
    ForwardCache& cc = cache ? *cache : local;
    cc.batch = batch;
    cc.input.assign(obs, obs + static_cast<size_t>(batch) * a.nc * hw);
    cc.trunk_act.resize(static_cast<size_t>(batch) * chw);
    cc.res_mid.resize(static_cast<size_t>(batch) * a.n_res_blocks * chw);
    cc.res_out.resize(static_cast<size_t>(batch) * a.n_res_blocks * chw);
    cc.p1.resize(static_cast<size_t>(batch) * a.head_channels * hw);
    cc.p2.resize(static_cast<size_t>(batch) * a.head_reduced * hw);
    cc.pe.resize(static_cast<size_t>(batch) * a.embed);
    cc.v1.resize(static_cast<size_t>(batch) * a.head_channels * hw);
    cc.v2.resize(static_cast<size_t>(batch) * a.head_reduced * hw);
    cc.ve.resize(static_cast<size_t>(batch) * a.embed);
    cc.drill_logits.resize(static_cast<size_t>(batch) * 2);
    cc.loc_logits.resize(static_cast<size_t>(batch) * hw);
    cc.value_pre.resize(batch);

    const double* P = net.data.data();
    parallel_for_chunks(batch, n_threads, [&](int, int lo, int hi) {
        for (int s = lo; s < hi; ++s) {
            const double* x = cc.input.data() + static_cast<size_t>(s) * a.nc * hw;
            double* trunk = cc.trunk_act.data() + static_cast<size_t>(s) * chw;
            conv_forward(P + net.trunk0.w, P + net.trunk0.b, a.nc, C, 3, a.ny, a.nx, x, trunk);
            relu_inplace(trunk, chw);
            const double* cur = trunk;
            for (int r = 0; r < a.n_res_blocks; ++r) {
                double* mid = cc.res_mid.data() + (static_cast<size_t>(s) * a.n_res_blocks + r) * chw;
                double* ro = cc.res_out.data() + (static_cast<size_t>(s) * a.n_res_blocks + r) * chw;
                conv_forward(P + net.res[r].first.w, P + net.res[r].first.b, C, C, 3, a.ny, a.nx,
                             cur, mid);
                relu_inplace(mid, chw);
                conv_forward(P + net.res[r].second.w, P + net.res[r].second.b, C, C, 3, a.ny,
                             a.nx, mid, ro);
                relu_inplace(ro, chw);
                for (size_t i = 0; i < chw; ++i) ro[i] += cur[i];
                cur = ro;
            }

            auto arm = [&](const LayerRef& c1, const LayerRef& c2, const LayerRef& fc,
                           double* a1, double* a2, double* ae) {
                conv_forward(P + c1.w, P + c1.b, C, a.head_channels, 1, a.ny, a.nx, cur, a1);
                relu_inplace(a1, static_cast<size_t>(a.head_channels) * hw);
                conv_forward(P + c2.w, P + c2.b, a.head_channels, a.head_reduced, 1, a.ny, a.nx,
                             a1, a2);
                relu_inplace(a2, static_cast<size_t>(a.head_reduced) * hw);
                fc_forward(P + fc.w, P + fc.b, fc.in, fc.out, a2, ae);
                relu_inplace(ae, a.embed);
            };
            double* p1 = cc.p1.data() + static_cast<size_t>(s) * a.head_channels * hw;
            double* p2 = cc.p2.data() + static_cast<size_t>(s) * a.head_reduced * hw;
            double* pe = cc.pe.data() + static_cast<size_t>(s) * a.embed;
            arm(net.pconv1, net.pconv2, net.pfc, p1, p2, pe);
            double* dl = cc.drill_logits.data() + static_cast<size_t>(s) * 2;
            double* ll = cc.loc_logits.data() + static_cast<size_t>(s) * hw;
            fc_forward(P + net.pdrill.w, P + net.pdrill.b, a.embed, 2, pe, dl);
            fc_forward(P + net.ploc.w, P + net.ploc.b, a.embed, hw, pe, ll);

            double* v1 = cc.v1.data() + static_cast<size_t>(s) * a.head_channels * hw;
            double* v2 = cc.v2.data() + static_cast<size_t>(s) * a.head_reduced * hw;
            double* ve = cc.ve.data() + static_cast<size_t>(s) * a.embed;
            arm(net.vconv1, net.vconv2, net.vfc, v1, v2, ve);
            double vpre;
            fc_forward(P + net.vout.w, P + net.vout.b, a.embed, 1, ve, &vpre);
            cc.value_pre[s] = vpre;
            out.value[s] = vpre;

            const uint8_t* m = masks + static_cast<size_t>(s) * hw;
            const int valid = masked_log_softmax(ll, m, hw, out.loc_logp.data() + static_cast<size_t>(s) * hw);
            if (valid == 0) {
                // No legal drilling location: skip is forced.
                out.drill_logp[2 * s] = 0.0;
                out.drill_logp[2 * s + 1] = kNegInf;
            } else {
                masked_log_softmax(dl, nullptr, 2, out.drill_logp.data() + static_cast<size_t>(s) * 2);
            }
        }
    });
    return out;
}

void backward(const NetworkParams& net, const ForwardCache& cc, const PolicyValueOutput& out,
              const uint8_t* masks, const double* d_drill_logp, const double* d_loc_logp,
              const double* d_value, std::vector<double>& grads, int n_threads) {
    const ArchConfig& a = net.arch;
    const int hw = a.hw();
    const int C = a.trunk_channels;
    const size_t chw = static_cast<size_t>(C) * hw;
    const int batch = cc.batch;
    if (batch == 0) throw std::logic_error("backward: forward cache is empty");
    if (grads.size() != net.data.size()) grads.assign(net.data.size(), 0.0);

    n_threads = std::max(1, std::min(n_threads, batch));
    std::vector<std::vector<double>> tg(n_threads);
    for (auto& g : tg) g.assign(net.data.size(), 0.0);

    const double* P = net.data.data();
    parallel_for_chunks(batch, n_threads, [&](int tid, int lo, int hi) {
        double* G = tg[tid].data();
        std::vector<double> d_trunk(chw), d_tmp(chw), d_mid(chw);
        std::vector<double> d_a1(static_cast<size_t>(a.head_channels) * hw);
        std::vector<double> d_a2(static_cast<size_t>(a.head_reduced) * hw);
        std::vector<double> d_ae(a.embed), d_logits(std::max(hw, 2));

        for (int s = lo; s < hi; ++s) {
            const uint8_t* m = masks + static_cast<size_t>(s) * hw;
            const double* trunk_final =
                a.n_res_blocks > 0
                    ? cc.res_out.data() + (static_cast<size_t>(s) * a.n_res_blocks +
                                           (a.n_res_blocks - 1)) * chw
                    : cc.trunk_act.data() + static_cast<size_t>(s) * chw;
            std::fill(d_trunk.begin(), d_trunk.end(), 0.0);

            // Value arm.
            {
                const double dv = d_value[s];
                const double* ve = cc.ve.data() + static_cast<size_t>(s) * a.embed;
                std::fill(d_ae.begin(), d_ae.end(), 0.0);
                fc_backward(P + net.vout.w, a.embed, 1, ve, &dv, d_ae.data(), G + net.vout.w,
                            G + net.vout.b);
                relu_backward_inplace(ve, d_ae.data(), a.embed);
                const double* v2 = cc.v2.data() + static_cast<size_t>(s) * a.head_reduced * hw;
                std::fill(d_a2.begin(), d_a2.end(), 0.0);
                fc_backward(P + net.vfc.w, net.vfc.in, net.vfc.out, v2, d_ae.data(), d_a2.data(),
                            G + net.vfc.w, G + net.vfc.b);
                relu_backward_inplace(v2, d_a2.data(), d_a2.size());
                const double* v1 = cc.v1.data() + static_cast<size_t>(s) * a.head_channels * hw;
                std::fill(d_a1.begin(), d_a1.end(), 0.0);
                conv_backward(P + net.vconv2.w, a.head_channels, a.head_reduced, 1, a.ny, a.nx,
                              v1, d_a2.data(), d_a1.data(), G + net.vconv2.w, G + net.vconv2.b);
                relu_backward_inplace(v1, d_a1.data(), d_a1.size());
                conv_backward(P + net.vconv1.w, C, a.head_channels, 1, a.ny, a.nx, trunk_final,
                              d_a1.data(), d_trunk.data(), G + net.vconv1.w, G + net.vconv1.b);
            }

            // Policy heads through the masked log-softmaxes.
            {
                int valid = 0;
                for (int i = 0; i < hw; ++i) valid += m[i] != 0;
                const double* pe = cc.pe.data() + static_cast<size_t>(s) * a.embed;
                std::fill(d_ae.begin(), d_ae.end(), 0.0);
                if (valid > 0) {
                    log_softmax_backward(out.loc_logp.data() + static_cast<size_t>(s) * hw, m,
                                         hw, d_loc_logp + static_cast<size_t>(s) * hw,
                                         d_logits.data());
                    fc_backward(P + net.ploc.w, a.embed, hw, pe, d_logits.data(), d_ae.data(),
                                G + net.ploc.w, G + net.ploc.b);
                    log_softmax_backward(out.drill_logp.data() + static_cast<size_t>(s) * 2,
                                         nullptr, 2, d_drill_logp + static_cast<size_t>(s) * 2,
                                         d_logits.data());
                    fc_backward(P + net.pdrill.w, a.embed, 2, pe, d_logits.data(), d_ae.data(),
                                G + net.pdrill.w, G + net.pdrill.b);
                }
                relu_backward_inplace(pe, d_ae.data(), a.embed);
                const double* p2 = cc.p2.data() + static_cast<size_t>(s) * a.head_reduced * hw;
                std::fill(d_a2.begin(), d_a2.end(), 0.0);
                fc_backward(P + net.pfc.w, net.pfc.in, net.pfc.out, p2, d_ae.data(), d_a2.data(),
                            G + net.pfc.w, G + net.pfc.b);
                relu_backward_inplace(p2, d_a2.data(), d_a2.size());
                const double* p1 = cc.p1.data() + static_cast<size_t>(s) * a.head_channels * hw;
                std::fill(d_a1.begin(), d_a1.end(), 0.0);
                conv_backward(P + net.pconv2.w, a.head_channels, a.head_reduced, 1, a.ny, a.nx,
                              p1, d_a2.data(), d_a1.data(), G + net.pconv2.w, G + net.pconv2.b);
                relu_backward_inplace(p1, d_a1.data(), d_a1.size());
                conv_backward(P + net.pconv1.w, C, a.head_channels, 1, a.ny, a.nx, trunk_final,
                              d_a1.data(), d_trunk.data(), G + net.pconv1.w, G + net.pconv1.b);
            }

            // Residual trunk.
            for (int r = a.n_res_blocks - 1; r >= 0; --r) {
                const double* x_in =
                    r > 0 ? cc.res_out.data() + (static_cast<size_t>(s) * a.n_res_blocks + r - 1) * chw
                          : cc.trunk_act.data() + static_cast<size_t>(s) * chw;
                const double* ro =
                    cc.res_out.data() + (static_cast<size_t>(s) * a.n_res_blocks + r) * chw;
                const double* mid =
                    cc.res_mid.data() + (static_cast<size_t>(s) * a.n_res_blocks + r) * chw;
                // h = ro - x_in is the post-ReLU branch output.
                for (size_t i = 0; i < chw; ++i)
                    d_tmp[i] = (ro[i] - x_in[i]) > 0.0 ? d_trunk[i] : 0.0;
                std::fill(d_mid.begin(), d_mid.end(), 0.0);
                conv_backward(P + net.res[r].second.w, C, C, 3, a.ny, a.nx, mid, d_tmp.data(),
                              d_mid.data(), G + net.res[r].second.w, G + net.res[r].second.b);
                relu_backward_inplace(mid, d_mid.data(), chw);
                conv_backward(P + net.res[r].first.w, C, C, 3, a.ny, a.nx, x_in, d_mid.data(),
                              d_trunk.data(), G + net.res[r].first.w, G + net.res[r].first.b);
            }
            const double* t0 = cc.trunk_act.data() + static_cast<size_t>(s) * chw;
            relu_backward_inplace(t0, d_trunk.data(), chw);
            const double* x = cc.input.data() + static_cast<size_t>(s) * a.nc * hw;
            conv_backward(P + net.trunk0.w, a.nc, C, 3, a.ny, a.nx, x, d_trunk.data(), nullptr,
                          G + net.trunk0.w, G + net.trunk0.b);
        }
    });

    // Fixed-order reduction keeps results independent of thread timing.
    for (const auto& g : tg)
        for (size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
}

double action_log_prob(const PolicyValueOutput& out, int row, const Action& action) {
    const double dl = out.drill_logp[static_cast<size_t>(row) * 2 + action.w];
    if (action.w == 0) {
        if (!std::isfinite(dl)) throw std::logic_error("action_log_prob: illegal action");
        return dl;
    }
    const double ll = out.loc_logp[static_cast<size_t>(row) * out.hw + action.u];
    if (!std::isfinite(dl) || !std::isfinite(ll))
        throw std::logic_error("action_log_prob: illegal action");
    return dl + ll;
}

double joint_entropy(const PolicyValueOutput& out, int row) {
    double h_drill = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double lp = out.drill_logp[static_cast<size_t>(row) * 2 + i];
        if (std::isfinite(lp)) h_drill -= std::exp(lp) * lp;
    }
    const double p_drill = std::exp(out.drill_logp[static_cast<size_t>(row) * 2 + 1]);
    double h_loc = 0.0;
    if (p_drill > 0.0) {
        for (int u = 0; u < out.hw; ++u) {
            const double lp = out.loc_logp[static_cast<size_t>(row) * out.hw + u];
            if (std::isfinite(lp)) h_loc -= std::exp(lp) * lp;
        }
    }
    return h_drill + p_drill * h_loc;
}

void save_checkpoint(const std::string& path, const NetworkParams& net,
                     const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << "fdev-checkpoint-1\n";
    out << "arch.nc = " << net.arch.nc << "\narch.nx = " << net.arch.nx
        << "\narch.ny = " << net.arch.ny << "\narch.trunk_channels = " << net.arch.trunk_channels
        << "\narch.n_res_blocks = " << net.arch.n_res_blocks
        << "\narch.head_channels = " << net.arch.head_channels
        << "\narch.head_reduced = " << net.arch.head_reduced
        << "\narch.embed = " << net.arch.embed << "\n";
    for (const auto& [k, v] : extra) out << k << " = " << v << "\n";
    out << "params = " << net.data.size() << "\n";
    out << "DATA\n";
    out.write(reinterpret_cast<const char*>(net.data.data()),
              static_cast<std::streamsize>(net.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

NetworkParams load_checkpoint(const std::string& path,
                              std::vector<std::pair<std::string, std::string>>* extra) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "fdev-checkpoint-1")
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::map<std::string, std::string> kv;
    size_t nparams = 0;
    while (std::getline(in, line)) {
        if (line == "DATA") break;
        auto eq = line.find(" = ");
        if (eq == std::string::npos) throw std::runtime_error("load_checkpoint: malformed header line");
        std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        if (key == "params")
            nparams = std::stoull(val);
        else if (key.rfind("arch.", 0) == 0)
            kv[key] = val;
        else if (extra)
            extra->emplace_back(key, val);
    }
    ArchConfig a;
    a.nc = std::stoi(kv.at("arch.nc"));
    a.nx = std::stoi(kv.at("arch.nx"));
    a.ny = std::stoi(kv.at("arch.ny"));
    a.trunk_channels = std::stoi(kv.at("arch.trunk_channels"));
    a.n_res_blocks = std::stoi(kv.at("arch.n_res_blocks"));
    a.head_channels = std::stoi(kv.at("arch.head_channels"));
    a.head_reduced = std::stoi(kv.at("arch.head_reduced"));
    a.embed = std::stoi(kv.at("arch.embed"));
    Rng dummy(0);
    NetworkParams net = init_params(a, dummy);
    if (net.data.size() != nparams)
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    in.read(reinterpret_cast<char*>(net.data.data()),
            static_cast<std::streamsize>(nparams * sizeof(double)));
    if (static_cast<size_t>(in.gcount()) != nparams * sizeof(double))
        throw std::runtime_error("load_checkpoint: truncated parameter data");
    return net;
}

}  // namespace fdev
