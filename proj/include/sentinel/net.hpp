#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/checksum.hpp"
#include "sentinel/error.hpp"
#include "sentinel/image.hpp"
#include "sentinel/rng.hpp"

namespace sentinel {

static_assert(std::endian::native == std::endian::little,
              "model serialization assumes a little-endian host");

/// Dense CHW tensor.
template <typename T>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T{}) {}

    T& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    T at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
};

enum class LayerKind { conv, relu, maxpool, fc, softmax };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int kernel = 0;       // conv, maxpool
    int stride = 1;       // conv, maxpool
    int pad = 0;          // conv
    int out_channels = 0; // conv
    int width = 0;        // fc output width; softmax class count
    int in_features = 0;  // fc; 0 = infer from the incoming shape

    static LayerSpec conv(int kernel, int stride, int pad, int out_channels) {
        return {LayerKind::conv, kernel, stride, pad, out_channels, 0, 0};
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec maxpool(int kernel, int stride) {
        return {LayerKind::maxpool, kernel, stride, 0, 0, 0, 0};
    }
    static LayerSpec fc(int width, int in_features = 0) {
        return {LayerKind::fc, 0, 1, 0, 0, width, in_features};
    }
    static LayerSpec softmax(int classes = 2) {
        return {LayerKind::softmax, 0, 1, 0, 0, classes, 0};
    }
};

struct NetworkConfig {
    int input_h = 32, input_w = 32, input_c = 3;
    std::vector<LayerSpec> layers;

    /// Small three-conv/two-fc profile for desk-scale runs (32x32 crops).
    static NetworkConfig desk(int crop = 32) {
        NetworkConfig cfg;
        cfg.input_h = cfg.input_w = crop;
        cfg.layers = {LayerSpec::conv(3, 1, 1, 16), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                      LayerSpec::conv(3, 1, 1, 32), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                      LayerSpec::conv(3, 1, 1, 32), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                      LayerSpec::fc(64),            LayerSpec::relu(), LayerSpec::fc(2),
                      LayerSpec::softmax(2)};
        return cfg;
    }

    /// Five convolutional and three fully-connected learned layers with a
    /// two-way softmax (224x224 input).
    static NetworkConfig alexnet_full() {
        NetworkConfig cfg;
        cfg.input_h = cfg.input_w = 224;
        cfg.layers = {LayerSpec::conv(11, 4, 2, 96),  LayerSpec::relu(), LayerSpec::maxpool(3, 2),
                      LayerSpec::conv(5, 1, 2, 256),  LayerSpec::relu(), LayerSpec::maxpool(3, 2),
                      LayerSpec::conv(3, 1, 1, 384),  LayerSpec::relu(),
                      LayerSpec::conv(3, 1, 1, 384),  LayerSpec::relu(),
                      LayerSpec::conv(3, 1, 1, 256),  LayerSpec::relu(), LayerSpec::maxpool(3, 2),
                      LayerSpec::fc(4096),            LayerSpec::relu(),
                      LayerSpec::fc(4096),            LayerSpec::relu(),
                      LayerSpec::fc(2),               LayerSpec::softmax(2)};
        return cfg;
    }

    static NetworkConfig profile(const std::string& name, int crop = 0) {
        if (name == "desk")
            return desk(crop > 0 ? crop : 32);
        if (name == "alexnet-full")
            return alexnet_full();
        throw ConfigError("unknown network profile: " + name);
    }

    nlohmann::json to_json() const {
        nlohmann::json layers_json = nlohmann::json::array();
        for (const LayerSpec& l : layers) {
            nlohmann::json lj;
            switch (l.kind) {
            case LayerKind::conv:
                lj = {{"kind", "conv"}, {"kernel", l.kernel}, {"stride", l.stride},
                      {"pad", l.pad},   {"out_channels", l.out_channels}};
                break;
            case LayerKind::relu:
                lj = {{"kind", "relu"}};
                break;
            case LayerKind::maxpool:
                lj = {{"kind", "maxpool"}, {"kernel", l.kernel}, {"stride", l.stride}};
                break;
            case LayerKind::fc:
                lj = {{"kind", "fc"}, {"width", l.width}};
                if (l.in_features > 0)
                    lj["in_features"] = l.in_features;
                break;
            case LayerKind::softmax:
                lj = {{"kind", "softmax"}, {"classes", l.width}};
                break;
            }
            layers_json.push_back(lj);
        }
        return {{"format_version", 1},
                {"input", {{"h", input_h}, {"w", input_w}, {"c", input_c}}},
                {"layers", layers_json}};
    }

    static NetworkConfig from_json(const nlohmann::json& j) {
        NetworkConfig cfg;
        try {
            cfg.input_h = j.at("input").at("h").get<int>();
            cfg.input_w = j.at("input").at("w").get<int>();
            cfg.input_c = j.at("input").at("c").get<int>();
            cfg.layers.clear();
            for (const auto& lj : j.at("layers")) {
                std::string kind = lj.at("kind").get<std::string>();
                if (kind == "conv")
                    cfg.layers.push_back(LayerSpec::conv(lj.at("kernel"), lj.at("stride"),
                                                         lj.at("pad"), lj.at("out_channels")));
                else if (kind == "relu")
                    cfg.layers.push_back(LayerSpec::relu());
                else if (kind == "maxpool")
                    cfg.layers.push_back(LayerSpec::maxpool(lj.at("kernel"), lj.at("stride")));
                else if (kind == "fc")
                    cfg.layers.push_back(LayerSpec::fc(lj.at("width"), lj.value("in_features", 0)));
                else if (kind == "softmax")
                    cfg.layers.push_back(LayerSpec::softmax(lj.at("classes")));
                else
                    throw ConfigError("unknown layer kind: " + kind);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("network config: ") + e.what());
        }
        return cfg;
    }
};

/// Shape of the activation after each layer. Throws ConfigError when the
/// layers do not compose.
inline std::vector<std::array<int, 3>> layer_shapes(const NetworkConfig& cfg) {
    if (cfg.layers.empty() || cfg.layers.back().kind != LayerKind::softmax ||
        cfg.layers.back().width != 2)
        throw ConfigError("network must end in a 2-way softmax");
    std::vector<std::array<int, 3>> shapes;
    std::array<int, 3> shape{cfg.input_c, cfg.input_h, cfg.input_w};
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        switch (l.kind) {
        case LayerKind::conv: {
            if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || l.out_channels < 1)
                throw ConfigError("conv layer " + std::to_string(i) + ": bad parameters");
            int h = (shape[1] + 2 * l.pad - l.kernel) / l.stride + 1;
            int w = (shape[2] + 2 * l.pad - l.kernel) / l.stride + 1;
            if (shape[1] + 2 * l.pad < l.kernel || shape[2] + 2 * l.pad < l.kernel)
                throw ConfigError("conv layer " + std::to_string(i) + ": kernel exceeds input");
            shape = {l.out_channels, h, w};
            break;
        }
        case LayerKind::relu:
            break;
        case LayerKind::maxpool: {
            if (l.kernel < 1 || l.stride < 1 || shape[1] < l.kernel || shape[2] < l.kernel)
                throw ConfigError("maxpool layer " + std::to_string(i) + ": kernel exceeds input");
            shape = {shape[0], (shape[1] - l.kernel) / l.stride + 1,
                     (shape[2] - l.kernel) / l.stride + 1};
            break;
        }
        case LayerKind::fc: {
            int flat = shape[0] * shape[1] * shape[2];
            if (l.in_features > 0 && l.in_features != flat)
                throw ConfigError("fc layer " + std::to_string(i) + ": expects " +
                                  std::to_string(l.in_features) + " inputs but receives " +
                                  std::to_string(flat));
            if (l.width < 1)
                throw ConfigError("fc layer " + std::to_string(i) + ": bad width");
            shape = {l.width, 1, 1};
            break;
        }
        case LayerKind::softmax:
            if (i + 1 != cfg.layers.size())
                throw ConfigError("softmax must be the final layer");
            if (shape[0] * shape[1] * shape[2] != l.width)
                throw ConfigError("softmax expects " + std::to_string(l.width) + " logits");
            break;
        }
        shapes.push_back(shape);
    }
    return shapes;
}

template <typename T>
struct NetworkParams {
    NetworkConfig config;
    std::vector<std::vector<T>> weights; // aligned with config.layers; empty when unlearned
    std::vector<std::vector<T>> biases;

    template <typename U>
    NetworkParams<U> cast() const {
        NetworkParams<U> out;
        out.config = config;
        out.weights.resize(weights.size());
        out.biases.resize(biases.size());
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out.weights[i].assign(weights[i].begin(), weights[i].end());
            out.biases[i].assign(biases[i].begin(), biases[i].end());
        }
        return out;
    }

    /// Same-shaped parameter set filled with zeros (gradient / velocity buffers).
    NetworkParams<T> zeros_like() const {
        NetworkParams<T> out;
        out.config = config;
        out.weights.resize(weights.size());
        out.biases.resize(biases.size());
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out.weights[i].assign(weights[i].size(), T{});
            out.biases[i].assign(biases[i].size(), T{});
        }
        return out;
    }
};

struct LayerParamSizes {
    std::size_t weights = 0;
    std::size_t biases = 0;
    int fan_in = 0;
};

/// Per-layer parameter element counts (validates layer composition).
inline std::vector<LayerParamSizes> param_sizes(const NetworkConfig& cfg) {
    std::vector<std::array<int, 3>> shapes = layer_shapes(cfg);
    std::vector<LayerParamSizes> sizes(cfg.layers.size());
    std::array<int, 3> in_shape{cfg.input_c, cfg.input_h, cfg.input_w};
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        if (l.kind == LayerKind::conv) {
            sizes[i].fan_in = in_shape[0] * l.kernel * l.kernel;
            sizes[i].weights = static_cast<std::size_t>(l.out_channels) * sizes[i].fan_in;
            sizes[i].biases = l.out_channels;
        } else if (l.kind == LayerKind::fc) {
            sizes[i].fan_in = in_shape[0] * in_shape[1] * in_shape[2];
            sizes[i].weights = static_cast<std::size_t>(l.width) * sizes[i].fan_in;
            sizes[i].biases = l.width;
        }
        in_shape = shapes[i];
    }
    return sizes;
}

/// Scaled-Gaussian initialization (std = sqrt(2 / fan_in)), zero biases,
/// deterministic in the seed.
inline NetworkParams<double> init_network(const NetworkConfig& cfg, std::uint64_t seed) {
    std::vector<LayerParamSizes> sizes = param_sizes(cfg); // validates composition
    NetworkParams<double> params;
    params.config = cfg;
    params.weights.resize(cfg.layers.size());
    params.biases.resize(cfg.layers.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        if (sizes[i].weights == 0)
            continue;
        double std_dev = std::sqrt(2.0 / sizes[i].fan_in);
        params.weights[i].resize(sizes[i].weights);
        for (double& w : params.weights[i])
            w = rng.gaussian() * std_dev;
        params.biases[i].assign(sizes[i].biases, 0.0);
    }
    return params;
}

struct Prediction {
    double p_tissue = 0.5;
    double p_tumor = 0.5;
};

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            T av = arow[l];
            if (av == T{})
                continue;
            const T* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void im2col(const Tensor3<T>& in, int kernel, int stride, int pad, int oh, int ow,
            std::vector<T>& col) {
    const int ck2 = in.c * kernel * kernel;
    col.assign(static_cast<std::size_t>(ck2) * oh * ow, T{});
    std::size_t row = 0;
    for (int c = 0; c < in.c; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx, ++row) {
                T* dst = col.data() + row * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in.h)
                        continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < in.w)
                            dst[oy * ow + ox] = in.at(c, iy, ix);
                    }
                }
            }
}

template <typename T>
void col2im_acc(const std::vector<T>& col, int channels, int kernel, int stride, int pad, int oh,
                int ow, Tensor3<T>& grad_in) {
    std::size_t row = 0;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx, ++row) {
                const T* src = col.data() + row * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= grad_in.h)
                        continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < grad_in.w)
                            grad_in.at(c, iy, ix) += src[oy * ow + ox];
                    }
                }
            }
}

/// Per-sample forward state kept for backpropagation.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor3<T>> inputs;          // input to each layer
    std::vector<std::vector<T>> cols;        // conv im2col matrices
    std::vector<std::vector<int>> argmax;    // maxpool winners
    std::array<T, 2> logits{};
};

template <typename T>
std::array<T, 2> forward_sample(const NetworkParams<T>& params,
                                const std::vector<std::array<int, 3>>& shapes,
                                const Tensor3<T>& input, ForwardTrace<T>* trace) {
    const NetworkConfig& cfg = params.config;
    Tensor3<T> cur = input;
    if (trace) {
        trace->inputs.assign(cfg.layers.size(), Tensor3<T>{});
        trace->cols.assign(cfg.layers.size(), {});
        trace->argmax.assign(cfg.layers.size(), {});
    }
    std::vector<T> col;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        const auto& out_shape = shapes[i];
        switch (l.kind) {
        case LayerKind::conv: {
            int oh = out_shape[1], ow = out_shape[2];
            im2col(cur, l.kernel, l.stride, l.pad, oh, ow, col);
            Tensor3<T> out(l.out_channels, oh, ow);
            int ck2 = cur.c * l.kernel * l.kernel;
            for (int o = 0; o < l.out_channels; ++o) {
                T* dst = out.v.data() + static_cast<std::size_t>(o) * oh * ow;
                std::fill(dst, dst + oh * ow, params.biases[i][o]);
            }
            gemm_acc(params.weights[i].data(), col.data(), out.v.data(), l.out_channels, ck2,
                     oh * ow);
            if (trace) {
                trace->inputs[i] = std::move(cur);
                trace->cols[i] = col;
            }
            cur = std::move(out);
            break;
        }
        case LayerKind::relu: {
            if (trace)
                trace->inputs[i] = cur;
            for (T& v : cur.v)
                v = v > T{} ? v : T{};
            break;
        }
        case LayerKind::maxpool: {
            int oh = out_shape[1], ow = out_shape[2];
            Tensor3<T> out(cur.c, oh, ow);
            std::vector<int> winners;
            if (trace)
                winners.resize(out.size());
            for (int c = 0; c < cur.c; ++c)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        T best = -std::numeric_limits<T>::infinity();
                        int best_idx = 0;
                        for (int ky = 0; ky < l.kernel; ++ky)
                            for (int kx = 0; kx < l.kernel; ++kx) {
                                int iy = oy * l.stride + ky, ix = ox * l.stride + kx;
                                T v = cur.at(c, iy, ix);
                                if (v > best) {
                                    best = v;
                                    best_idx = (c * cur.h + iy) * cur.w + ix;
                                }
                            }
                        out.at(c, oy, ox) = best;
                        if (trace)
                            winners[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best_idx;
                    }
            if (trace) {
                trace->inputs[i] = std::move(cur);
                trace->argmax[i] = std::move(winners);
            }
            cur = std::move(out);
            break;
        }
        case LayerKind::fc: {
            int in_features = cur.c * cur.h * cur.w;
            Tensor3<T> out(l.width, 1, 1);
            for (int o = 0; o < l.width; ++o) {
                const T* wrow = params.weights[i].data() + static_cast<std::size_t>(o) * in_features;
                T acc = params.biases[i][o];
                for (int f = 0; f < in_features; ++f)
                    acc += wrow[f] * cur.v[f];
                out.v[o] = acc;
            }
            if (trace)
                trace->inputs[i] = std::move(cur);
            cur = std::move(out);
            break;
        }
        case LayerKind::softmax:
            break; // applied by the caller on the logits
        }
    }
    std::array<T, 2> logits{cur.v[0], cur.v[1]};
    if (trace)
        trace->logits = logits;
    return logits;
}

template <typename T>
std::array<T, 2> softmax2(std::array<T, 2> logits) {
    T m = std::max(logits[0], logits[1]);
    T e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    T z = e0 + e1;
    return {e0 / z, e1 / z};
}

/// Backward pass for one sample given d(loss)/d(logits); accumulates into
/// grads.
template <typename T>
void backward_sample(const NetworkParams<T>& params, const ForwardTrace<T>& trace,
                     std::array<T, 2> dlogits, NetworkParams<T>& grads) {
    const NetworkConfig& cfg = params.config;
    Tensor3<T> delta(2, 1, 1);
    delta.v = {dlogits[0], dlogits[1]};
    for (std::size_t ii = cfg.layers.size(); ii-- > 0;) {
        const LayerSpec& l = cfg.layers[ii];
        switch (l.kind) {
        case LayerKind::softmax:
            break; // dlogits already folded in
        case LayerKind::fc: {
            const Tensor3<T>& in = trace.inputs[ii];
            int in_features = in.c * in.h * in.w;
            Tensor3<T> din(in.c, in.h, in.w);
            for (int o = 0; o < l.width; ++o) {
                T d = delta.v[o];
                grads.biases[ii][o] += d;
                const T* wrow =
                    params.weights[ii].data() + static_cast<std::size_t>(o) * in_features;
                T* grow = grads.weights[ii].data() + static_cast<std::size_t>(o) * in_features;
                for (int f = 0; f < in_features; ++f) {
                    grow[f] += d * in.v[f];
                    din.v[f] += d * wrow[f];
                }
            }
            delta = std::move(din);
            break;
        }
        case LayerKind::relu: {
            const Tensor3<T>& in = trace.inputs[ii];
            for (std::size_t k = 0; k < delta.v.size(); ++k)
                if (in.v[k] <= T{})
                    delta.v[k] = T{};
            break;
        }
        case LayerKind::maxpool: {
            const Tensor3<T>& in = trace.inputs[ii];
            Tensor3<T> din(in.c, in.h, in.w);
            const std::vector<int>& winners = trace.argmax[ii];
            for (std::size_t k = 0; k < delta.v.size(); ++k)
                din.v[winners[k]] += delta.v[k];
            delta = std::move(din);
            break;
        }
        case LayerKind::conv: {
            const Tensor3<T>& in = trace.inputs[ii];
            const std::vector<T>& col = trace.cols[ii];
            int oh = delta.h, ow = delta.w;
            int ck2 = in.c * l.kernel * l.kernel;
            // dW += delta * col^T ; db += row sums of delta
            for (int o = 0; o < l.out_channels; ++o) {
                const T* drow = delta.v.data() + static_cast<std::size_t>(o) * oh * ow;
                T db = T{};
                for (int j = 0; j < oh * ow; ++j)
                    db += drow[j];
                grads.biases[ii][o] += db;
                T* grow = grads.weights[ii].data() + static_cast<std::size_t>(o) * ck2;
                for (int r = 0; r < ck2; ++r) {
                    const T* crow = col.data() + static_cast<std::size_t>(r) * oh * ow;
                    T acc = T{};
                    for (int j = 0; j < oh * ow; ++j)
                        acc += drow[j] * crow[j];
                    grow[r] += acc;
                }
            }
            // dcol = W^T * delta, scattered back through col2im
            std::vector<T> dcol(static_cast<std::size_t>(ck2) * oh * ow, T{});
            for (int o = 0; o < l.out_channels; ++o) {
                const T* wrow = params.weights[ii].data() + static_cast<std::size_t>(o) * ck2;
                const T* drow = delta.v.data() + static_cast<std::size_t>(o) * oh * ow;
                for (int r = 0; r < ck2; ++r) {
                    T wv = wrow[r];
                    if (wv == T{})
                        continue;
                    T* dst = dcol.data() + static_cast<std::size_t>(r) * oh * ow;
                    for (int j = 0; j < oh * ow; ++j)
                        dst[j] += wv * drow[j];
                }
            }
            Tensor3<T> din(in.c, in.h, in.w);
            col2im_acc(dcol, in.c, l.kernel, l.stride, l.pad, oh, ow, din);
            delta = std::move(din);
            break;
        }
        }
    }
}

} // namespace detail

/// Forward pass over a batch; probabilities sum to 1 per sample.
template <typename T>
std::vector<Prediction> forward(const NetworkParams<T>& params,
                                std::span<const Tensor3<T>> batch) {
    auto shapes = layer_shapes(params.config);
    std::vector<Prediction> out;
    out.reserve(batch.size());
    for (const Tensor3<T>& input : batch) {
        if (input.c != params.config.input_c || input.h != params.config.input_h ||
            input.w != params.config.input_w)
            throw ConfigError("forward: input tensor does not match the network input shape");
        auto logits = detail::forward_sample<T>(params, shapes, input, nullptr);
        if (!std::isfinite(static_cast<double>(logits[0])) ||
            !std::isfinite(static_cast<double>(logits[1])))
            throw NumericError("forward: non-finite activations");
        auto p = detail::softmax2(logits);
        out.push_back({static_cast<double>(p[0]), static_cast<double>(p[1])});
    }
    return out;
}

struct LossAndGradients {
    double loss = 0.0; // mean cross-entropy + weight-decay term
    NetworkParams<double> gradients;
};

/// Mean cross-entropy (stable log-sum-exp form) plus 0.5*wd*|W|^2, with
/// gradients for every parameter via backpropagation. Labels: 0 = tissue,
/// 1 = tumor.
inline LossAndGradients loss_and_gradients(const NetworkParams<double>& params,
                                           std::span<const Tensor3<double>> batch,
                                           std::span<const int> labels,
                                           double weight_decay = 0.0) {
    if (batch.size() != labels.size() || batch.empty())
        throw ConfigError("loss_and_gradients: batch/label size mismatch");
    auto shapes = layer_shapes(params.config);
    LossAndGradients result;
    result.gradients = params.zeros_like();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    detail::ForwardTrace<double> trace;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        int label = labels[s];
        if (label != 0 && label != 1)
            throw ConfigError("loss_and_gradients: labels must be 0 (tissue) or 1 (tumor)");
        auto logits = detail::forward_sample<double>(params, shapes, batch[s], &trace);
        double m = std::max(logits[0], logits[1]);
        double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
        if (!std::isfinite(lse))
            throw NumericError("loss_and_gradients: non-finite activations");
        result.loss += (lse - logits[label]) * inv_n;
        auto p = detail::softmax2(logits);
        std::array<double, 2> dlogits{p[0] * inv_n, p[1] * inv_n};
        dlogits[label] -= inv_n;
        detail::backward_sample(params, trace, dlogits, result.gradients);
    }
    if (weight_decay > 0.0) {
        double penalty = 0.0;
        for (std::size_t i = 0; i < params.weights.size(); ++i)
            for (std::size_t k = 0; k < params.weights[i].size(); ++k) {
                double w = params.weights[i][k];
                penalty += w * w;
                result.gradients.weights[i][k] += weight_decay * w;
            }
        result.loss += 0.5 * weight_decay * penalty;
    }
    return result;
}

/// Classic SGD with momentum: v = momentum*v - lr*g; w += v. With momentum 0
/// each parameter moves by exactly -lr*g.
inline void sgd_step(NetworkParams<double>& params, const NetworkParams<double>& grads,
                     NetworkParams<double>& velocity, double lr, double momentum) {
    auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                      std::vector<double>& v) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = momentum * v[k] - lr * g[k];
            w[k] += v[k];
        }
    };
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        update(params.weights[i], grads.weights[i], velocity.weights[i]);
        update(params.biases[i], grads.biases[i], velocity.biases[i]);
    }
}

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 16;
    int epochs = 30;
    std::uint64_t seed = 0;
    int crop_size = 32;
    // lr multiplied by 0.1 at 1/3 and 2/3 of the epoch budget
    double lr_decay = 0.1;
    int max_steps_per_epoch = 0;       // 0 = one full pass over the training set
    double early_stop_train_acc = 2.0; // > 1 disables; 1.0 stops at a perfect epoch
    bool full_train_eval = false;      // per-epoch train accuracy over the whole set
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    NetworkParams<double> params; // checkpoint with the best validation accuracy
    std::vector<EpochMetrics> metrics;
    int best_epoch = 0;
    double best_val_acc = 0.0;
};

/// Network input convention: (pixel - mean_pixel) / 255, cropped to the
/// network's input size. The division keeps He-initialized activations and
/// the default learning rate in a sane regime; the training-set mean of
/// preprocessed tiles is still zero per pixel.
inline Tensor3<double> preprocess_window(const RasterImage& tile, const ImageF& mean_image,
                                         int ox, int oy, int crop, bool flip) {
    Tensor3<double> out(3, crop, crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            int sx = flip ? ox + crop - 1 - x : ox + x;
            int sy = oy + y;
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) =
                    (static_cast<double>(tile.at(sx, sy, c)) - mean_image.at(sx, sy, c)) / 255.0;
        }
    return out;
}

template <typename T>
Tensor3<T> preprocess_center(const RasterImage& tile, const ImageF& mean_image, int crop) {
    if (crop > tile.width || crop > tile.height)
        throw ConfigError("predict: tile smaller than the network crop");
    if (tile.width != mean_image.width || tile.height != mean_image.height)
        throw ConfigError("predict: tile and mean image sizes differ");
    int ox = (tile.width - crop) / 2, oy = (tile.height - crop) / 2;
    Tensor3<T> out(3, crop, crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = static_cast<T>(
                    (static_cast<double>(tile.at(ox + x, oy + y, c)) - mean_image.at(ox + x, oy + y, c)) /
                    255.0);
    return out;
}

/// Deterministic single-tile inference on the center crop (no flip).
template <typename T>
double predict_tile(const NetworkParams<T>& params, const RasterImage& tile,
                    const ImageF& mean_image) {
    Tensor3<T> input = preprocess_center<T>(tile, mean_image, params.config.input_h);
    std::vector<Prediction> p = forward<T>(params, std::span(&input, 1));
    return p[0].p_tumor;
}

/// SGD training over augmented, mean-subtracted crops with a class-balanced
/// sampler. Deterministic in the seed; returns the checkpoint with the best
/// validation accuracy.
inline TrainResult train_classifier(const std::vector<RasterImage>& train_tiles,
                                    const std::vector<int>& train_labels,
                                    const std::vector<RasterImage>& val_tiles,
                                    const std::vector<int>& val_labels, const ImageF& mean_image,
                                    const NetworkConfig& net_config, const TrainConfig& tc) {
    if (train_tiles.empty() || val_tiles.empty())
        throw ConfigError("train_classifier: empty train or validation split");
    if (train_tiles.size() != train_labels.size() || val_tiles.size() != val_labels.size())
        throw ConfigError("train_classifier: tiles/labels size mismatch");
    if (tc.learning_rate < 0 || tc.batch_size < 1 || tc.epochs < 1)
        throw ConfigError("train_classifier: bad training config");

    NetworkParams<double> params = init_network(net_config, derive_seed(tc.seed, "net-init"));
    NetworkParams<double> velocity = params.zeros_like();
    auto shapes = layer_shapes(net_config);

    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < train_labels.size(); ++i) {
        if (train_labels[i] != 0 && train_labels[i] != 1)
            throw ConfigError("train_classifier: labels must be 0 or 1");
        by_class[train_labels[i]].push_back(i);
    }
    const bool balanced = !by_class[0].empty() && !by_class[1].empty();

    auto accuracy = [&](const NetworkParams<double>& p, const std::vector<RasterImage>& tiles,
                        const std::vector<int>& labels) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < tiles.size(); ++i) {
            double p_tumor = predict_tile(p, tiles[i], mean_image);
            correct += ((p_tumor > 0.5) ? 1 : 0) == labels[i];
        }
        return static_cast<double>(correct) / static_cast<double>(tiles.size());
    };

    TrainResult result;
    result.best_epoch = -1;
    result.best_val_acc = -1.0;

    int steps_full = static_cast<int>((train_tiles.size() + tc.batch_size - 1) / tc.batch_size);
    int steps = tc.max_steps_per_epoch > 0 ? std::min(tc.max_steps_per_epoch, steps_full)
                                           : steps_full;
    std::vector<Tensor3<double>> batch;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        double lr = tc.learning_rate;
        if (tc.epochs >= 3) {
            if (epoch >= 2 * tc.epochs / 3)
                lr *= tc.lr_decay * tc.lr_decay;
            else if (epoch >= tc.epochs / 3)
                lr *= tc.lr_decay;
        }
        Rng rng(derive_seed(tc.seed, "epoch-" + std::to_string(epoch)));
        double loss_sum = 0.0;
        std::size_t seen = 0, seen_correct = 0;
        for (int step = 0; step < steps; ++step) {
            batch.clear();
            batch_labels.clear();
            for (int b = 0; b < tc.batch_size; ++b) {
                std::size_t idx;
                if (balanced) {
                    int cls = rng.bernoulli(0.5) ? 1 : 0;
                    idx = by_class[cls][rng.uniform_u64(by_class[cls].size())];
                } else {
                    idx = rng.uniform_u64(train_tiles.size());
                }
                const RasterImage& tile = train_tiles[idx];
                if (tile.width != mean_image.width || tile.height != mean_image.height)
                    throw ConfigError("train_classifier: tile size does not match the mean image");
                int max_off = tile.width - tc.crop_size;
                if (max_off < 0)
                    throw ConfigError("train_classifier: crop exceeds tile size");
                int ox = max_off == 0 ? 0 : static_cast<int>(rng.uniform_int(0, max_off));
                int oy = max_off == 0 ? 0 : static_cast<int>(rng.uniform_int(0, max_off));
                bool flip = rng.bernoulli(0.5);
                batch.push_back(preprocess_window(tile, mean_image, ox, oy, tc.crop_size, flip));
                batch_labels.push_back(train_labels[idx]);
            }
            LossAndGradients lg =
                loss_and_gradients(params, batch, batch_labels, tc.weight_decay);
            if (!std::isfinite(lg.loss))
                throw NumericError("train_classifier: loss diverged");
            loss_sum += lg.loss;
            // batch accuracy from the current forward pass
            std::vector<Prediction> preds = forward<double>(params, batch);
            for (std::size_t b = 0; b < preds.size(); ++b)
                seen_correct += ((preds[b].p_tumor > 0.5) ? 1 : 0) == batch_labels[b];
            seen += preds.size();
            sgd_step(params, lg.gradients, velocity, lr, tc.momentum);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / steps;
        em.train_acc = tc.full_train_eval ? accuracy(params, train_tiles, train_labels)
                                          : static_cast<double>(seen_correct) / seen;
        em.val_acc = accuracy(params, val_tiles, val_labels);
        result.metrics.push_back(em);
        if (em.val_acc > result.best_val_acc) {
            result.best_val_acc = em.val_acc;
            result.best_epoch = epoch;
            result.params = params;
        }
        if (em.train_acc >= tc.early_stop_train_acc)
            break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Model file: magic, version, config JSON, flat little-endian float64 arrays
// in layer order (weights then bias per learned layer), CRC-32 of the payload.
// ---------------------------------------------------------------------------

inline void save_model(const std::filesystem::path& path, const NetworkParams<double>& params) {
    std::string config = params.config.to_json().dump();
    std::vector<char> payload;
    auto append = [&](const void* data, std::size_t size) {
        const char* p = static_cast<const char*>(data);
        payload.insert(payload.end(), p, p + size);
    };
    std::uint32_t version = 1;
    std::uint32_t config_len = static_cast<std::uint32_t>(config.size());
    append(&version, 4);
    append(&config_len, 4);
    append(config.data(), config.size());
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        append(params.weights[i].data(), params.weights[i].size() * sizeof(double));
        append(params.biases[i].data(), params.biases[i].size() * sizeof(double));
    }
    std::uint32_t crc = crc32(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write model file: " + path.string());
    out.write("SNET", 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&crc), 4);
}

inline NetworkParams<double> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("model file not found: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "SNET", 4) != 0)
        throw ConfigError("not a model file: " + path.string());
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data() + 4, bytes.size() - 8) != stored_crc)
        throw ConfigError("model file checksum mismatch: " + path.string());

    std::size_t off = 4;
    auto read = [&](void* dst, std::size_t size) {
        if (off + size > bytes.size() - 4)
            throw ConfigError("model file truncated: " + path.string());
        std::memcpy(dst, bytes.data() + off, size);
        off += size;
    };
    std::uint32_t version, config_len;
    read(&version, 4);
    if (version != 1)
        throw ConfigError("unsupported model version");
    read(&config_len, 4);
    std::string config_json(config_len, '\0');
    read(config_json.data(), config_len);

    NetworkParams<double> params;
    params.config = NetworkConfig::from_json(nlohmann::json::parse(config_json));
    std::vector<LayerParamSizes> sizes = param_sizes(params.config);
    params.weights.resize(sizes.size());
    params.biases.resize(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        params.weights[i].resize(sizes[i].weights);
        params.biases[i].resize(sizes[i].biases);
        read(params.weights[i].data(), params.weights[i].size() * sizeof(double));
        read(params.biases[i].data(), params.biases[i].size() * sizeof(double));
    }
    return params;
}

inline void write_metrics_log(const std::filesystem::path& path,
                              const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write metrics log: " + path.string());
    out << "epoch\ttrain_loss\ttrain_acc\tval_acc\n";
    out.precision(17);
    for (const EpochMetrics& m : metrics)
        out << m.epoch << '\t' << m.train_loss << '\t' << m.train_acc << '\t' << m.val_acc << '\n';
}

} // namespace sentinel
