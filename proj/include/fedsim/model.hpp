#pragma once

#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedsim {

enum class ArchKind { linear, mlp, cnn };

inline constexpr std::string_view to_string(ArchKind k) noexcept {
    switch (k) {
        case ArchKind::linear: return "linear";
        case ArchKind::mlp: return "mlp";
        case ArchKind::cnn: return "cnn";
    }
    return "?";
}

struct ModelArch {
    ArchKind kind = ArchKind::mlp;
    // Hidden width of the mlp, or of the first fully-connected layer of the cnn.
    std::size_t hidden = 32;
    std::size_t conv1_channels = 8;
    std::size_t conv2_channels = 16;

    bool operator==(const ModelArch&) const = default;
};

inline constexpr std::size_t conv_kernel = 5;
inline constexpr std::size_t pool_size = 2;

struct ModelShape {
    ModelArch arch;
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::size_t image_rows = 0;
    std::size_t image_cols = 0;

    bool operator==(const ModelShape&) const = default;
};

struct ModelParams {
    std::vector<double> values;
    ModelShape shape;

    bool operator==(const ModelParams&) const = default;
};

// Softmax classifier over one of three architectures:
//   linear: logits = W x + b
//   mlp:    logits = W2 relu(W1 x + b1) + b2
//   cnn:    conv5x5 -> relu -> conv5x5 -> relu -> maxpool2x2 -> fc -> relu -> fc
// Parameters live in one flat vector; each weight matrix is row-major
// (out x in) followed by its bias.
class Network {
public:
    explicit Network(ModelShape shape) : shape_(std::move(shape)) {
        if (shape_.classes < 2) throw std::invalid_argument("model needs at least 2 classes");
        if (shape_.input_dim < 1) throw std::invalid_argument("model needs a positive input dimension");
        std::size_t offset = 0;
        std::size_t dense_in = shape_.input_dim;
        if (shape_.arch.kind == ArchKind::cnn) {
            if (shape_.image_rows * shape_.image_cols != shape_.input_dim)
                throw std::invalid_argument("cnn needs image dimensions matching the input");
            if (shape_.image_rows < 2 * (conv_kernel - 1) + pool_size ||
                shape_.image_cols < 2 * (conv_kernel - 1) + pool_size)
                throw std::invalid_argument("image too small for the cnn");
            const auto c1 = shape_.arch.conv1_channels, c2 = shape_.arch.conv2_channels;
            if (c1 < 1 || c2 < 1) throw std::invalid_argument("cnn channel counts must be positive");
            conv1_ = {1, c1, shape_.image_rows, shape_.image_cols, offset};
            offset += c1 * conv_kernel * conv_kernel + c1;
            conv2_ = {c1, c2, conv1_.out_rows(), conv1_.out_cols(), offset};
            offset += c2 * c1 * conv_kernel * conv_kernel + c2;
            pool_rows_ = conv2_.out_rows() / pool_size;
            pool_cols_ = conv2_.out_cols() / pool_size;
            dense_in = c2 * pool_rows_ * pool_cols_;
        }
        std::vector<std::size_t> widths{dense_in};
        if (shape_.arch.kind != ArchKind::linear) {
            if (shape_.arch.hidden < 1) throw std::invalid_argument("hidden width must be positive");
            widths.push_back(shape_.arch.hidden);
        }
        widths.push_back(shape_.classes);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            dense_.push_back({widths[l], widths[l + 1], offset});
            offset += widths[l] * widths[l + 1] + widths[l + 1];
        }
        param_count_ = offset;
    }

    const ModelShape& shape() const noexcept { return shape_; }
    std::size_t param_count() const noexcept { return param_count_; }

    // Layer widths, input first; convolutional stages report their flattened size.
    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims{shape_.input_dim};
        if (shape_.arch.kind == ArchKind::cnn) {
            dims.push_back(conv1_.out_channels * conv1_.out_rows() * conv1_.out_cols());
            dims.push_back(conv2_.out_channels * conv2_.out_rows() * conv2_.out_cols());
        }
        for (const auto& layer : dense_) dims.push_back(layer.out);
        return dims;
    }

    // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    ModelParams init(std::uint64_t seed) const {
        ModelParams p{std::vector<double>(param_count_, 0.0), shape_};
        auto gen = make_stream(seed, {stream::init});
        auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < count; ++i) p.values[offset + i] = u(gen);
        };
        if (shape_.arch.kind == ArchKind::cnn) {
            for (const auto* conv : {&conv1_, &conv2_}) {
                const auto fan_in = conv->in_channels * conv_kernel * conv_kernel;
                fill(conv->offset, conv->out_channels * fan_in, fan_in);
            }
        }
        for (const auto& layer : dense_) fill(layer.offset, layer.in * layer.out, layer.in);
        return p;
    }

    struct Workspace {
        std::vector<double> conv1_pre, conv1_act, conv2_pre, conv2_act, pooled;
        std::vector<std::size_t> pool_argmax;
        std::vector<std::vector<double>> pre, act;
        std::vector<double> delta, delta_prev, d_flat, d_conv2, d_conv1;
    };

    std::span<const double> logits(std::span<const double> params, std::span<const double> x, Workspace& ws) const {
        forward(params, x, ws);
        return ws.act.back();
    }

    std::size_t predict(std::span<const double> params, std::span<const double> x, Workspace& ws) const {
        auto z = logits(params, x, ws);
        return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    }

    // Cross-entropy of one sample; adds scale * d(loss)/d(params) into grad.
    double accumulate(std::span<const double> params, std::span<const double> x, std::size_t label, double scale,
                      std::span<double> grad, Workspace& ws) const {
        forward(params, x, ws);
        const auto& z = ws.act.back();
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        const double log_norm = zmax + std::log(sum);
        const double loss = log_norm - z[label];
        if (scale == 0.0) return loss;

        ws.delta.resize(z.size());
        for (std::size_t k = 0; k < z.size(); ++k)
            ws.delta[k] = scale * (std::exp(z[k] - log_norm) - (k == label ? 1.0 : 0.0));
        backward(params, x, grad, ws);
        return loss;
    }

private:
    struct Dense {
        std::size_t in, out, offset;
    };
    struct Conv {
        std::size_t in_channels, out_channels, in_rows, in_cols, offset;
        std::size_t out_rows() const noexcept { return in_rows - conv_kernel + 1; }
        std::size_t out_cols() const noexcept { return in_cols - conv_kernel + 1; }
        std::size_t weight(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const noexcept {
            return offset + ((o * in_channels + i) * conv_kernel + r) * conv_kernel + c;
        }
        std::size_t bias(std::size_t o) const noexcept {
            return offset + out_channels * in_channels * conv_kernel * conv_kernel + o;
        }
    };

    static void conv_forward(const Conv& cv, std::span<const double> params, std::span<const double> in,
                             std::vector<double>& pre, std::vector<double>& act) {
        const auto orows = cv.out_rows(), ocols = cv.out_cols();
        pre.assign(cv.out_channels * orows * ocols, 0.0);
        for (std::size_t o = 0; o < cv.out_channels; ++o) {
            double* out = pre.data() + o * orows * ocols;
            std::fill(out, out + orows * ocols, params[cv.bias(o)]);
            for (std::size_t i = 0; i < cv.in_channels; ++i) {
                const double* src = in.data() + i * cv.in_rows * cv.in_cols;
                for (std::size_t kr = 0; kr < conv_kernel; ++kr)
                    for (std::size_t kc = 0; kc < conv_kernel; ++kc) {
                        const double w = params[cv.weight(o, i, kr, kc)];
                        for (std::size_t r = 0; r < orows; ++r) {
                            const double* s = src + (r + kr) * cv.in_cols + kc;
                            double* t = out + r * ocols;
                            for (std::size_t c = 0; c < ocols; ++c) t[c] += w * s[c];
                        }
                    }
            }
        }
        act.resize(pre.size());
        for (std::size_t j = 0; j < pre.size(); ++j) act[j] = std::max(pre[j], 0.0);
    }

    // d_out holds dL/d(pre-activation); accumulates weight/bias gradients and,
    // when d_in is non-null, dL/d(input).
    static void conv_backward(const Conv& cv, std::span<const double> params, std::span<const double> in,
                              const std::vector<double>& d_out, std::span<double> grad, std::vector<double>* d_in) {
        const auto orows = cv.out_rows(), ocols = cv.out_cols();
        if (d_in) d_in->assign(cv.in_channels * cv.in_rows * cv.in_cols, 0.0);
        for (std::size_t o = 0; o < cv.out_channels; ++o) {
            const double* g = d_out.data() + o * orows * ocols;
            double bsum = 0.0;
            for (std::size_t j = 0; j < orows * ocols; ++j) bsum += g[j];
            grad[cv.bias(o)] += bsum;
            for (std::size_t i = 0; i < cv.in_channels; ++i) {
                const double* src = in.data() + i * cv.in_rows * cv.in_cols;
                double* dsrc = d_in ? d_in->data() + i * cv.in_rows * cv.in_cols : nullptr;
                for (std::size_t kr = 0; kr < conv_kernel; ++kr)
                    for (std::size_t kc = 0; kc < conv_kernel; ++kc) {
                        const auto widx = cv.weight(o, i, kr, kc);
                        const double w = params[widx];
                        double wsum = 0.0;
                        for (std::size_t r = 0; r < orows; ++r) {
                            const double* s = src + (r + kr) * cv.in_cols + kc;
                            const double* gr = g + r * ocols;
                            for (std::size_t c = 0; c < ocols; ++c) wsum += gr[c] * s[c];
                            if (dsrc) {
                                double* ds = dsrc + (r + kr) * cv.in_cols + kc;
                                for (std::size_t c = 0; c < ocols; ++c) ds[c] += w * gr[c];
                            }
                        }
                        grad[widx] += wsum;
                    }
            }
        }
    }

    void forward(std::span<const double> params, std::span<const double> x, Workspace& ws) const {
        if (params.size() != param_count_) throw shape_mismatch_error("parameter vector has the wrong length");
        if (x.size() != shape_.input_dim) throw shape_mismatch_error("sample has the wrong feature dimension");
        std::span<const double> input = x;
        if (shape_.arch.kind == ArchKind::cnn) {
            conv_forward(conv1_, params, x, ws.conv1_pre, ws.conv1_act);
            conv_forward(conv2_, params, ws.conv1_act, ws.conv2_pre, ws.conv2_act);
            const auto c2 = conv2_.out_channels, r2 = conv2_.out_rows(), q2 = conv2_.out_cols();
            ws.pooled.resize(c2 * pool_rows_ * pool_cols_);
            ws.pool_argmax.resize(ws.pooled.size());
            for (std::size_t ch = 0; ch < c2; ++ch)
                for (std::size_t r = 0; r < pool_rows_; ++r)
                    for (std::size_t c = 0; c < pool_cols_; ++c) {
                        std::size_t best = ch * r2 * q2 + (r * pool_size) * q2 + c * pool_size;
                        for (std::size_t dr = 0; dr < pool_size; ++dr)
                            for (std::size_t dc = 0; dc < pool_size; ++dc) {
                                const auto idx = ch * r2 * q2 + (r * pool_size + dr) * q2 + c * pool_size + dc;
                                if (ws.conv2_act[idx] > ws.conv2_act[best]) best = idx;
                            }
                        const auto out = (ch * pool_rows_ + r) * pool_cols_ + c;
                        ws.pooled[out] = ws.conv2_act[best];
                        ws.pool_argmax[out] = best;
                    }
            input = ws.pooled;
        }
        ws.pre.resize(dense_.size());
        ws.act.resize(dense_.size());
        for (std::size_t l = 0; l < dense_.size(); ++l) {
            const auto& layer = dense_[l];
            auto& z = ws.pre[l];
            z.resize(layer.out);
            const double* w = params.data() + layer.offset;
            const double* b = w + layer.in * layer.out;
            for (std::size_t o = 0; o < layer.out; ++o) {
                double s = b[o];
                const double* row = w + o * layer.in;
                for (std::size_t i = 0; i < layer.in; ++i) s += row[i] * input[i];
                z[o] = s;
            }
            auto& a = ws.act[l];
            a = z;
            if (l + 1 < dense_.size())
                for (auto& v : a) v = std::max(v, 0.0);
            input = a;
        }
    }

    void backward(std::span<const double> params, std::span<const double> x, std::span<double> grad,
                  Workspace& ws) const {
        const bool cnn = shape_.arch.kind == ArchKind::cnn;
        for (std::size_t l = dense_.size(); l-- > 0;) {
            const auto& layer = dense_[l];
            std::span<const double> input = l > 0 ? std::span<const double>(ws.act[l - 1])
                                                  : (cnn ? std::span<const double>(ws.pooled) : x);
            const double* w = params.data() + layer.offset;
            double* gw = grad.data() + layer.offset;
            double* gb = gw + layer.in * layer.out;
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double d = ws.delta[o];
                if (d == 0.0) continue;
                gb[o] += d;
                double* grow = gw + o * layer.in;
                for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * input[i];
            }
            if (l == 0 && !cnn) break;
            ws.delta_prev.assign(layer.in, 0.0);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double d = ws.delta[o];
                if (d == 0.0) continue;
                const double* row = w + o * layer.in;
                for (std::size_t i = 0; i < layer.in; ++i) ws.delta_prev[i] += d * row[i];
            }
            if (l > 0)
                for (std::size_t i = 0; i < layer.in; ++i)
                    if (ws.pre[l - 1][i] <= 0.0) ws.delta_prev[i] = 0.0;
            std::swap(ws.delta, ws.delta_prev);
        }
        if (!cnn) return;

        // ws.delta now holds dL/d(pooled)
        ws.d_conv2.assign(ws.conv2_pre.size(), 0.0);
        for (std::size_t j = 0; j < ws.pooled.size(); ++j) ws.d_conv2[ws.pool_argmax[j]] += ws.delta[j];
        for (std::size_t j = 0; j < ws.d_conv2.size(); ++j)
            if (ws.conv2_pre[j] <= 0.0) ws.d_conv2[j] = 0.0;
        conv_backward(conv2_, params, ws.conv1_act, ws.d_conv2, grad, &ws.d_conv1);
        for (std::size_t j = 0; j < ws.d_conv1.size(); ++j)
            if (ws.conv1_pre[j] <= 0.0) ws.d_conv1[j] = 0.0;
        conv_backward(conv1_, params, x, ws.d_conv1, grad, nullptr);
    }

    ModelShape shape_;
    Conv conv1_{}, conv2_{};
    std::size_t pool_rows_ = 0, pool_cols_ = 0;
    std::vector<Dense> dense_;
    std::size_t param_count_ = 0;
};

inline ModelShape shape_for(const ModelArch& arch, const Dataset& ds) {
    return ModelShape{arch, ds.dim, ds.num_classes, ds.image_rows, ds.image_cols};
}

// Mean cross-entropy over `batch` and its gradient.
inline double batch_loss_and_gradient(const Network& net, std::span<const double> params, const Dataset& ds,
                                      std::span<const std::size_t> batch, std::vector<double>& grad,
                                      Network::Workspace& ws) {
    grad.assign(net.param_count(), 0.0);
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (auto i : batch)
        loss += net.accumulate(params, ds.row(i), static_cast<std::size_t>(ds.labels[i]), scale, grad, ws);
    return loss * scale;
}

inline double mean_loss(const Network& net, std::span<const double> params, const Dataset& ds,
                        std::span<const std::size_t> samples) {
    Network::Workspace ws;
    std::vector<double> scratch(net.param_count());
    double loss = 0.0;
    for (auto i : samples)
        loss += net.accumulate(params, ds.row(i), static_cast<std::size_t>(ds.labels[i]), 0.0, scratch, ws);
    return loss / static_cast<double>(samples.size());
}

}  // namespace fedsim
