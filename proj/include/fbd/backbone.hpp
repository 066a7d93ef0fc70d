#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbd/errors.hpp"
#include "fbd/rng.hpp"

namespace fbd {

/// Flatten a matrix row by row (time-major for windows).
inline Eigen::VectorXd flatten_rows(const Eigen::MatrixXd& m) {
    Eigen::VectorXd v(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v(k++) = m(i, j);
    return v;
}

inline Eigen::MatrixXd unflatten_rows(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols)
        throw ShapeMismatch("unflatten_rows: vector of size " + std::to_string(v.size()) +
                            " cannot fill " + std::to_string(rows) + "x" + std::to_string(cols));
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v(k++);
    return m;
}

/// Intermediate activations captured by forward() and consumed by backward().
struct ForwardCache {
    Eigen::VectorXd input_flat;
    std::vector<Eigen::VectorXd> hidden;  // post-tanh activations, one per hidden layer
    double params_checksum = 0.0;
    bool valid = false;
};

struct BackboneGrads {
    Eigen::VectorXd params;   // same packing as the parameter vector
    Eigen::MatrixXd input;    // in_rows x in_cols
};

enum class BackboneKind { linear_direct = 0, mlp = 1 };

inline std::string to_string(BackboneKind kind) {
    return kind == BackboneKind::linear_direct ? "linear" : "mlp";
}

inline BackboneKind backbone_kind_from_string(const std::string& name) {
    if (name == "linear") return BackboneKind::linear_direct;
    if (name == "mlp") return BackboneKind::mlp;
    throw InvalidConfig("unknown backbone \"" + name + "\" (expected linear or mlp)");
}

/**
 * A trainable map from an input window (in_rows x in_cols) to a forecast
 * block (out_rows x out_cols). Parameters live in an external flat vector so
 * several backbones can share one optimizer state.
 */
class Backbone {
  public:
    Backbone(Eigen::Index in_rows, Eigen::Index in_cols, Eigen::Index out_rows, Eigen::Index out_cols)
        : in_rows_(in_rows), in_cols_(in_cols), out_rows_(out_rows), out_cols_(out_cols) {
        if (in_rows < 1 || in_cols < 1 || out_rows < 1 || out_cols < 1)
            throw DimensionMismatch("backbone: all dimensions must be >= 1");
    }
    virtual ~Backbone() = default;

    Eigen::Index in_rows() const { return in_rows_; }
    Eigen::Index in_cols() const { return in_cols_; }
    Eigen::Index out_rows() const { return out_rows_; }
    Eigen::Index out_cols() const { return out_cols_; }
    Eigen::Index in_total() const { return in_rows_ * in_cols_; }
    Eigen::Index out_total() const { return out_rows_ * out_cols_; }

    virtual Eigen::Index param_size() const = 0;
    virtual BackboneKind kind() const = 0;

    /// Glorot-uniform weights, zero biases; draw order is part of the contract.
    virtual Eigen::VectorXd init_params(RngStream& rng) const = 0;

    virtual Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& input,
                                    ForwardCache& cache) const = 0;

    Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& input) const {
        ForwardCache cache;
        return forward(params, input, cache);
    }

    virtual BackboneGrads backward(const Eigen::VectorXd& params, const ForwardCache& cache,
                                   const Eigen::MatrixXd& grad_output) const = 0;

  protected:
    void check_params(const Eigen::VectorXd& params) const {
        if (params.size() != param_size())
            throw DimensionMismatch("backbone: expected " + std::to_string(param_size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }

    void check_input(const Eigen::MatrixXd& input) const {
        if (input.rows() != in_rows_ || input.cols() != in_cols_)
            throw ShapeMismatch("backbone: expected input " + std::to_string(in_rows_) + "x" +
                                std::to_string(in_cols_) + ", got " + std::to_string(input.rows()) +
                                "x" + std::to_string(input.cols()));
    }

    void check_cache(const Eigen::VectorXd& params, const ForwardCache& cache,
                     const Eigen::MatrixXd& grad_output) const {
        if (!cache.valid) throw StaleCache("backbone: backward() called without a forward() cache");
        if (cache.params_checksum != params.sum())
            throw StaleCache("backbone: cache was built with different parameters");
        if (grad_output.rows() != out_rows_ || grad_output.cols() != out_cols_)
            throw ShapeMismatch("backbone: grad_output must be " + std::to_string(out_rows_) + "x" +
                                std::to_string(out_cols_));
    }

    Eigen::Index in_rows_, in_cols_, out_rows_, out_cols_;
};

namespace detail {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline void glorot_fill(Eigen::Ref<Eigen::VectorXd> flat_weights, Eigen::Index fan_in,
                        Eigen::Index fan_out, RngStream& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index k = 0; k < flat_weights.size(); ++k)
        flat_weights(k) = (2.0 * rng.uniform() - 1.0) * limit;
}

}  // namespace detail

/**
 * Single affine map: flatten the window row-major, multiply by a weight
 * matrix, add a bias, reshape. Parameters pack as [W row-major | b] with
 * W of shape in_total x out_total.
 */
class LinearBackbone : public Backbone {
  public:
    using Backbone::Backbone;
    using Backbone::forward;

    Eigen::Index param_size() const override { return in_total() * out_total() + out_total(); }
    BackboneKind kind() const override { return BackboneKind::linear_direct; }

    Eigen::VectorXd init_params(RngStream& rng) const override {
        Eigen::VectorXd params = Eigen::VectorXd::Zero(param_size());
        detail::glorot_fill(params.head(in_total() * out_total()), in_total(), out_total(), rng);
        return params;
    }

    Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& input,
                            ForwardCache& cache) const override {
        check_params(params);
        check_input(input);
        cache.input_flat = flatten_rows(input);
        cache.hidden.clear();
        cache.params_checksum = params.sum();
        cache.valid = true;

        detail::RowMajorMap w(params.data(), in_total(), out_total());
        const Eigen::VectorXd b = params.tail(out_total());
        const Eigen::VectorXd out = w.transpose() * cache.input_flat + b;
        return unflatten_rows(out, out_rows_, out_cols_);
    }

    BackboneGrads backward(const Eigen::VectorXd& params, const ForwardCache& cache,
                           const Eigen::MatrixXd& grad_output) const override {
        check_params(params);
        check_cache(params, cache, grad_output);

        const Eigen::VectorXd g = flatten_rows(grad_output);
        BackboneGrads grads;
        grads.params.setZero(param_size());
        detail::RowMajorMutMap gw(grads.params.data(), in_total(), out_total());
        gw = cache.input_flat * g.transpose();
        grads.params.tail(out_total()) = g;

        detail::RowMajorMap w(params.data(), in_total(), out_total());
        grads.input = unflatten_rows(w * g, in_rows_, in_cols_);
        return grads;
    }
};

/**
 * Fully connected network with one or two tanh hidden layers of equal width
 * and a linear head. Parameters pack layer by layer as [W row-major | b].
 */
class MlpBackbone : public Backbone {
  public:
    using Backbone::forward;

    MlpBackbone(Eigen::Index in_rows, Eigen::Index in_cols, Eigen::Index out_rows,
                Eigen::Index out_cols, Eigen::Index hidden, Eigen::Index layers)
        : Backbone(in_rows, in_cols, out_rows, out_cols), hidden_(hidden), layers_(layers) {
        if (hidden < 1) throw InvalidConfig("mlp: hidden width must be >= 1");
        if (layers < 1 || layers > 2) throw InvalidConfig("mlp: hidden layer count must be 1 or 2");
    }

    Eigen::Index hidden() const { return hidden_; }
    Eigen::Index layers() const { return layers_; }

    Eigen::Index param_size() const override {
        Eigen::Index total = 0;
        for (Eigen::Index l = 0; l <= layers_; ++l) total = total + fan_in(l) * fan_out(l) + fan_out(l);
        return total;
    }

    BackboneKind kind() const override { return BackboneKind::mlp; }

    Eigen::VectorXd init_params(RngStream& rng) const override {
        Eigen::VectorXd params = Eigen::VectorXd::Zero(param_size());
        for (Eigen::Index l = 0; l <= layers_; ++l)
            detail::glorot_fill(params.segment(weight_offset(l), fan_in(l) * fan_out(l)), fan_in(l),
                                fan_out(l), rng);
        return params;
    }

    Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& input,
                            ForwardCache& cache) const override {
        check_params(params);
        check_input(input);
        cache.input_flat = flatten_rows(input);
        cache.hidden.clear();
        cache.params_checksum = params.sum();
        cache.valid = true;

        Eigen::VectorXd h = cache.input_flat;
        for (Eigen::Index l = 0; l < layers_; ++l) {
            h = (layer_weights(params, l).transpose() * h + layer_bias(params, l)).array().tanh();
            cache.hidden.push_back(h);
        }
        const Eigen::VectorXd out = layer_weights(params, layers_).transpose() * h + layer_bias(params, layers_);
        return unflatten_rows(out, out_rows_, out_cols_);
    }

    BackboneGrads backward(const Eigen::VectorXd& params, const ForwardCache& cache,
                           const Eigen::MatrixXd& grad_output) const override {
        check_params(params);
        check_cache(params, cache, grad_output);
        if (static_cast<Eigen::Index>(cache.hidden.size()) != layers_)
            throw StaleCache("mlp: cache depth does not match the network");

        BackboneGrads grads;
        grads.params.setZero(param_size());

        Eigen::VectorXd g = flatten_rows(grad_output);
        for (Eigen::Index l = layers_; l >= 0; --l) {
            const Eigen::VectorXd& in =
                l == 0 ? cache.input_flat : cache.hidden[static_cast<std::size_t>(l - 1)];
            detail::RowMajorMutMap gw(grads.params.data() + weight_offset(l), fan_in(l), fan_out(l));
            gw = in * g.transpose();
            grads.params.segment(bias_offset(l), fan_out(l)) = g;
            g = layer_weights(params, l) * g;
            if (l > 0) {
                const auto& act = cache.hidden[static_cast<std::size_t>(l - 1)];
                g.array() *= 1.0 - act.array().square();
            }
        }
        grads.input = unflatten_rows(g, in_rows_, in_cols_);
        return grads;
    }

  private:
    Eigen::Index fan_in(Eigen::Index layer) const { return layer == 0 ? in_total() : hidden_; }
    Eigen::Index fan_out(Eigen::Index layer) const { return layer == layers_ ? out_total() : hidden_; }

    Eigen::Index weight_offset(Eigen::Index layer) const {
        Eigen::Index off = 0;
        for (Eigen::Index l = 0; l < layer; ++l) off += fan_in(l) * fan_out(l) + fan_out(l);
        return off;
    }
    Eigen::Index bias_offset(Eigen::Index layer) const {
        return weight_offset(layer) + fan_in(layer) * fan_out(layer);
    }

    detail::RowMajorMap layer_weights(const Eigen::VectorXd& params, Eigen::Index layer) const {
        return detail::RowMajorMap(params.data() + weight_offset(layer), fan_in(layer), fan_out(layer));
    }
    Eigen::VectorXd layer_bias(const Eigen::VectorXd& params, Eigen::Index layer) const {
        return params.segment(bias_offset(layer), fan_out(layer));
    }

    Eigen::Index hidden_, layers_;
};

struct BackboneSpec {
    BackboneKind kind = BackboneKind::linear_direct;
    Eigen::Index hidden = 16;
    Eigen::Index layers = 1;
};

inline std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec, Eigen::Index in_rows,
                                               Eigen::Index in_cols, Eigen::Index out_rows,
                                               Eigen::Index out_cols) {
    switch (spec.kind) {
        case BackboneKind::linear_direct:
            return std::make_unique<LinearBackbone>(in_rows, in_cols, out_rows, out_cols);
        case BackboneKind::mlp:
            return std::make_unique<MlpBackbone>(in_rows, in_cols, out_rows, out_cols, spec.hidden,
                                                 spec.layers);
    }
    throw InvalidConfig("unknown backbone kind");
}

}  // namespace fbd
