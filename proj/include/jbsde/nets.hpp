#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/rng.hpp"

namespace jbsde::nets {

enum class Activation { Sigmoid, Tanh };

/// Scalar-output feedforward network: affine maps with sigmoid (or tanh)
/// hidden activations and an identity output layer. At least one hidden
/// layer is required.
class FeedForwardNet {
public:
    FeedForwardNet() = default;
    FeedForwardNet(std::vector<int> dims, Activation hidden);

    const std::vector<int>& dims() const { return dims_; }
    Activation activation() const { return act_; }
    int input_dim() const { return dims_.front(); }
    int layer_count() const { return static_cast<int>(dims_.size()) - 1; }

    Mat& weight(int l) { return W_[l]; }
    const Mat& weight(int l) const { return W_[l]; }
    Vec& bias(int l) { return b_[l]; }
    const Vec& bias(int l) const { return b_[l]; }

    /// Standard affine-map parameter count sum_l v_l (1 + v_{l-1}).
    size_t num_params() const;
    /// Alternative grouped count sum_{l=0}^{L} v_l (1 + v_l), reported for
    /// comparison alongside the standard count.
    size_t grouped_param_count() const;

    void to_flat(std::span<double> out) const;
    void from_flat(std::span<const double> in);

    double forward(std::span<const double> x) const;
    Vec grad_x(std::span<const double> x) const;

private:
    std::vector<int> dims_;
    Activation act_ = Activation::Sigmoid;
    std::vector<Mat> W_;
    std::vector<Vec> b_;

    friend class NetTape;
};

/// Scratch buffers for one net evaluation with recorded activations; reused
/// across calls to avoid allocation in the training loop.
class NetTape {
public:
    void bind(const FeedForwardNet& net);

    /// Forward pass; activations stay recorded for the calls below.
    double forward(std::span<const double> x);

    /// Gradient in x from the recorded activations.
    void grad_x(std::span<double> out) const;

    /// Directional derivative grad U(x)^T v; records the tangent pass.
    double dir_deriv(std::span<const double> v);

    /// Accumulates coeff * dU/dparams into grad (flat layout of the net).
    void accumulate_param_grad_value(double coeff, std::span<double> grad) const;

    /// Accumulates coeff * d(grad U(x)^T v)/dparams into grad; requires a
    /// preceding dir_deriv on the same forward pass.
    void accumulate_param_grad_dir(double coeff, std::span<double> grad) const;

private:
    const FeedForwardNet* net_ = nullptr;
    std::vector<Vec> a_;   // a_[0] = input, a_[l] activations
    std::vector<Vec> t_;   // tangents of a_
    std::vector<Vec> s_;   // tangents of the affine outputs
    mutable std::vector<Vec> bz_, bs_, ba_, bt_;
    double act(double z) const;
};

struct GrowthConstants {
    double A = 0.0;
    double B = 0.0;
    double C = 0.0;
};

/// Closed-form growth bounds: bounded hidden activations give
/// |U(x)|^2 <= A with B = 0, and a gradient bound C from the layer norms
/// times the activation-derivative bound per hidden layer.
GrowthConstants growth_constants(const FeedForwardNet& net);

/// Xavier-uniform weights, zero biases; deterministic per generator.
FeedForwardNet init_net(std::vector<int> dims, Activation hidden, Rng& rng);

/// One network per time step plus the trainable initial value.
struct NetFamily {
    std::vector<FeedForwardNet> nets;
    double y0 = 0.0;

    size_t params_per_net() const { return nets.empty() ? 0 : nets.front().num_params(); }
    /// Flat layout: [y0, net_0 params, net_1 params, ...].
    size_t total_params() const { return 1 + nets.size() * params_per_net(); }
    void to_flat(std::span<double> out) const;
    void from_flat(std::span<const double> in);
};

NetFamily init_family(int steps, std::vector<int> dims, Activation hidden, uint64_t seed);

/// Checkpoint: one JSON header line, then raw little-endian doubles.
/// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const NetFamily& family, uint64_t seed);
NetFamily load_checkpoint(const std::string& path, uint64_t* seed_out = nullptr);

}  // namespace jbsde::nets
