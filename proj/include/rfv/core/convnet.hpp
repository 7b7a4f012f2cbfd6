#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "rfv/core/image.hpp"
#include "rfv/core/tensor.hpp"

namespace rfv {

struct ConvLayerSpec {
  int out_channels = 16;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  bool operator==(const ConvLayerSpec &) const = default;
};

/// Layer layout of the embedding network: a stack of conv+ReLU blocks followed by a
/// bias-free linear embedding layer (no activation) whose weight rows are kept at unit L2 norm.
struct ArchitectureSpec {
  ImageShape input;
  std::vector<ConvLayerSpec> conv_layers;
  int embedding_dim = 64;

  /// Four stride-2 3x3 blocks (16, 32, 32, 64 channels) and a 64-d embedding.
  static ArchitectureSpec standard(ImageShape input, int blocks = 4, int embedding_dim = 64);

  /// Output shape of every conv block, in order.
  [[nodiscard]] std::vector<ImageShape> block_shapes() const;
  [[nodiscard]] std::size_t feature_size() const;
  void validate() const;
  bool operator==(const ArchitectureSpec &) const = default;
};

void to_json(nlohmann::json &j, const ArchitectureSpec &spec);
void from_json(const nlohmann::json &j, ArchitectureSpec &spec);

/// Trainable tensors of a ConvNet (the model's theta).
template <typename Scalar> struct NetParameters {
  std::vector<Matrix<Scalar>> conv_weights; // out x (in * k * k)
  std::vector<Vector<Scalar>> conv_biases;
  Matrix<Scalar> embedding_weights; // embedding_dim x feature_size

  [[nodiscard]] NetParameters zeros_like() const;
  void set_zero();
  [[nodiscard]] std::size_t size() const;
  void add_scaled(const NetParameters &other, Scalar scale);
  [[nodiscard]] Scalar squared_norm() const;
  [[nodiscard]] bool all_finite() const;

  /// Visits every tensor as a flat span, in a fixed order.
  template <typename Fn> void for_each_tensor(Fn &&fn) {
    for (std::size_t l = 0; l < conv_weights.size(); ++l) {
      fn(conv_weights[l].data(), static_cast<std::size_t>(conv_weights[l].size()));
      fn(conv_biases[l].data(), static_cast<std::size_t>(conv_biases[l].size()));
    }
    fn(embedding_weights.data(), static_cast<std::size_t>(embedding_weights.size()));
  }
  template <typename Fn> void for_each_tensor(Fn &&fn) const {
    for (std::size_t l = 0; l < conv_weights.size(); ++l) {
      fn(conv_weights[l].data(), static_cast<std::size_t>(conv_weights[l].size()));
      fn(conv_biases[l].data(), static_cast<std::size_t>(conv_biases[l].size()));
    }
    fn(embedding_weights.data(), static_cast<std::size_t>(embedding_weights.size()));
  }

  [[nodiscard]] std::vector<Scalar> flatten() const;
  void assign(const std::vector<Scalar> &flat);

  template <typename Other> [[nodiscard]] NetParameters<Other> cast() const {
    NetParameters<Other> out;
    for (const auto &w : conv_weights)
      out.conv_weights.push_back(w.template cast<Other>());
    for (const auto &b : conv_biases)
      out.conv_biases.push_back(b.template cast<Other>());
    out.embedding_weights = embedding_weights.template cast<Other>();
    return out;
  }
};

/// Small convolutional embedding network F with hand-written reverse mode.
///
/// Batches are passed as (C*H*W) x N matrices, one CHW image per column. Internally each
/// activation is a (N*H*W) x C matrix so every conv is a single GEMM over the batch.
/// All methods are const apart from parameter access; concurrent forward/backward calls on
/// one instance are safe as long as nobody mutates the parameters.
template <typename Scalar> class ConvNet {
public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  /// Cached activations of one forward pass.
  struct Tape {
    Eigen::Index batch = 0;
    std::vector<Mat> columns;     // im2col per block, (N*Ho*Wo) x (Cin*k*k)
    std::vector<Mat> activations; // post-ReLU output per block, (N*Ho*Wo) x Cout
    Mat features;                 // flattened last block, feature_size x N
  };

  ConvNet() = default;
  ConvNet(ArchitectureSpec spec, std::uint64_t seed);
  ConvNet(ArchitectureSpec spec, NetParameters<Scalar> params);

  [[nodiscard]] const ArchitectureSpec &architecture() const { return spec_; }
  [[nodiscard]] const NetParameters<Scalar> &parameters() const { return params_; }
  NetParameters<Scalar> &parameters() { return params_; }

  /// Embeddings (embedding_dim x N). Records activations into `tape` when given.
  [[nodiscard]] Mat forward(const Mat &input, Tape *tape = nullptr) const;

  /// Reverse pass for d(loss)/d(embeddings). Parameter gradients are accumulated into
  /// `param_grads` and the input gradient (same layout as the forward input) is written
  /// to `input_grad`; either may be null.
  void backward(const Tape &tape, const Mat &grad_embeddings, NetParameters<Scalar> *param_grads,
                Mat *input_grad) const;

  /// Rescales every row of the embedding layer to unit L2 norm.
  void normalize_embedding_rows();
  [[nodiscard]] Scalar max_row_norm_deviation() const;

  template <typename Other> [[nodiscard]] ConvNet<Other> cast() const {
    return ConvNet<Other>(spec_, params_.template cast<Other>());
  }

private:
  ArchitectureSpec spec_;
  std::vector<ImageShape> shapes_;
  NetParameters<Scalar> params_;
};

extern template struct NetParameters<float>;
extern template struct NetParameters<double>;
extern template class ConvNet<float>;
extern template class ConvNet<double>;

/// The embedding model F used everywhere outside of precision tests.
using EmbeddingModel = ConvNet<float>;

/// F(x) for a single image; throws ConfigError when the image shape does not match the model.
Embedding embed(const EmbeddingModel &model, const LabeledImage &image);
/// Embeddings for several images, one column each.
MatrixF embed_all(const EmbeddingModel &model, std::span<const LabeledImage> images);

/// ||a - b||_2; throws ShapeError on dimension mismatch.
double feature_distance(const Embedding &a, const Embedding &b);

} // namespace rfv
