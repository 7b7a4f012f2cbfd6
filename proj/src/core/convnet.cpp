#include "rfv/core/convnet.hpp"

#include <cmath>
#include <random>

namespace rfv {

ArchitectureSpec ArchitectureSpec::standard(ImageShape input, int blocks, int embedding_dim) {
  static constexpr int kChannels[] = {16, 32, 32, 64, 64, 128};
  ArchitectureSpec spec;
  spec.input = input;
  spec.embedding_dim = embedding_dim;
  for (int i = 0; i < blocks; ++i)
    spec.conv_layers.push_back(ConvLayerSpec{kChannels[std::min(i, 5)], 3, 2, 1});
  spec.validate();
  return spec;
}

std::vector<ImageShape> ArchitectureSpec::block_shapes() const {
  std::vector<ImageShape> out;
  ImageShape cur = input;
  for (const auto &l : conv_layers) {
    ImageShape next;
    next.height = (cur.height + 2 * l.padding - l.kernel) / l.stride + 1;
    next.width = (cur.width + 2 * l.padding - l.kernel) / l.stride + 1;
    next.channels = l.out_channels;
    out.push_back(next);
    cur = next;
  }
  return out;
}

std::size_t ArchitectureSpec::feature_size() const {
  const auto shapes = block_shapes();
  return shapes.empty() ? input.size() : shapes.back().size();
}

void ArchitectureSpec::validate() const {
  if (input.height <= 0 || input.width <= 0 || input.channels <= 0)
    throw ConfigError("architecture input shape must be positive");
  if (embedding_dim <= 0)
    throw ConfigError("embedding_dim must be positive");
  ImageShape cur = input;
  for (const auto &l : conv_layers) {
    if (l.out_channels <= 0 || l.kernel <= 0 || l.stride <= 0 || l.padding < 0)
      throw ConfigError("invalid conv layer parameters");
    if (cur.height + 2 * l.padding < l.kernel || cur.width + 2 * l.padding < l.kernel)
      throw ConfigError("conv kernel larger than its padded input " + cur.to_string());
    cur.height = (cur.height + 2 * l.padding - l.kernel) / l.stride + 1;
    cur.width = (cur.width + 2 * l.padding - l.kernel) / l.stride + 1;
    cur.channels = l.out_channels;
  }
}

void to_json(nlohmann::json &j, const ArchitectureSpec &spec) {
  j = nlohmann::json{{"input", {spec.input.height, spec.input.width, spec.input.channels}},
                     {"embedding_dim", spec.embedding_dim},
                     {"conv_layers", nlohmann::json::array()}};
  for (const auto &l : spec.conv_layers)
    j["conv_layers"].push_back(
        {{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding}});
}

void from_json(const nlohmann::json &j, ArchitectureSpec &spec) {
  const auto &in = j.at("input");
  spec.input = ImageShape{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
  spec.embedding_dim = j.at("embedding_dim").get<int>();
  spec.conv_layers.clear();
  for (const auto &l : j.at("conv_layers"))
    spec.conv_layers.push_back(ConvLayerSpec{l.at("out_channels").get<int>(), l.at("kernel").get<int>(),
                                             l.at("stride").get<int>(), l.at("padding").get<int>()});
  spec.validate();
}

// ---------------------------------------------------------------------------
// NetParameters

template <typename S> NetParameters<S> NetParameters<S>::zeros_like() const {
  NetParameters out = *this;
  out.set_zero();
  return out;
}

template <typename S> void NetParameters<S>::set_zero() {
  for_each_tensor([](S *p, std::size_t n) { std::fill(p, p + n, S(0)); });
}

template <typename S> std::size_t NetParameters<S>::size() const {
  std::size_t total = 0;
  for_each_tensor([&](const S *, std::size_t n) { total += n; });
  return total;
}

template <typename S> void NetParameters<S>::add_scaled(const NetParameters &other, S scale) {
  for (std::size_t l = 0; l < conv_weights.size(); ++l) {
    conv_weights[l] += scale * other.conv_weights[l];
    conv_biases[l] += scale * other.conv_biases[l];
  }
  embedding_weights += scale * other.embedding_weights;
}

template <typename S> S NetParameters<S>::squared_norm() const {
  S total = 0;
  for_each_tensor([&](const S *p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      total += p[i] * p[i];
  });
  return total;
}

template <typename S> bool NetParameters<S>::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const S *p, std::size_t n) {
    for (std::size_t i = 0; i < n && ok; ++i)
      ok = std::isfinite(p[i]);
  });
  return ok;
}

template <typename S> std::vector<S> NetParameters<S>::flatten() const {
  std::vector<S> out;
  out.reserve(size());
  for_each_tensor([&](const S *p, std::size_t n) { out.insert(out.end(), p, p + n); });
  return out;
}

template <typename S> void NetParameters<S>::assign(const std::vector<S> &flat) {
  if (flat.size() != size())
    throw ShapeError("flat parameter vector has wrong length");
  std::size_t offset = 0;
  for_each_tensor([&](S *p, std::size_t n) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + n), p);
    offset += n;
  });
}

// ---------------------------------------------------------------------------
// ConvNet

namespace {

template <typename S>
void im2col(const Matrix<S> &act, Eigen::Index batch, const ImageShape &in, const ConvLayerSpec &layer,
            const ImageShape &out, Matrix<S> &cols) {
  const int k = layer.kernel;
  const auto in_plane = static_cast<Eigen::Index>(in.plane());
  const auto out_plane = static_cast<Eigen::Index>(out.plane());
  cols.resize(batch * out_plane, static_cast<Eigen::Index>(in.channels) * k * k);
  for (int c = 0; c < in.channels; ++c) {
    const S *src = act.col(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S *dst = cols.col((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (Eigen::Index n = 0; n < batch; ++n) {
          const S *img = src + n * in_plane;
          S *row = dst + n * out_plane;
          for (int oy = 0; oy < out.height; ++oy) {
            const int iy = oy * layer.stride - layer.padding + ky;
            S *line = row + static_cast<Eigen::Index>(oy) * out.width;
            if (iy < 0 || iy >= in.height) {
              std::fill(line, line + out.width, S(0));
              continue;
            }
            const S *src_line = img + static_cast<Eigen::Index>(iy) * in.width;
            for (int ox = 0; ox < out.width; ++ox) {
              const int ix = ox * layer.stride - layer.padding + kx;
              line[ox] = (ix < 0 || ix >= in.width) ? S(0) : src_line[ix];
            }
          }
        }
      }
  }
}

template <typename S>
void col2im(const Matrix<S> &cols, Eigen::Index batch, const ImageShape &in, const ConvLayerSpec &layer,
            const ImageShape &out, Matrix<S> &act) {
  const int k = layer.kernel;
  const auto in_plane = static_cast<Eigen::Index>(in.plane());
  const auto out_plane = static_cast<Eigen::Index>(out.plane());
  act.setZero(batch * in_plane, in.channels);
  for (int c = 0; c < in.channels; ++c) {
    S *dst = act.col(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S *src = cols.col((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (Eigen::Index n = 0; n < batch; ++n) {
          S *img = dst + n * in_plane;
          const S *row = src + n * out_plane;
          for (int oy = 0; oy < out.height; ++oy) {
            const int iy = oy * layer.stride - layer.padding + ky;
            if (iy < 0 || iy >= in.height)
              continue;
            const S *line = row + static_cast<Eigen::Index>(oy) * out.width;
            S *dst_line = img + static_cast<Eigen::Index>(iy) * in.width;
            for (int ox = 0; ox < out.width; ++ox) {
              const int ix = ox * layer.stride - layer.padding + kx;
              if (ix >= 0 && ix < in.width)
                dst_line[ix] += line[ox];
            }
          }
        }
      }
  }
}

// (C*H*W) x N  <->  (N*H*W) x C
template <typename S> Matrix<S> images_to_activation(const Matrix<S> &input, const ImageShape &shape) {
  const auto plane = static_cast<Eigen::Index>(shape.plane());
  const Eigen::Index batch = input.cols();
  Matrix<S> act(batch * plane, shape.channels);
  for (int c = 0; c < shape.channels; ++c)
    for (Eigen::Index n = 0; n < batch; ++n)
      act.col(c).segment(n * plane, plane) = input.col(n).segment(c * plane, plane);
  return act;
}

template <typename S> Matrix<S> activation_to_images(const Matrix<S> &act, const ImageShape &shape) {
  const auto plane = static_cast<Eigen::Index>(shape.plane());
  const Eigen::Index batch = act.rows() / plane;
  Matrix<S> out(static_cast<Eigen::Index>(shape.size()), batch);
  for (int c = 0; c < shape.channels; ++c)
    for (Eigen::Index n = 0; n < batch; ++n)
      out.col(n).segment(c * plane, plane) = act.col(c).segment(n * plane, plane);
  return out;
}

} // namespace

template <typename S> ConvNet<S>::ConvNet(ArchitectureSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  shapes_ = spec_.block_shapes();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageShape cur = spec_.input;
  for (std::size_t l = 0; l < spec_.conv_layers.size(); ++l) {
    const auto &layer = spec_.conv_layers[l];
    const int fan_in = cur.channels * layer.kernel * layer.kernel;
    const double scale = std::sqrt(2.0 / fan_in);
    Mat w(layer.out_channels, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = static_cast<S>(normal(rng) * scale);
    params_.conv_weights.push_back(std::move(w));
    params_.conv_biases.push_back(Vec::Zero(layer.out_channels));
    cur = shapes_[l];
  }
  const auto features = static_cast<Eigen::Index>(spec_.feature_size());
  params_.embedding_weights.resize(spec_.embedding_dim, features);
  for (Eigen::Index i = 0; i < params_.embedding_weights.size(); ++i)
    params_.embedding_weights.data()[i] = static_cast<S>(normal(rng));
  normalize_embedding_rows();
}

template <typename S>
ConvNet<S>::ConvNet(ArchitectureSpec spec, NetParameters<S> params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  shapes_ = spec_.block_shapes();
  if (params_.conv_weights.size() != spec_.conv_layers.size() ||
      params_.conv_biases.size() != spec_.conv_layers.size())
    throw ConfigError("parameter tensors do not match the architecture");
  ImageShape cur = spec_.input;
  for (std::size_t l = 0; l < spec_.conv_layers.size(); ++l) {
    const auto &layer = spec_.conv_layers[l];
    if (params_.conv_weights[l].rows() != layer.out_channels ||
        params_.conv_weights[l].cols() != cur.channels * layer.kernel * layer.kernel ||
        params_.conv_biases[l].size() != layer.out_channels)
      throw ConfigError("conv block " + std::to_string(l) + " parameter shape mismatch");
    cur = shapes_[l];
  }
  if (params_.embedding_weights.rows() != spec_.embedding_dim ||
      params_.embedding_weights.cols() != static_cast<Eigen::Index>(spec_.feature_size()))
    throw ConfigError("embedding layer parameter shape mismatch");
}

template <typename S> typename ConvNet<S>::Mat ConvNet<S>::forward(const Mat &input, Tape *tape) const {
  if (input.rows() != static_cast<Eigen::Index>(spec_.input.size()))
    throw ConfigError("input has " + std::to_string(input.rows()) + " values per image, model expects " +
                      spec_.input.to_string());
  const Eigen::Index batch = input.cols();
  if (tape) {
    tape->batch = batch;
    tape->columns.resize(spec_.conv_layers.size());
    tape->activations.resize(spec_.conv_layers.size());
  }
  Mat act = images_to_activation(input, spec_.input);
  Mat cols;
  ImageShape cur = spec_.input;
  for (std::size_t l = 0; l < spec_.conv_layers.size(); ++l) {
    Mat &c = tape ? tape->columns[l] : cols;
    im2col(act, batch, cur, spec_.conv_layers[l], shapes_[l], c);
    Mat out = c * params_.conv_weights[l].transpose();
    out.rowwise() += params_.conv_biases[l].transpose();
    out = out.cwiseMax(S(0));
    cur = shapes_[l];
    if (tape) {
      tape->activations[l] = out;
    }
    act = std::move(out);
  }
  Mat features = activation_to_images(act, cur);
  Mat emb = params_.embedding_weights * features;
  if (tape)
    tape->features = std::move(features);
  return emb;
}

template <typename S>
void ConvNet<S>::backward(const Tape &tape, const Mat &grad_emb, NetParameters<S> *param_grads,
                          Mat *input_grad) const {
  if (grad_emb.rows() != spec_.embedding_dim || grad_emb.cols() != tape.batch)
    throw ShapeError("embedding gradient shape mismatch");
  const Eigen::Index batch = tape.batch;
  if (param_grads)
    param_grads->embedding_weights.noalias() += grad_emb * tape.features.transpose();
  const Mat grad_features = params_.embedding_weights.transpose() * grad_emb;
  const std::size_t layers = spec_.conv_layers.size();
  if (layers == 0) {
    if (input_grad)
      *input_grad = grad_features;
    return;
  }
  Mat grad_act = images_to_activation(grad_features, shapes_.back());
  for (std::size_t li = layers; li-- > 0;) {
    const Mat &out = tape.activations[li];
    Mat grad_pre = (out.array() > S(0)).select(grad_act, S(0));
    if (param_grads) {
      param_grads->conv_weights[li].noalias() += grad_pre.transpose() * tape.columns[li];
      param_grads->conv_biases[li] += grad_pre.colwise().sum().transpose();
    }
    if (li == 0 && !input_grad)
      break;
    const Mat grad_cols = grad_pre * params_.conv_weights[li];
    const ImageShape &in_shape = li == 0 ? spec_.input : shapes_[li - 1];
    col2im(grad_cols, batch, in_shape, spec_.conv_layers[li], shapes_[li], grad_act);
  }
  if (input_grad)
    *input_grad = activation_to_images(grad_act, spec_.input);
}

template <typename S> void ConvNet<S>::normalize_embedding_rows() {
  auto &w = params_.embedding_weights;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const S norm = w.row(r).norm();
    if (norm > S(0))
      w.row(r) /= norm;
  }
}

template <typename S> S ConvNet<S>::max_row_norm_deviation() const {
  S worst = 0;
  const auto &w = params_.embedding_weights;
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    worst = std::max(worst, std::abs(w.row(r).norm() - S(1)));
  return worst;
}

template struct NetParameters<float>;
template struct NetParameters<double>;
template class ConvNet<float>;
template class ConvNet<double>;

Embedding embed(const EmbeddingModel &model, const LabeledImage &image) {
  if (image.shape != model.architecture().input)
    throw ConfigError("image shape " + image.shape.to_string() + " does not match model input " +
                      model.architecture().input.to_string());
  return model.forward(to_column(image)).col(0);
}

MatrixF embed_all(const EmbeddingModel &model, std::span<const LabeledImage> images) {
  for (const auto &img : images)
    if (img.shape != model.architecture().input)
      throw ConfigError("image shape " + img.shape.to_string() + " does not match model input " +
                        model.architecture().input.to_string());
  if (images.empty())
    return MatrixF(model.architecture().embedding_dim, 0);
  return model.forward(to_columns(images));
}

double feature_distance(const Embedding &a, const Embedding &b) {
  if (a.size() != b.size())
    throw ShapeError("embedding dimensions differ: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

} // namespace rfv
