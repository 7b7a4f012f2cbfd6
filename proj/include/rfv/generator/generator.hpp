#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/core/image.hpp"
#include "rfv/core/rng.hpp"
#include "rfv/synthdata/dataset.hpp"

namespace rfv::gen {

using Code = std::vector<double>;

/// Disentangled autoencoder G(E_cl(x), E_co(x)). Implementations are immutable after
/// construction; randomness (reconstruction noise) comes from the caller's RNG.
class DisentangledGenerator {
public:
  virtual ~DisentangledGenerator() = default;

  [[nodiscard]] virtual Code encode_class(const LabeledImage &image) const = 0;
  [[nodiscard]] virtual Code encode_content(const LabeledImage &image) const = 0;
  [[nodiscard]] virtual LabeledImage generate(const Code &class_code, const Code &content_code, Rng &rng) const = 0;
  [[nodiscard]] virtual int class_dim() const = 0;
  [[nodiscard]] virtual int content_dim() const = 0;

  /// Entry point for gradients w.r.t. generated pixels. Only reached when the stop-gradient
  /// on generated samples is disabled; the default records the squared norm so tests can
  /// audit that nothing flows into the generator.
  void accumulate_gradient(const VectorF &grad_pixels);
  [[nodiscard]] double accumulated_gradient_norm() const;
  void reset_gradient();

private:
  mutable std::mutex grad_mutex_;
  double grad_sq_ = 0.0;
};

/// Exact toy generator over synthetic data: the encoders retrieve the stored latents and G is
/// the renderer. Background pixels of every output receive N(0, sigma_bg^2) noise (clipped to
/// [0,1]); foreground pixels are reproduced exactly.
class ToyGenerator final : public DisentangledGenerator {
public:
  ToyGenerator(synth::SyntheticFactorSpec spec, double background_noise, double class_noise = 0.0);

  [[nodiscard]] Code encode_class(const LabeledImage &image) const override;
  [[nodiscard]] Code encode_content(const LabeledImage &image) const override;
  [[nodiscard]] LabeledImage generate(const Code &class_code, const Code &content_code, Rng &rng) const override;
  [[nodiscard]] int class_dim() const override { return synth::kClassFactorCount; }
  [[nodiscard]] int content_dim() const override { return synth::kContentFactorCount; }

  [[nodiscard]] double background_noise() const { return background_noise_; }
  [[nodiscard]] const synth::SyntheticFactorSpec &spec() const { return spec_; }

private:
  synth::SyntheticFactorSpec spec_;
  double background_noise_;
  // Experiment flag: relative jitter of the class code before rendering (0 keeps identity exact).
  double class_noise_;
};

/// Adapter for externally provided (e.g. learned) generators.
class CallableGenerator final : public DisentangledGenerator {
public:
  using Encoder = std::function<Code(const LabeledImage &)>;
  using Decoder = std::function<LabeledImage(const Code &, const Code &, Rng &)>;

  CallableGenerator(Encoder encode_class, Encoder encode_content, Decoder generate, int class_dim, int content_dim);

  [[nodiscard]] Code encode_class(const LabeledImage &image) const override { return encode_class_(image); }
  [[nodiscard]] Code encode_content(const LabeledImage &image) const override { return encode_content_(image); }
  [[nodiscard]] LabeledImage generate(const Code &c, const Code &z, Rng &rng) const override {
    return generate_(c, z, rng);
  }
  [[nodiscard]] int class_dim() const override { return class_dim_; }
  [[nodiscard]] int content_dim() const override { return content_dim_; }

private:
  Encoder encode_class_;
  Encoder encode_content_;
  Decoder generate_;
  int class_dim_;
  int content_dim_;
};

/// Named generator factories, selected by the "generator.kind" config key. "toy" is built in.
using GeneratorFactory =
    std::function<std::unique_ptr<DisentangledGenerator>(const nlohmann::json &options, const synth::Dataset &)>;
void register_generator(const std::string &name, GeneratorFactory factory);
std::unique_ptr<DisentangledGenerator> make_generator(const std::string &name, const nlohmann::json &options,
                                                      const synth::Dataset &dataset);

/// y = G(E_cl(x), E_co(x)), labelled with x's identity.
LabeledImage autoencode(const DisentangledGenerator &gen, const LabeledImage &x, Rng &rng);
/// u = G(E_cl(x), E_co(t)), labelled with x's identity.
LabeledImage transfer(const DisentangledGenerator &gen, const LabeledImage &x, const LabeledImage &t, Rng &rng);

/// (x, y, t, u): real target, its reconstruction, real negative, class-transferred negative.
struct Quadruplet {
  LabeledImage x, y, t, u;
  [[nodiscard]] bool labels_consistent() const {
    return x.identity == y.identity && x.identity == u.identity && t.identity != x.identity;
  }
};

/// x, t via synth::sample_pair over `identities`; y = autoencode(x); u = transfer(x, t).
Quadruplet make_quadruplet(const DisentangledGenerator &gen, const synth::Dataset &dataset,
                           const std::vector<int> &identities, Rng &rng);

} // namespace rfv::gen
