#include "rfv/generator/generator.hpp"

#include <algorithm>
#include <random>

#include "rfv/core/json_util.hpp"

namespace rfv::gen {

void DisentangledGenerator::accumulate_gradient(const VectorF &grad_pixels) {
  const double sq = grad_pixels.template cast<double>().squaredNorm();
  std::lock_guard lock(grad_mutex_);
  grad_sq_ += sq;
}

double DisentangledGenerator::accumulated_gradient_norm() const {
  std::lock_guard lock(grad_mutex_);
  return std::sqrt(grad_sq_);
}

void DisentangledGenerator::reset_gradient() {
  std::lock_guard lock(grad_mutex_);
  grad_sq_ = 0.0;
}

ToyGenerator::ToyGenerator(synth::SyntheticFactorSpec spec, double background_noise, double class_noise)
    : spec_(std::move(spec)), background_noise_(background_noise), class_noise_(class_noise) {
  spec_.validate();
  if (!(background_noise_ >= 0.0))
    throw ConfigError("background noise level must be >= 0");
  if (!(class_noise_ >= 0.0))
    throw ConfigError("class noise level must be >= 0");
}

Code ToyGenerator::encode_class(const LabeledImage &image) const { return synth::oracle_class(image); }

Code ToyGenerator::encode_content(const LabeledImage &image) const { return synth::oracle_content(image); }

LabeledImage ToyGenerator::generate(const Code &class_code, const Code &content_code, Rng &rng) const {
  Code cls = class_code;
  if (class_noise_ > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < cls.size(); ++i) {
      const auto &r = spec_.class_ranges[i];
      cls[i] = std::clamp(cls[i] + class_noise_ * (r.hi - r.lo) * normal(rng), r.lo, r.hi);
    }
  }
  LabeledImage out = synth::render(cls, content_code, spec_);
  if (background_noise_ > 0.0) {
    const Mask fg = synth::foreground(cls, content_code, spec_);
    std::normal_distribution<float> noise(0.0f, static_cast<float>(background_noise_));
    const auto plane = out.shape.plane();
    for (int c = 0; c < out.shape.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        if (fg.grid()[p])
          continue;
        float &v = out.pixels[c * plane + p];
        v = std::clamp(v + noise(rng), 0.0f, 1.0f);
      }
  }
  return out;
}

CallableGenerator::CallableGenerator(Encoder encode_class, Encoder encode_content, Decoder generate, int class_dim,
                                     int content_dim)
    : encode_class_(std::move(encode_class)), encode_content_(std::move(encode_content)),
      generate_(std::move(generate)), class_dim_(class_dim), content_dim_(content_dim) {
  if (!encode_class_ || !encode_content_ || !generate_)
    throw ConfigError("callable generator needs all three callables");
  if (class_dim_ <= 0 || content_dim_ <= 0)
    throw ConfigError("callable generator code dimensions must be positive");
}

namespace {

std::map<std::string, GeneratorFactory> &registry() {
  static std::map<std::string, GeneratorFactory> r = {
      {"toy", [](const nlohmann::json &options, const synth::Dataset &dataset) -> std::unique_ptr<DisentangledGenerator> {
         if (!dataset.factors)
           throw ConfigError("the toy generator needs a synthetic dataset");
         reject_unknown_keys(options, {"background_noise", "class_noise"}, "generator.options");
         return std::make_unique<ToyGenerator>(*dataset.factors, options.value("background_noise", 0.05),
                                               options.value("class_noise", 0.0));
       }}};
  return r;
}

std::mutex registry_mutex;

} // namespace

void register_generator(const std::string &name, GeneratorFactory factory) {
  std::lock_guard lock(registry_mutex);
  registry()[name] = std::move(factory);
}

std::unique_ptr<DisentangledGenerator> make_generator(const std::string &name, const nlohmann::json &options,
                                                      const synth::Dataset &dataset) {
  GeneratorFactory factory;
  {
    std::lock_guard lock(registry_mutex);
    auto it = registry().find(name);
    if (it == registry().end())
      throw ConfigError("unknown generator kind '" + name + "'");
    factory = it->second;
  }
  return factory(options, dataset);
}

LabeledImage autoencode(const DisentangledGenerator &gen, const LabeledImage &x, Rng &rng) {
  LabeledImage y = gen.generate(gen.encode_class(x), gen.encode_content(x), rng);
  y.identity = x.identity;
  return y;
}

LabeledImage transfer(const DisentangledGenerator &gen, const LabeledImage &x, const LabeledImage &t, Rng &rng) {
  LabeledImage u = gen.generate(gen.encode_class(x), gen.encode_content(t), rng);
  u.identity = x.identity;
  return u;
}

Quadruplet make_quadruplet(const DisentangledGenerator &gen, const synth::Dataset &dataset,
                           const std::vector<int> &identities, Rng &rng) {
  const auto [xi, ti] = synth::sample_pair(dataset, identities, rng);
  Quadruplet q;
  q.x = dataset.image(xi);
  q.t = dataset.image(ti);
  q.y = autoencode(gen, q.x, rng);
  q.u = transfer(gen, q.x, q.t, rng);
  return q;
}

} // namespace rfv::gen
