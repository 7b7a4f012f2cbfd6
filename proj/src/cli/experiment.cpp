#include "rfv/cli/experiment.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "rfv/core/json_util.hpp"

namespace rfv::cli {

namespace {

nlohmann::json shape_json(const ImageShape &s) { return nlohmann::json::array({s.height, s.width, s.channels}); }

ImageShape shape_from(const nlohmann::json &j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3)
    throw ConfigError("image shapes are [height, width, channels]");
  return ImageShape{v[0], v[1], v[2]};
}

nlohmann::json geometry_json(const adv::MaskGeometry &g) {
  return nlohmann::json{{"eyeglasses_width", g.eyeglasses_width}, {"eyeglasses_height", g.eyeglasses_height},
                        {"square_size", g.square_size},           {"square_stride", g.square_stride},
                        {"eye_patch_width", g.eye_patch_width},   {"eye_patch_height", g.eye_patch_height},
                        {"doa_size", g.doa_size},                 {"doa_stride", g.doa_stride}};
}

adv::MaskGeometry geometry_from(const nlohmann::json &j) {
  reject_unknown_keys(j,
                      {"eyeglasses_width", "eyeglasses_height", "square_size", "square_stride", "eye_patch_width",
                       "eye_patch_height", "doa_size", "doa_stride"},
                      "eval.geometry");
  adv::MaskGeometry g;
  g.eyeglasses_width = j.value("eyeglasses_width", g.eyeglasses_width);
  g.eyeglasses_height = j.value("eyeglasses_height", g.eyeglasses_height);
  g.square_size = j.value("square_size", g.square_size);
  g.square_stride = j.value("square_stride", g.square_stride);
  g.eye_patch_width = j.value("eye_patch_width", g.eye_patch_width);
  g.eye_patch_height = j.value("eye_patch_height", g.eye_patch_height);
  g.doa_size = j.value("doa_size", g.doa_size);
  g.doa_stride = j.value("doa_stride", g.doa_stride);
  return g;
}

} // namespace

void ExperimentConfig::validate() const {
  if (dataset.synthetic.has_value() == dataset.ingest_path.has_value())
    throw ConfigError("dataset needs exactly one of 'synthetic' or 'ingest'");
  if (dataset.synthetic) {
    const auto &s = *dataset.synthetic;
    s.factors.validate();
    if (s.train_identities < 2 || s.validation_identities < 2 || s.test_identities < 2 || s.samples_per_identity < 2)
      throw ConfigError("synthetic dataset needs >= 2 identities per split and >= 2 samples per identity");
  }
  if (dataset.ingest_path && !std::filesystem::is_directory(*dataset.ingest_path))
    throw ConfigError("ingest path does not exist: " + dataset.ingest_path->string());
  if (generator.kind.empty())
    throw ConfigError("generator.kind is empty");
  train.validate();
  for (const auto &spec : attack_specs())
    (void)spec;
  if (eval.tta.empty())
    throw ConfigError("eval.tta needs at least one entry");
  if (!(eval.fpr > 0.0 && eval.fpr < 1.0))
    throw ConfigError("eval.fpr must lie in (0, 1)");
  if (output_dir.empty())
    throw ConfigError("output_dir is empty");
}

adv::MaskGeometry ExperimentConfig::geometry(const ImageShape &shape) const {
  return eval.geometry ? *eval.geometry : adv::MaskGeometry::scaled_for(shape);
}

std::vector<eval::AttackSpec> ExperimentConfig::attack_specs() const {
  std::vector<eval::AttackSpec> out;
  for (const auto &a : attacks)
    out.push_back(eval::parse_attack(a.descriptor, a.options));
  return out;
}

nlohmann::json to_json(const ExperimentConfig &cfg) {
  nlohmann::json ds;
  if (cfg.dataset.synthetic) {
    const auto &s = *cfg.dataset.synthetic;
    nlohmann::json factors = s.factors;
    ds["synthetic"] = {{"factors", factors},
                       {"train_identities", s.train_identities},
                       {"validation_identities", s.validation_identities},
                       {"test_identities", s.test_identities},
                       {"samples_per_identity", s.samples_per_identity},
                       {"seed", s.seed}};
  } else if (cfg.dataset.ingest_path) {
    ds["ingest"] = {{"path", cfg.dataset.ingest_path->string()},
                    {"image_size", shape_json(cfg.dataset.ingest.shape)},
                    {"train_fraction", cfg.dataset.ingest.train_fraction},
                    {"validation_fraction", cfg.dataset.ingest.validation_fraction}};
  }
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto &a : cfg.attacks)
    attacks.push_back({{"descriptor", a.descriptor}, {"options", a.options}});
  nlohmann::json tta = nlohmann::json::array();
  for (const auto &t : cfg.eval.tta)
    tta.push_back(t.name());
  nlohmann::json ev{{"tta", tta},
                    {"fpr", cfg.eval.fpr},
                    {"targets", cfg.eval.plan.targets},
                    {"intruders_per_target", cfg.eval.plan.intruders_per_target},
                    {"patch_intruders", cfg.eval.plan.patch_intruders},
                    {"min_target_samples", cfg.eval.plan.min_target_samples},
                    {"store_mirrored_target", cfg.eval.store_mirrored_target},
                    {"per_target_calibration", cfg.eval.per_target_calibration},
                    {"seed", cfg.eval.seed}};
  if (cfg.eval.geometry)
    ev["geometry"] = geometry_json(*cfg.eval.geometry);
  nlohmann::json train = cfg.train;
  return nlohmann::json{{"dataset", ds},
                        {"generator", {{"kind", cfg.generator.kind}, {"options", cfg.generator.options}}},
                        {"train", train},
                        {"attacks", attacks},
                        {"eval", ev},
                        {"output_dir", cfg.output_dir.string()}};
}

ExperimentConfig experiment_from_json(const nlohmann::json &j, const std::filesystem::path &base) {
  reject_unknown_keys(j, {"dataset", "generator", "train", "attacks", "eval", "output_dir"}, "experiment");
  auto resolve = [&](const std::string &p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  ExperimentConfig cfg;
  if (!j.contains("dataset"))
    throw ConfigError("missing section 'dataset'");
  const auto &ds = j.at("dataset");
  reject_unknown_keys(ds, {"synthetic", "ingest"}, "dataset");
  if (ds.contains("synthetic")) {
    const auto &s = ds.at("synthetic");
    reject_unknown_keys(s,
                        {"image_size", "factors", "train_identities", "validation_identities", "test_identities",
                         "samples_per_identity", "seed"},
                        "dataset.synthetic");
    synth::SyntheticDatasetConfig sc;
    if (s.contains("factors") && s.contains("image_size"))
      throw ConfigError("dataset.synthetic takes either 'factors' or 'image_size'");
    if (s.contains("factors"))
      sc.factors = s.at("factors").get<synth::SyntheticFactorSpec>();
    else if (s.contains("image_size"))
      sc.factors = synth::SyntheticFactorSpec::standard(shape_from(s.at("image_size")));
    sc.train_identities = s.value("train_identities", sc.train_identities);
    sc.validation_identities = s.value("validation_identities", sc.validation_identities);
    sc.test_identities = s.value("test_identities", sc.test_identities);
    sc.samples_per_identity = s.value("samples_per_identity", sc.samples_per_identity);
    sc.seed = s.value("seed", sc.seed);
    cfg.dataset.synthetic = sc;
  }
  if (ds.contains("ingest")) {
    const auto &s = ds.at("ingest");
    reject_unknown_keys(s, {"path", "image_size", "train_fraction", "validation_fraction"}, "dataset.ingest");
    cfg.dataset.ingest_path = resolve(s.at("path").get<std::string>());
    if (s.contains("image_size"))
      cfg.dataset.ingest.shape = shape_from(s.at("image_size"));
    cfg.dataset.ingest.train_fraction = s.value("train_fraction", cfg.dataset.ingest.train_fraction);
    cfg.dataset.ingest.validation_fraction = s.value("validation_fraction", cfg.dataset.ingest.validation_fraction);
  }
  if (j.contains("generator")) {
    const auto &g = j.at("generator");
    reject_unknown_keys(g, {"kind", "options"}, "generator");
    cfg.generator.kind = g.value("kind", cfg.generator.kind);
    if (g.contains("options"))
      cfg.generator.options = g.at("options");
  }
  if (j.contains("train"))
    cfg.train = j.at("train").get<train::TrainConfig>();
  if (j.contains("attacks")) {
    for (const auto &a : j.at("attacks")) {
      AttackEntry e;
      if (a.is_string()) {
        e.descriptor = a.get<std::string>();
      } else {
        reject_unknown_keys(a, {"descriptor", "options"}, "attacks[]");
        e.descriptor = a.at("descriptor").get<std::string>();
        if (a.contains("options"))
          e.options = a.at("options");
      }
      cfg.attacks.push_back(std::move(e));
    }
  }
  if (j.contains("eval")) {
    const auto &e = j.at("eval");
    reject_unknown_keys(e,
                        {"tta", "fpr", "targets", "intruders_per_target", "patch_intruders", "min_target_samples",
                         "store_mirrored_target", "per_target_calibration", "seed", "geometry"},
                        "eval");
    if (e.contains("tta")) {
      cfg.eval.tta.clear();
      for (const auto &t : e.at("tta"))
        cfg.eval.tta.push_back(eval::Tta::parse(t.get<std::string>()));
    }
    cfg.eval.fpr = e.value("fpr", cfg.eval.fpr);
    cfg.eval.plan.targets = e.value("targets", cfg.eval.plan.targets);
    cfg.eval.plan.intruders_per_target = e.value("intruders_per_target", cfg.eval.plan.intruders_per_target);
    cfg.eval.plan.patch_intruders = e.value("patch_intruders", cfg.eval.plan.patch_intruders);
    cfg.eval.plan.min_target_samples = e.value("min_target_samples", cfg.eval.plan.min_target_samples);
    cfg.eval.store_mirrored_target = e.value("store_mirrored_target", cfg.eval.store_mirrored_target);
    cfg.eval.per_target_calibration = e.value("per_target_calibration", cfg.eval.per_target_calibration);
    cfg.eval.seed = e.value("seed", cfg.eval.seed);
    if (e.contains("geometry"))
      cfg.eval.geometry = geometry_from(e.at("geometry"));
  }
  if (j.contains("output_dir"))
    cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is)
    throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  try {
    return experiment_from_json(j);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

synth::Dataset build_dataset(const ExperimentConfig &cfg) {
  if (cfg.dataset.synthetic)
    return synth::Dataset::synthetic(*cfg.dataset.synthetic);
  return synth::ingest_folder(*cfg.dataset.ingest_path, cfg.dataset.ingest);
}

std::unique_ptr<gen::DisentangledGenerator> build_generator(const ExperimentConfig &cfg,
                                                            const synth::Dataset &dataset) {
  return gen::make_generator(cfg.generator.kind, cfg.generator.options, dataset);
}

eval::TrialPlan build_plan(const ExperimentConfig &cfg, const synth::Dataset &dataset, bool validation) {
  Rng rng = make_stream(cfg.eval.seed, validation ? 2 : 1);
  const auto &split = dataset.split();
  return eval::make_trial_plan(dataset, validation ? split.validation_identities : split.test_identities,
                               cfg.eval.plan, rng);
}

void export_dataset(const synth::Dataset &dataset, const std::filesystem::path &root, const nlohmann::json &spec) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  synth::Dataset copy = dataset;
  copy.sources.assign(dataset.size(), {});
  for (std::size_t id = 0; id < dataset.identity_count(); ++id) {
    const std::string name = dataset.identity_names()[id];
    fs::create_directories(root / name);
    for (auto i : dataset.samples_of(static_cast<int>(id))) {
      const auto &img = dataset.image(i);
      cv::Mat mat(img.shape.height, img.shape.width, img.shape.channels == 1 ? CV_8UC1 : CV_8UC3);
      for (int y = 0; y < img.shape.height; ++y)
        for (int x = 0; x < img.shape.width; ++x) {
          if (img.shape.channels == 1) {
            mat.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(img.at(0, y, x) * 255.0f));
          } else {
            auto &px = mat.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
              px[2 - c] = static_cast<unsigned char>(std::lround(img.at(c, y, x) * 255.0f));
          }
        }
      const std::string rel = name + "/" + std::to_string(i) + ".png";
      if (!cv::imwrite((root / rel).string(), mat))
        throw ConfigError("cannot write " + (root / rel).string());
      copy.sources[i] = rel;
    }
  }
  std::ofstream os(root / "manifest.json");
  os << synth::manifest(copy, spec).dump(2) << "\n";
}

} // namespace rfv::cli
