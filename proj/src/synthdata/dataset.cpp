#include "rfv/synthdata/dataset.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace rfv::synth {

bool DatasetSplit::disjoint() const {
  std::set<int> seen;
  for (const auto *set : {&train_identities, &validation_identities, &test_identities})
    for (int id : *set)
      if (!seen.insert(id).second)
        return false;
  return true;
}

Dataset::Dataset(ImageShape shape, std::vector<LabeledImage> images, std::vector<std::string> identity_names,
                 DatasetSplit split)
    : shape_(shape), images_(std::move(images)), names_(std::move(identity_names)), split_(std::move(split)) {
  if (!split_.disjoint())
    throw ConfigError("dataset split identity sets overlap");
  by_identity_.resize(names_.size());
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto &img = images_[i];
    if (img.shape != shape_)
      throw ShapeError("dataset image " + std::to_string(i) + " has shape " + img.shape.to_string());
    if (img.identity < 0 || static_cast<std::size_t>(img.identity) >= names_.size())
      throw ConfigError("dataset image " + std::to_string(i) + " has an unknown identity");
    by_identity_[static_cast<std::size_t>(img.identity)].push_back(i);
  }
}

Dataset Dataset::synthetic(const SyntheticDatasetConfig &config) {
  config.factors.validate();
  if (config.samples_per_identity < 2)
    throw ConfigError("samples_per_identity must be at least 2");
  if (config.train_identities < 0 || config.validation_identities < 0 || config.test_identities < 0)
    throw ConfigError("identity counts must be non-negative");
  const int total = config.train_identities + config.validation_identities + config.test_identities;
  Rng rng = make_stream(config.seed, 0x5eed);
  std::vector<LabeledImage> images;
  std::vector<std::string> names;
  DatasetSplit split;
  split.samples_per_identity = config.samples_per_identity;
  images.reserve(static_cast<std::size_t>(total) * config.samples_per_identity);
  for (int id = 0; id < total; ++id) {
    names.push_back("synthetic_" + std::to_string(id));
    const auto cls = sample_class(config.factors, rng);
    for (int s = 0; s < config.samples_per_identity; ++s)
      images.push_back(render(cls, sample_content(config.factors, rng), config.factors, id));
    if (id < config.train_identities)
      split.train_identities.push_back(id);
    else if (id < config.train_identities + config.validation_identities)
      split.validation_identities.push_back(id);
    else
      split.test_identities.push_back(id);
  }
  Dataset ds(config.factors.image, std::move(images), std::move(names), std::move(split));
  ds.factors = config.factors;
  return ds;
}

bool Dataset::has_latents() const {
  return !images_.empty() &&
         std::all_of(images_.begin(), images_.end(), [](const LabeledImage &i) { return i.latents.has_value(); });
}

std::size_t sample_within(const Dataset &dataset, int identity, Rng &rng, std::size_t exclude) {
  const auto &pool = dataset.samples_of(identity);
  if (pool.empty())
    throw ConfigError("identity " + std::to_string(identity) + " has no samples");
  if (exclude == SIZE_MAX || std::find(pool.begin(), pool.end(), exclude) == pool.end())
    return pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
  if (pool.size() < 2)
    throw ConfigError("identity " + std::to_string(identity) + " needs two samples");
  auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 2));
  if (pool[pick] == exclude)
    pick = pool.size() - 1;
  return pool[pick];
}

std::pair<std::size_t, std::size_t> sample_pair(const Dataset &dataset, const std::vector<int> &identities, Rng &rng) {
  if (identities.size() < 2)
    throw ConfigError("sampling a pair needs at least two identities, got " + std::to_string(identities.size()));
  const int n = static_cast<int>(identities.size());
  const int xi = uniform_int(rng, 0, n - 1);
  int ti = uniform_int(rng, 0, n - 2);
  if (ti >= xi)
    ++ti;
  const std::size_t x = sample_within(dataset, identities[static_cast<std::size_t>(xi)], rng);
  const std::size_t t = sample_within(dataset, identities[static_cast<std::size_t>(ti)], rng);
  return {x, t};
}

namespace {

bool load_image(const std::filesystem::path &file, const ImageShape &shape, LabeledImage &out) {
  cv::Mat raw = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (raw.empty())
    return false;
  cv::Mat resized;
  cv::resize(raw, resized, cv::Size(shape.width, shape.height), 0, 0, cv::INTER_AREA);
  cv::Mat rgb;
  if (shape.channels == 1)
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2GRAY);
  else
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32F, 1.0 / 255.0);
  out = LabeledImage(shape);
  for (int y = 0; y < shape.height; ++y)
    for (int x = 0; x < shape.width; ++x)
      for (int c = 0; c < shape.channels; ++c) {
        const float v = shape.channels == 1 ? f.at<float>(y, x) : f.at<cv::Vec3f>(y, x)[c];
        out.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
  return true;
}

} // namespace

Dataset ingest_folder(const std::filesystem::path &root, const IngestOptions &options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw ConfigError("ingest path is not a directory: " + root.string());
  if (options.shape.channels != 1 && options.shape.channels != 3)
    throw ConfigError("ingest supports 1 or 3 channels");

  std::vector<fs::path> folders;
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory())
      folders.push_back(entry.path());
  std::sort(folders.begin(), folders.end());

  std::vector<LabeledImage> images;
  std::vector<std::string> names;
  std::vector<std::string> sources;
  for (const auto &folder : folders) {
    std::vector<fs::path> files;
    for (const auto &entry : fs::directory_iterator(folder))
      if (entry.is_regular_file())
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<LabeledImage> loaded;
    std::vector<std::string> loaded_sources;
    for (const auto &file : files) {
      LabeledImage img;
      if (!load_image(file, options.shape, img)) {
        std::cerr << "warning: skipping unreadable image " << file << "\n";
        continue;
      }
      loaded.push_back(std::move(img));
      loaded_sources.push_back(fs::relative(file, root).string());
    }
    if (loaded.size() < 2) {
      std::cerr << "warning: identity '" << folder.filename().string() << "' has " << loaded.size()
                << " readable images, excluded\n";
      continue;
    }
    const int id = static_cast<int>(names.size());
    names.push_back(folder.filename().string());
    for (auto &img : loaded) {
      img.identity = id;
      images.push_back(std::move(img));
    }
    sources.insert(sources.end(), loaded_sources.begin(), loaded_sources.end());
  }

  DatasetSplit split;
  const auto n = static_cast<int>(names.size());
  const int n_train = static_cast<int>(options.train_fraction * n);
  const int n_val = static_cast<int>(options.validation_fraction * n);
  int min_samples = 0;
  for (int id = 0; id < n; ++id) {
    if (id < n_train)
      split.train_identities.push_back(id);
    else if (id < n_train + n_val)
      split.validation_identities.push_back(id);
    else
      split.test_identities.push_back(id);
  }
  if (!images.empty()) {
    std::vector<int> counts(names.size(), 0);
    for (const auto &img : images)
      ++counts[static_cast<std::size_t>(img.identity)];
    min_samples = *std::min_element(counts.begin(), counts.end());
  }
  split.samples_per_identity = min_samples;
  Dataset ds(options.shape, std::move(images), std::move(names), std::move(split));
  ds.sources = std::move(sources);
  return ds;
}

nlohmann::json manifest(const Dataset &dataset, const nlohmann::json &spec) {
  nlohmann::json identities = nlohmann::json::object();
  for (std::size_t id = 0; id < dataset.identity_count(); ++id) {
    nlohmann::json files = nlohmann::json::array();
    for (auto i : dataset.samples_of(static_cast<int>(id)))
      files.push_back(dataset.sources.empty() ? "sample_" + std::to_string(i) : dataset.sources[i]);
    identities[dataset.identity_names()[id]] = files;
  }
  auto names_of = [&](const std::vector<int> &ids) {
    nlohmann::json out = nlohmann::json::array();
    for (int id : ids)
      out.push_back(dataset.identity_names()[static_cast<std::size_t>(id)]);
    return out;
  };
  const auto &split = dataset.split();
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a(spec.dump())));
  return nlohmann::json{{"identities", identities},
                        {"split",
                         {{"train", names_of(split.train_identities)},
                          {"validation", names_of(split.validation_identities)},
                          {"test", names_of(split.test_identities)}}},
                        {"samples_per_identity", split.samples_per_identity},
                        {"image_shape", {dataset.shape().height, dataset.shape().width, dataset.shape().channels}},
                        {"spec_hash", hash}};
}

} // namespace rfv::synth
