#include "bachkit/params.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

namespace bachkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "params.json";

template <typename Module>
void save_tensors(const fs::path& dir, Module& m, json& listing) {
  m.for_each_tensor([&](const std::string& name, Tensor& t) {
    const std::string file = name + ".bin";
    save_tensor(dir / file, t);
    listing.push_back({{"name", name}, {"file", file}});
  });
}

template <typename Module>
void load_tensors(const fs::path& dir, Module& m, const json& listing) {
  std::map<std::string, std::string> files;
  for (const json& t : listing) files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
  m.for_each_tensor([&](const std::string& name, Tensor& t) {
    const auto it = files.find(name);
    if (it == files.end()) fail(ErrorKind::Parameter, "parameter fixture lacks " + name);
    Tensor loaded = load_tensor(dir / it->second);
    if (loaded.extents() != t.extents()) {
      fail(ErrorKind::Shape, "parameter " + name + " has extents " + to_string(loaded.extents()) +
                                 ", expected " + to_string(t.extents()));
    }
    require_finite(loaded, name.c_str());
    t = std::move(loaded);
  });
}

json generator_config(const GeneratorConfig& c) {
  return {{"condition_channels", c.condition_channels}, {"features", c.features},
          {"blocks", c.blocks}, {"upsampling_blocks", c.upsampling_blocks},
          {"epsilon", c.epsilon}};
}

json discriminator_config(const DiscriminatorConfig& c) {
  return {{"image_channels", c.image_channels}, {"condition_channels", c.condition_channels},
          {"features", c.features}, {"scales", c.scales}, {"layers", c.layers},
          {"epsilon", c.epsilon}};
}

}  // namespace

void save_params(const fs::path& dir, ParamBundle b) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  json manifest = {{"format", "bachkit-params"}, {"version", 1}};
  json tensors = json::array();
  if (b.fusion) {
    manifest["fusion"] = {{"channels", b.fusion->channels()}, {"steps", b.fusion->steps}};
    save_tensors(dir, *b.fusion, tensors);
  }
  if (b.generator) {
    manifest["generator"] = generator_config(b.generator->config);
    save_tensors(dir, *b.generator, tensors);
  }
  if (b.discriminator) {
    manifest["discriminator"] = discriminator_config(b.discriminator->config);
    save_tensors(dir, *b.discriminator, tensors);
  }
  manifest["tensors"] = tensors;
  std::ofstream out(dir / kManifest);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "cannot write " + (dir / kManifest).string());
}

ParamBundle load_params(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) fail(ErrorKind::Io, "cannot open " + (dir / kManifest).string());
  json m;
  try {
    m = json::parse(in);
    if (m.value("format", "") != "bachkit-params") {
      fail(ErrorKind::Parameter, (dir / kManifest).string() + " is not a parameter manifest");
    }
    ParamBundle b;
    const json& tensors = m.at("tensors");
    if (m.contains("fusion")) {
      const json& f = m["fusion"];
      b.fusion = FusionParams::init(f.at("channels").get<std::size_t>(), 0,
                                    f.at("steps").get<std::size_t>());
      load_tensors(dir, *b.fusion, tensors);
    }
    if (m.contains("generator")) {
      const json& g = m["generator"];
      GeneratorConfig c;
      c.condition_channels = g.at("condition_channels").get<std::size_t>();
      c.features = g.at("features").get<std::size_t>();
      c.blocks = g.at("blocks").get<std::size_t>();
      c.upsampling_blocks = g.at("upsampling_blocks").get<std::size_t>();
      c.epsilon = g.value("epsilon", kernel::kDefaultNormEpsilon);
      b.generator = GeneratorWeights::init(c, 0);
      load_tensors(dir, *b.generator, tensors);
    }
    if (m.contains("discriminator")) {
      const json& d = m["discriminator"];
      DiscriminatorConfig c;
      c.image_channels = d.at("image_channels").get<std::size_t>();
      c.condition_channels = d.at("condition_channels").get<std::size_t>();
      c.features = d.at("features").get<std::size_t>();
      c.scales = d.at("scales").get<std::size_t>();
      c.layers = d.at("layers").get<std::size_t>();
      c.epsilon = d.value("epsilon", kernel::kDefaultNormEpsilon);
      b.discriminator = DiscriminatorWeights::zeros(c);
      load_tensors(dir, *b.discriminator, tensors);
    }
    return b;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parameter, (dir / kManifest).string() + ": " + e.what());
  }
}

ParamBundle init_params(std::size_t channels, std::uint64_t seed, std::size_t fusion_steps) {
  ParamBundle b;
  b.fusion = FusionParams::init(channels, seed, fusion_steps);
  GeneratorConfig g;
  g.condition_channels = channels;
  b.generator = GeneratorWeights::init(g, seed + 1);
  DiscriminatorConfig d;
  d.condition_channels = channels;
  b.discriminator = DiscriminatorWeights::init(d, seed + 2);
  return b;
}

}  // namespace bachkit
