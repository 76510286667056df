#include "a5/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace a5 {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', '5', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kVersion = 1;

using json = nlohmann::ordered_json;

json layer_to_json(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kDense:
      return {{"kind", "dense"}, {"in", l.in}, {"out", l.out}};
    case LayerKind::kConv2d:
      return {{"kind", "conv2d"}, {"in_ch", l.in_ch}, {"out_ch", l.out_ch},
              {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad}};
    case LayerKind::kRelu:
      return {{"kind", "relu"}};
    case LayerKind::kFlatten:
      return {{"kind", "flatten"}};
  }
  throw Error("checkpoint: unknown layer kind");
}

LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") return LayerSpec::dense(j.at("in").get<int>(), j.at("out").get<int>());
  if (kind == "conv2d")
    return LayerSpec::conv2d(j.at("in_ch").get<int>(), j.at("out_ch").get<int>(),
                             j.at("kernel").get<int>(), j.at("stride").get<int>(),
                             j.at("pad").get<int>());
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "flatten") return LayerSpec::flatten();
  throw FormatError("checkpoint: unknown layer kind '" + kind + "' in manifest");
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  json manifest;
  manifest["format"] = "a5-checkpoint";
  manifest["version"] = kVersion;
  manifest["dtype"] = "f64";
  manifest["input_shape"] = net.input_shape();
  json layers = json::array();
  for (const LayerSpec& l : net.layers()) layers.push_back(layer_to_json(l));
  manifest["layers"] = std::move(layers);

  json blobs = json::array();
  std::vector<const Tensor*> order;
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerParams& p = net.params()[(size_t)i];
    if (p.weight.empty()) continue;
    blobs.push_back({{"layer", i}, {"name", "weight"}, {"shape", p.weight.shape()}});
    order.push_back(&p.weight);
    blobs.push_back({{"layer", i}, {"name", "bias"}, {"shape", p.bias.shape()}});
    order.push_back(&p.bias);
  }
  manifest["params"] = std::move(blobs);

  const std::string m = manifest.dump();
  if (m.size() > 0xffffffffull) throw Error("checkpoint: manifest too large");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  f.write(kMagic, sizeof(kMagic));
  const std::uint32_t len = (std::uint32_t)m.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(m.data(), (std::streamsize)m.size());
  for (const Tensor* t : order)
    f.write(reinterpret_cast<const char*>(t->data().data()),
            (std::streamsize)(sizeof(double) * (size_t)t->size()));
  if (!f) throw IoError("checkpoint: write to '" + path + "' failed");
}

Network load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  f.close();

  size_t off = 0;
  auto need = [&](size_t n, const char* what) {
    if (bytes.size() - off < n)
      throw FormatError("checkpoint: truncated file in '" + path + "' (" + what + ")");
  };
  need(sizeof(kMagic), "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  off += sizeof(kMagic);

  need(4, "manifest length");
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + off, 4);
  off += 4;
  need(len, "manifest");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + (std::ptrdiff_t)off,
                           bytes.begin() + (std::ptrdiff_t)(off + len));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: manifest is not valid JSON: " + std::string(e.what()));
  }
  off += len;

  try {
    if (manifest.at("version").get<int>() != kVersion)
      throw FormatError("checkpoint: unsupported version in '" + path + "'");
    if (manifest.at("dtype").get<std::string>() != "f64")
      throw FormatError("checkpoint: unsupported dtype in '" + path + "'");

    Shape input_shape = manifest.at("input_shape").get<Shape>();
    std::vector<LayerSpec> layers;
    for (const json& j : manifest.at("layers")) layers.push_back(layer_from_json(j));
    Network net = [&] {
      try {
        return Network(std::move(input_shape), std::move(layers));
      } catch (const ShapeError& e) {
        throw FormatError("checkpoint: manifest describes an invalid network: " +
                          std::string(e.what()));
      }
    }();

    // Validate the declared blob list against the network's own parameter
    // shapes before touching the payload.
    std::vector<Tensor*> order;
    std::uint64_t total = 0;
    for (const json& j : manifest.at("params")) {
      const int li = j.at("layer").get<int>();
      if (li < 0 || li >= net.num_layers())
        throw FormatError("checkpoint: manifest references layer " + std::to_string(li));
      LayerParams& p = net.params()[(size_t)li];
      const std::string name = j.at("name").get<std::string>();
      Tensor* t = name == "weight" ? &p.weight : name == "bias" ? &p.bias : nullptr;
      if (t == nullptr || t->empty())
        throw FormatError("checkpoint: manifest names parameter '" + name + "' on layer " +
                          std::to_string(li) + " which does not exist");
      if (j.at("shape").get<Shape>() != t->shape())
        throw FormatError("checkpoint: shape mismatch for layer " + std::to_string(li) + " " +
                          name);
      order.push_back(t);
      total += (std::uint64_t)t->size();
    }
    if (bytes.size() - off != total * sizeof(double))
      throw FormatError("checkpoint: payload is " + std::to_string(bytes.size() - off) +
                        " bytes, manifest declares " + std::to_string(total * sizeof(double)));

    for (Tensor* t : order) {
      Vec buf(t->size());
      std::memcpy(buf.data(), bytes.data() + off, sizeof(double) * (size_t)t->size());
      off += sizeof(double) * (size_t)t->size();
      *t = Tensor(t->shape(), std::move(buf));  // revalidates finiteness
    }
    return net;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
}

}  // namespace a5
