#pragma once

// On-disk formats.
//
// ZCT1 tensor file, all integers little-endian:
//   "ZCT1" | u32 rank | rank x u32 dims | prod(dims) x f32 data (row-major)
//
// Model file: JSON document naming the layers and a weights blob, which is
// the concatenation of ZCT1 records (weight, then bias if declared) for
// every parameterized layer in order.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomcam/eval.hpp"
#include "zoomcam/graph.hpp"
#include "zoomcam/labeling.hpp"
#include "zoomcam/saliency.hpp"

namespace zoomcam {

namespace fs = std::filesystem;

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline constexpr std::array<char, 4> kTensorMagic = {'Z', 'C', 'T', '1'};
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void read_exact(std::istream& in, unsigned char* dst, std::size_t n,
                       const std::string& what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError("truncated tensor: " + what);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::string read_bytes(const fs::path& path) { return detail::read_file(path); }

inline std::string encode_tensor(const Tensor& t) {
  if (t.rank() == 0) throw FormatError("tensor rank must be at least 1");
  std::string out(detail::kTensorMagic.begin(), detail::kTensorMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw FormatError("tensor dimension exceeds 32 bits");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) {
    const float f = static_cast<float>(v);
    detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

// Reads one ZCT1 record from the stream's current position.
inline Tensor read_tensor(std::istream& in) {
  unsigned char head[8];
  detail::read_exact(in, head, 8, "header");
  if (std::memcmp(head, detail::kTensorMagic.data(), 4) != 0)
    throw FormatError("not a ZCT1 tensor");
  const std::uint32_t rank = detail::get_u32(head + 4);
  if (rank == 0) throw FormatError("ZCT1 rank must be at least 1");
  if (rank > 16) throw FormatError("ZCT1 rank " + std::to_string(rank) + " too large");
  std::vector<unsigned char> dim_bytes(4 * rank);
  detail::read_exact(in, dim_bytes.data(), dim_bytes.size(), "dims");
  Dims dims(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = detail::get_u32(dim_bytes.data() + 4 * i);
    count *= dims[i];
    if (count > detail::kMaxElements) throw FormatError("ZCT1 tensor too large");
  }
  std::vector<unsigned char> payload(4 * count);
  detail::read_exact(in, payload.data(), payload.size(), "payload");
  std::vector<double> data(count);
  for (std::uint64_t j = 0; j < count; ++j) {
    const float f = std::bit_cast<float>(detail::get_u32(payload.data() + 4 * j));
    if (!std::isfinite(f)) throw FormatError("ZCT1 payload has a non-finite value");
    data[j] = static_cast<double>(f);
  }
  return Tensor(std::move(dims), std::move(data));
}

inline Tensor decode_tensor(const std::string& bytes) {
  std::istringstream in(bytes);
  Tensor t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("trailing bytes after ZCT1 tensor");
  return t;
}

inline void save_tensor(const fs::path& path, const Tensor& t) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const fs::path& path) {
  return decode_tensor(detail::read_file(path));
}

// The value a double takes after a trip through the 32-bit file format.
inline double to_file_precision(double v) {
  return static_cast<double>(static_cast<float>(v));
}

// Maps are stored as rank-2 (height, width) tensors.
inline Tensor map_to_tensor(const SaliencyMap& map) {
  return Tensor({map.height, map.width}, map.values);
}

inline SaliencyMap tensor_to_map(const Tensor& t, std::size_t class_idx = 0,
                                 std::string layer = "file") {
  if (t.rank() != 2) throw FormatError("saliency map tensor must be rank 2");
  SaliencyMap map(t.dim(0), t.dim(1), class_idx, std::move(layer));
  for (std::size_t j = 0; j < t.size(); ++j) {
    if (t[j] < 0.0) throw FormatError("saliency map has a negative value");
    map.values[j] = t[j];
  }
  return map;
}

inline void save_map(const fs::path& path, const SaliencyMap& map) {
  save_tensor(path, map_to_tensor(map));
}

inline SaliencyMap load_map(const fs::path& path) {
  return tensor_to_map(load_tensor(path));
}

inline Tensor segmap_to_tensor(const SegMap& seg) {
  std::vector<double> v(seg.labels.begin(), seg.labels.end());
  return Tensor({seg.height, seg.width}, std::move(v));
}

inline SegMap tensor_to_segmap(const Tensor& t) {
  if (t.rank() != 2) throw FormatError("segmentation tensor must be rank 2");
  SegMap seg(t.dim(0), t.dim(1));
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double v = t[j];
    if (v < 0.0 || v != std::floor(v) || v > 1e6)
      throw FormatError("segmentation label is not a small nonnegative integer");
    seg.labels[j] = static_cast<std::uint32_t>(v);
  }
  return seg;
}

inline void save_segmap(const fs::path& path, const SegMap& seg) {
  save_tensor(path, segmap_to_tensor(seg));
}

inline SegMap load_segmap(const fs::path& path) {
  return tensor_to_segmap(load_tensor(path));
}

// "xMin yMin xMax yMax\n"
inline std::string format_box(const BBox& b) {
  return std::to_string(b.x_min) + ' ' + std::to_string(b.y_min) + ' ' +
         std::to_string(b.x_max) + ' ' + std::to_string(b.y_max) + '\n';
}

inline std::vector<BBox> parse_boxes(const std::string& text) {
  std::istringstream in(text);
  std::vector<BBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long v[4];
    if (!(ls >> v[0] >> v[1] >> v[2] >> v[3]))
      throw FormatError("malformed box line: " + line);
    std::string rest;
    if (ls >> rest) throw FormatError("malformed box line: " + line);
    for (long long x : v)
      if (x < 0) throw FormatError("negative box coordinate: " + line);
    BBox b{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]),
           static_cast<std::size_t>(v[2]), static_cast<std::size_t>(v[3])};
    if (b.x_min > b.x_max || b.y_min > b.y_max)
      throw FormatError("inverted box: " + line);
    boxes.push_back(b);
  }
  return boxes;
}

// Shortest round-trip decimal, always with a fractional part ("50.0").
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// --- model files ---------------------------------------------------------

namespace detail {

using nlohmann::json;

inline std::size_t json_size(const json& j, const char* key,
                             const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing \"" + key + "\"");
  const json& v = j.at(key);
  if (!v.is_number_unsigned())
    throw FormatError(where + ": \"" + key + "\" must be a nonnegative integer");
  return v.get<std::size_t>();
}

inline std::array<std::size_t, 2> json_pair(const json& j, const char* key,
                                            std::array<std::size_t, 2> fallback,
                                            const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_number_unsigned()) {
    const auto s = v.get<std::size_t>();
    return {s, s};
  }
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() ||
      !v[1].is_number_unsigned())
    throw FormatError(where + ": \"" + key + "\" must be an integer or [h, w]");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

inline bool json_bool(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return false;
  if (!j.at(key).is_boolean())
    throw FormatError(where + ": \"" + key + "\" must be a boolean");
  return j.at(key).get<bool>();
}

inline LayerSpec layer_from_json(const json& j, std::size_t index) {
  std::string where = "layer " + std::to_string(index);
  if (!j.is_object()) throw FormatError(where + ": not an object");
  if (!j.contains("name") || !j.at("name").is_string())
    throw FormatError(where + ": missing string \"name\"");
  LayerSpec spec;
  spec.name = j.at("name").get<std::string>();
  where = "layer '" + spec.name + "'";
  if (!j.contains("kind") || !j.at("kind").is_string())
    throw FormatError(where + ": missing string \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    Conv2d c;
    c.in_channels = json_size(j, "in_channels", where);
    c.out_channels = json_size(j, "out_channels", where);
    const auto k = json_pair(j, "kernel", {0, 0}, where);
    if (!j.contains("kernel")) throw FormatError(where + ": missing \"kernel\"");
    const auto s = json_pair(j, "stride", {1, 1}, where);
    const auto p = json_pair(j, "padding", {0, 0}, where);
    c.kernel_h = k[0];
    c.kernel_w = k[1];
    c.stride_h = s[0];
    c.stride_w = s[1];
    c.pad_h = p[0];
    c.pad_w = p[1];
    c.has_bias = json_bool(j, "bias", where);
    spec.kind = c;
  } else if (kind == "relu") {
    spec.kind = ReLU{};
  } else if (kind == "maxpool") {
    MaxPool m;
    if (!j.contains("kernel")) throw FormatError(where + ": missing \"kernel\"");
    const auto k = json_pair(j, "kernel", {2, 2}, where);
    const auto s = json_pair(j, "stride", k, where);
    m.kernel_h = k[0];
    m.kernel_w = k[1];
    m.stride_h = s[0];
    m.stride_w = s[1];
    spec.kind = m;
  } else if (kind == "gap") {
    spec.kind = GlobalAvgPool{};
  } else if (kind == "flatten") {
    spec.kind = Flatten{};
  } else if (kind == "linear") {
    Linear l;
    l.in_dim = json_size(j, "in_dim", where);
    l.out_dim = json_size(j, "out_dim", where);
    l.has_bias = json_bool(j, "bias", where);
    spec.kind = l;
  } else {
    throw FormatError(where + ": unknown kind \"" + kind + "\"");
  }
  return spec;
}

inline json layer_to_json(const LayerSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["kind"] = std::string(kind_name(spec.kind));
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Conv2d>) {
          j["in_channels"] = k.in_channels;
          j["out_channels"] = k.out_channels;
          j["kernel"] = {k.kernel_h, k.kernel_w};
          j["stride"] = {k.stride_h, k.stride_w};
          j["padding"] = {k.pad_h, k.pad_w};
          j["bias"] = k.has_bias;
        } else if constexpr (std::is_same_v<K, MaxPool>) {
          j["kernel"] = {k.kernel_h, k.kernel_w};
          j["stride"] = {k.stride_h, k.stride_w};
        } else if constexpr (std::is_same_v<K, Linear>) {
          j["in_dim"] = k.in_dim;
          j["out_dim"] = k.out_dim;
          j["bias"] = k.has_bias;
        }
      },
      spec.kind);
  return j;
}

inline bool has_params(const LayerSpec& s) { return s.is<Conv2d>() || s.is<Linear>(); }

inline bool has_bias(const LayerSpec& s) {
  if (const auto* c = std::get_if<Conv2d>(&s.kind)) return c->has_bias;
  if (const auto* l = std::get_if<Linear>(&s.kind)) return l->has_bias;
  return false;
}

}  // namespace detail

// Parses a model document; weights are read from `weights_dir` /
// "weights_file".
inline ModelGraph model_from_json(const std::string& text,
                                  const fs::path& weights_dir) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("model file must be a JSON object");
  if (!doc.contains("input_shape") || !doc["input_shape"].is_array() ||
      doc["input_shape"].size() != 3)
    throw FormatError("model file needs \"input_shape\": [C, H, W]");
  ModelGraph::Shape3 shape{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!doc["input_shape"][i].is_number_unsigned())
      throw FormatError("input_shape entries must be nonnegative integers");
    shape[i] = doc["input_shape"][i].get<std::size_t>();
  }
  const std::size_t classes = detail::json_size(doc, "class_count", "model");
  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw FormatError("model file needs a \"layers\" array");
  if (!doc.contains("weights_file") || !doc["weights_file"].is_string())
    throw FormatError("model file needs a string \"weights_file\"");

  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < doc["layers"].size(); ++i)
    layers.push_back(detail::layer_from_json(doc["layers"][i], i));

  const fs::path weights_path =
      weights_dir / doc["weights_file"].get<std::string>();
  std::ifstream blob(weights_path, std::ios::binary);
  if (!blob) throw IoError("cannot open weights file " + weights_path.string());

  ParamSet params(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!detail::has_params(layers[i])) continue;
    try {
      params[i].weight = read_tensor(blob);
      if (detail::has_bias(layers[i])) params[i].bias = read_tensor(blob);
    } catch (const FormatError& e) {
      throw FormatError("weights for layer '" + layers[i].name + "': " + e.what());
    }
  }
  if (blob.peek() != std::char_traits<char>::eof())
    throw FormatError("weights file has trailing data after the last layer");
  return ModelGraph(shape, std::move(layers), std::move(params), classes);
}

inline ModelGraph load_model(const fs::path& path) {
  return model_from_json(detail::read_file(path), path.parent_path());
}

// Writes `path` and a weights blob named `weights_file` next to it.
inline void save_model(const fs::path& path, const ModelGraph& model,
                       const std::string& weights_file = "weights.zct") {
  using detail::json;
  json doc;
  const auto& s = model.input_shape();
  doc["input_shape"] = {s[0], s[1], s[2]};
  doc["class_count"] = model.class_count();
  doc["layers"] = json::array();
  std::string blob;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const LayerSpec& spec = model.layer(i);
    doc["layers"].push_back(detail::layer_to_json(spec));
    if (!detail::has_params(spec)) continue;
    blob += encode_tensor(model.params()[i].weight);
    if (detail::has_bias(spec)) blob += encode_tensor(model.params()[i].bias);
  }
  doc["weights_file"] = weights_file;
  detail::write_file(path, doc.dump(2) + "\n");
  detail::write_file(path.parent_path() / weights_file, blob);
}

// --- localization records --------------------------------------------------

inline BBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4)
    throw FormatError("box must be [xMin, yMin, xMax, yMax]");
  std::array<std::size_t, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number_unsigned())
      throw FormatError("box coordinates must be nonnegative integers");
    v[i] = j[i].get<std::size_t>();
  }
  BBox b{v[0], v[1], v[2], v[3]};
  if (b.x_min > b.x_max || b.y_min > b.y_max) throw FormatError("inverted box");
  return b;
}

inline nlohmann::json box_to_json(const BBox& b) {
  return {b.x_min, b.y_min, b.x_max, b.y_max};
}

// {"gt_class": c, "gt_boxes": [[..]], "ranking": [..],
//  "boxes": {"<class>": [..]}}
inline LocRecord loc_record_from_json(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("record is not valid JSON: ") + e.what());
  }
  LocRecord r;
  r.gt_class = detail::json_size(doc, "gt_class", "record");
  if (!doc.contains("gt_boxes") || !doc["gt_boxes"].is_array())
    throw FormatError("record needs a \"gt_boxes\" array");
  for (const auto& b : doc["gt_boxes"]) r.gt_boxes.push_back(box_from_json(b));
  if (!doc.contains("ranking") || !doc["ranking"].is_array())
    throw FormatError("record needs a \"ranking\" array");
  for (const auto& c : doc["ranking"]) {
    if (!c.is_number_unsigned()) throw FormatError("ranking entries must be class ids");
    const auto id = c.get<std::size_t>();
    if (std::find(r.predicted_ranking.begin(), r.predicted_ranking.end(), id) !=
        r.predicted_ranking.end())
      throw FormatError("ranking lists class " + std::to_string(id) + " twice");
    r.predicted_ranking.push_back(id);
  }
  if (doc.contains("boxes")) {
    if (!doc["boxes"].is_object()) throw FormatError("\"boxes\" must be an object");
    for (const auto& [key, val] : doc["boxes"].items()) {
      std::size_t id = 0;
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc() || ptr != key.data() + key.size())
        throw FormatError("box key \"" + key + "\" is not a class id");
      r.predicted_box_per_class[id] = box_from_json(val);
    }
  }
  return r;
}

inline std::string loc_record_to_json(const LocRecord& r) {
  nlohmann::json doc;
  doc["gt_class"] = r.gt_class;
  doc["gt_boxes"] = nlohmann::json::array();
  for (const auto& b : r.gt_boxes) doc["gt_boxes"].push_back(box_to_json(b));
  doc["ranking"] = r.predicted_ranking;
  doc["boxes"] = nlohmann::json::object();
  for (const auto& [c, b] : r.predicted_box_per_class)
    doc["boxes"][std::to_string(c)] = box_to_json(b);
  return doc.dump(2) + "\n";
}

}  // namespace zoomcam
