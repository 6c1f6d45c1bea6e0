#include "wsda/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "wsda/util.hpp"

namespace wsda::gen {

using nlohmann::json;

std::string to_string(DomainTag t) { return t == DomainTag::source ? "source" : "target"; }
std::string to_string(LabelMode m) { return m == LabelMode::full ? "full" : "weak"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }
std::string to_string(ClutterLevel c) {
  switch (c) {
    case ClutterLevel::none: return "none";
    case ClutterLevel::low: return "low";
    case ClutterLevel::high: return "high";
  }
  return "none";
}

DomainTag domain_from_string(const std::string& s) {
  if (s == "source") return DomainTag::source;
  if (s == "target") return DomainTag::target;
  throw std::invalid_argument("unknown domain tag: " + s);
}
LabelMode label_mode_from_string(const std::string& s) {
  if (s == "full") return LabelMode::full;
  if (s == "weak") return LabelMode::weak;
  throw std::invalid_argument("unknown label mode: " + s);
}
Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw std::invalid_argument("unknown split: " + s);
}
ClutterLevel clutter_from_string(const std::string& s) {
  if (s == "none") return ClutterLevel::none;
  if (s == "low") return ClutterLevel::low;
  if (s == "high") return ClutterLevel::high;
  throw std::invalid_argument("unknown clutter level: " + s);
}

std::string encode_ppm(const Image& img) {
  std::string out = strfmt("P6\n%d %d\n255\n", img.w, img.h);
  out.reserve(out.size() + img.rgb.size());
  for (double v : img.rgb) {
    int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.push_back(static_cast<char>(b));
  }
  return out;
}

namespace {

// Reads one whitespace-delimited token from a netpbm header.
std::string next_token(const std::string& s, size_t& pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return s.substr(start, pos - start);
}

}  // namespace

Image decode_ppm(const std::string& bytes) {
  size_t pos = 0;
  if (next_token(bytes, pos) != "P6") throw std::runtime_error("decode_ppm: not a P6 file");
  const int w = std::stoi(next_token(bytes, pos));
  const int h = std::stoi(next_token(bytes, pos));
  const int maxv = std::stoi(next_token(bytes, pos));
  if (maxv != 255) throw std::runtime_error("decode_ppm: unsupported max value");
  ++pos;  // single whitespace after header
  if (bytes.size() - pos < static_cast<size_t>(w) * h * 3) throw std::runtime_error("decode_ppm: truncated");
  Image img(h, w);
  for (size_t i = 0; i < static_cast<size_t>(w) * h * 3; ++i)
    img.rgb[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return img;
}

std::string encode_pgm(const MaskGrid& mask) {
  std::string out = strfmt("P5\n%d %d\n255\n", mask.w, mask.h);
  out.reserve(out.size() + mask.v.size());
  for (uint8_t p : mask.v) out.push_back(static_cast<char>(p ? 255 : 0));
  return out;
}

MaskGrid decode_pgm(const std::string& bytes) {
  size_t pos = 0;
  if (next_token(bytes, pos) != "P5") throw std::runtime_error("decode_pgm: not a P5 file");
  const int w = std::stoi(next_token(bytes, pos));
  const int h = std::stoi(next_token(bytes, pos));
  const int maxv = std::stoi(next_token(bytes, pos));
  if (maxv != 255) throw std::runtime_error("decode_pgm: unsupported max value");
  ++pos;
  if (bytes.size() - pos < static_cast<size_t>(w) * h) throw std::runtime_error("decode_pgm: truncated");
  MaskGrid m(h, w);
  for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i)
    m.v[i] = static_cast<unsigned char>(bytes[pos + i]) >= 128 ? 1 : 0;
  return m;
}

std::string image_path(const std::string& dir, int index) {
  return dir + strfmt("/images/%06d.ppm", index);
}
std::string mask_path(const std::string& dir, int index, int obj) {
  return dir + strfmt("/masks/%06d_%02d.pgm", index, obj);
}

namespace {

json config_to_json(const DomainConfig& c) {
  json j;
  j["palette"] = c.palette;
  j["background"] = c.background;
  j["noise_sigma"] = c.noise_sigma;
  j["fog_alpha"] = c.fog_alpha;
  j["brightness_shift"] = c.brightness_shift;
  j["clutter_level"] = to_string(c.clutter);
  j["class_frequencies"] = c.class_frequencies;
  j["label_mode"] = to_string(c.label_mode);
  return j;
}

DomainConfig config_from_json(const json& j) {
  DomainConfig c;
  c.palette = j.at("palette").get<std::array<Rgb, kNumClasses>>();
  c.background = j.at("background").get<Rgb>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.fog_alpha = j.at("fog_alpha").get<double>();
  c.brightness_shift = j.at("brightness_shift").get<double>();
  c.clutter = clutter_from_string(j.at("clutter_level").get<std::string>());
  c.class_frequencies = j.at("class_frequencies").get<std::array<double, kNumClasses>>();
  c.label_mode = label_mode_from_string(j.at("label_mode").get<std::string>());
  return c;
}

json manifest_to_json(const DatasetManifest& m, const DomainConfig& c, uint64_t digest) {
  json j;
  j["n_images"] = m.n_images;
  j["domain"] = to_string(m.domain);
  j["label_mode"] = to_string(m.label_mode);
  j["generator_seed"] = m.generator_seed;
  j["split"] = to_string(m.split);
  j["height"] = m.height;
  j["width"] = m.width;
  j["num_classes"] = m.num_classes;
  j["domain_config"] = config_to_json(c);
  j["digest"] = hex_u64(digest);
  return j;
}

struct GeneratedImage {
  std::string ppm;
  std::vector<std::string> pgms;
  std::string ann_line;
};

GeneratedImage generate_one(const DatasetManifest& m, const DomainConfig& cfg, int index) {
  RngStream root = RngStream(m.generator_seed).fork(to_string(m.split)).fork(static_cast<uint64_t>(index));
  SceneSpec scene = sample_scene(root.fork("scene"), cfg, m.domain);
  auto [img, masks] = render_scene(scene, cfg, root.fork("noise"));
  Annotation ann = derive_annotation(scene, masks, m.label_mode);

  GeneratedImage out;
  out.ppm = encode_ppm(img);
  json line;
  line["image"] = index;
  line["boxes"] = ann.boxes;
  line["classes"] = ann.classes;
  if (ann.has_attributes) {
    line["angles"] = ann.angles;
    line["depths"] = ann.depths;
    line["num_masks"] = ann.masks.size();
    for (const MaskGrid& mask : ann.masks) out.pgms.push_back(encode_pgm(mask));
  }
  out.ann_line = line.dump();
  return out;
}

}  // namespace

uint64_t write_dataset(const DatasetManifest& manifest, const DomainConfig& config, const std::string& dir) {
  config.validate();
  if (config.label_mode != manifest.label_mode)
    throw std::invalid_argument("write_dataset: manifest/config label_mode mismatch");

  // generate in memory first (parallel over images), digest, then write
  std::vector<GeneratedImage> gen(static_cast<size_t>(manifest.n_images));
  parallel_for(manifest.n_images, [&](int i) { gen[static_cast<size_t>(i)] = generate_one(manifest, config, i); });

  Digest digest;
  for (const GeneratedImage& g : gen) {
    digest.update_string(g.ppm);
    for (const std::string& p : g.pgms) digest.update_string(p);
    digest.update_string(g.ann_line);
  }

  const std::string manifest_file = dir + "/manifest.json";
  if (file_exists(manifest_file)) {
    json existing = json::parse(read_file(manifest_file));
    if (existing.at("digest").get<std::string>() != hex_u64(digest.value()))
      throw std::runtime_error("write_dataset: existing dataset at " + dir +
                               " has a mismatching digest (corrupt or generated from other settings)");
    return digest.value();  // already on disk, nothing to rewrite
  }

  ensure_dir(dir);
  ensure_dir(dir + "/images");
  if (manifest.label_mode == LabelMode::full) ensure_dir(dir + "/masks");
  std::string ann_all;
  for (int i = 0; i < manifest.n_images; ++i) {
    const GeneratedImage& g = gen[static_cast<size_t>(i)];
    write_file(image_path(dir, i), g.ppm);
    for (size_t k = 0; k < g.pgms.size(); ++k)
      write_file(mask_path(dir, i, static_cast<int>(k)), g.pgms[k]);
    ann_all += g.ann_line;
    ann_all += '\n';
  }
  if (manifest.n_images > 0) write_file(dir + "/annotations.jsonl", ann_all);
  write_file(manifest_file, manifest_to_json(manifest, config, digest.value()).dump(2) + "\n");
  return digest.value();
}

DatasetReader::DatasetReader(const std::string& dir) : dir_(dir) {
  const std::string manifest_file = dir + "/manifest.json";
  if (!file_exists(manifest_file)) throw std::runtime_error("no dataset manifest at " + dir);
  json j = json::parse(read_file(manifest_file));
  manifest_.n_images = j.at("n_images").get<int>();
  manifest_.domain = domain_from_string(j.at("domain").get<std::string>());
  manifest_.label_mode = label_mode_from_string(j.at("label_mode").get<std::string>());
  manifest_.generator_seed = j.at("generator_seed").get<uint64_t>();
  manifest_.split = split_from_string(j.at("split").get<std::string>());
  manifest_.height = j.at("height").get<int>();
  manifest_.width = j.at("width").get<int>();
  manifest_.num_classes = j.at("num_classes").get<int>();
  config_ = config_from_json(j.at("domain_config"));

  records_.resize(static_cast<size_t>(manifest_.n_images));
  image_bytes_.resize(static_cast<size_t>(manifest_.n_images));
  if (manifest_.n_images == 0) return;

  std::ifstream ann(dir + "/annotations.jsonl");
  if (!ann) throw std::runtime_error("missing annotations.jsonl in " + dir);
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    json r = json::parse(line);
    const int idx = r.at("image").get<int>();
    Record& rec = records_.at(static_cast<size_t>(idx));
    rec.boxes = r.at("boxes").get<std::vector<Box>>();
    rec.classes = r.at("classes").get<std::vector<int>>();
    if (manifest_.label_mode == LabelMode::full) {
      rec.angles = r.at("angles").get<std::vector<double>>();
      rec.depths = r.at("depths").get<std::vector<double>>();
      rec.n_masks = r.at("num_masks").get<int>();
    }
  }
}

Image DatasetReader::image(int i) const {
  ++stats_.images;
  std::string& cached = image_bytes_.at(static_cast<size_t>(i));
  if (cached.empty()) cached = read_file(image_path(dir_, i));
  return decode_ppm(cached);
}

const std::vector<Box>& DatasetReader::boxes(int i) const {
  ++stats_.boxes;
  return records_.at(static_cast<size_t>(i)).boxes;
}

const std::vector<int>& DatasetReader::classes(int i) const {
  return records_.at(static_cast<size_t>(i)).classes;
}

std::vector<MaskGrid> DatasetReader::masks(int i) const {
  if (!has_attributes()) throw std::runtime_error("dataset " + dir_ + " has no mask labels");
  ++stats_.masks;
  const Record& rec = records_.at(static_cast<size_t>(i));
  std::vector<MaskGrid> out;
  out.reserve(static_cast<size_t>(rec.n_masks));
  for (int k = 0; k < rec.n_masks; ++k) out.push_back(decode_pgm(read_file(mask_path(dir_, i, k))));
  return out;
}

const std::vector<double>& DatasetReader::angles(int i) const {
  if (!has_attributes()) throw std::runtime_error("dataset " + dir_ + " has no pose labels");
  ++stats_.poses;
  return records_.at(static_cast<size_t>(i)).angles;
}

const std::vector<double>& DatasetReader::depths(int i) const {
  if (!has_attributes()) throw std::runtime_error("dataset " + dir_ + " has no pose labels");
  ++stats_.poses;
  return records_.at(static_cast<size_t>(i)).depths;
}

}  // namespace wsda::gen
