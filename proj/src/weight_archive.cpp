#include "mcgkt/weight_archive.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mcgkt {

namespace {

constexpr char kMagic[] = "MCGW1\n";
constexpr std::size_t kMagicLen = 6;

std::int64_t dims_product(const std::vector<Index>& dims) {
  std::int64_t p = 1;
  for (Index d : dims) p *= d;
  return p;
}

}  // namespace

void WeightArchive::add(const std::string& name, const std::vector<Index>& dims,
                        const float* data) {
  if (index_.count(name)) throw UsageError("weight archive: duplicate entry " + name);
  ArchiveEntry e;
  e.name = name;
  e.dims = dims;
  e.offset = blob_.size() * sizeof(float);
  e.length = static_cast<std::uint64_t>(dims_product(dims)) * sizeof(float);
  blob_.insert(blob_.end(), data, data + dims_product(dims));
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
}

void WeightArchive::add(const std::string& name, const Shape& shape, const Array& values) {
  add(name, {shape.n, shape.c, shape.h, shape.w}, values.data());
}

const ArchiveEntry& WeightArchive::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("weight archive: no entry named " + name);
  return entries_[it->second];
}

Eigen::Map<const Array> WeightArchive::values(const std::string& name) const {
  const ArchiveEntry& e = entry(name);
  return Eigen::Map<const Array>(blob_.data() + e.offset / sizeof(float),
                                 static_cast<Index>(e.length / sizeof(float)));
}

void WeightArchive::set_header(const std::string& key, const std::string& value) {
  for (auto& kv : header_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  header_.emplace_back(key, value);
}

const std::string* WeightArchive::header(const std::string& key) const {
  for (const auto& kv : header_)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

void WeightArchive::save(const std::filesystem::path& path) const {
  std::ostringstream manifest;
  for (const auto& [key, value] : header_) manifest << "# " << key << " " << value << "\n";
  for (const ArchiveEntry& e : entries_) {
    manifest << e.name << " f32 ";
    for (std::size_t i = 0; i < e.dims.size(); ++i)
      manifest << (i ? "," : "") << e.dims[i];
    manifest << " " << e.offset << " " << e.length << "\n";
  }
  const std::string text = manifest.str();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("weight archive: cannot open " + path.string() + " for writing");
  f.write(kMagic, kMagicLen);
  std::uint64_t len = text.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  f.write(lenbuf, 8);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.write(reinterpret_cast<const char*>(blob_.data()),
          static_cast<std::streamsize>(blob_.size() * sizeof(float)));
  if (!f) throw IoError("weight archive: write failed for " + path.string());
}

WeightArchive WeightArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("weight archive: cannot open " + path.string());

  char magic[kMagicLen];
  if (!f.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw FormatError("weight archive: bad magic in " + path.string());

  char lenbuf[8];
  if (!f.read(lenbuf, 8)) throw FormatError("weight archive: truncated header in " + path.string());
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);

  std::string text(len, '\0');
  if (!f.read(text.data(), static_cast<std::streamsize>(len)))
    throw FormatError("weight archive: truncated manifest in " + path.string());

  WeightArchive a;
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() % sizeof(float) != 0)
    throw FormatError("weight archive: blob size not a multiple of 4 in " + path.string());
  a.blob_.resize(raw.size() / sizeof(float));
  std::memcpy(a.blob_.data(), raw.data(), raw.size());

  std::istringstream ms(text);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      a.header_.emplace_back(key, value);
      continue;
    }
    std::istringstream ls(line);
    ArchiveEntry e;
    std::string dtype, dims;
    if (!(ls >> e.name >> dtype >> dims >> e.offset >> e.length))
      throw FormatError("weight archive: malformed manifest line: " + line);
    if (dtype != "f32")
      throw FormatError("weight archive: unsupported dtype " + dtype + " for " + e.name);
    std::istringstream ds(dims);
    std::string tok;
    while (std::getline(ds, tok, ',')) e.dims.push_back(std::stoll(tok));
    if (e.dims.empty()) throw FormatError("weight archive: entry " + e.name + " has no dims");
    if (static_cast<std::uint64_t>(dims_product(e.dims)) * sizeof(float) != e.length)
      throw FormatError("weight archive: entry " + e.name + " length does not match its shape");
    if (e.offset % sizeof(float) != 0)
      throw FormatError("weight archive: entry " + e.name + " offset not float-aligned");
    if (e.offset + e.length > a.blob_.size() * sizeof(float))
      throw FormatError("weight archive: entry " + e.name + " extends past the blob (truncated file?)");
    if (a.index_.count(e.name))
      throw FormatError("weight archive: duplicate entry " + e.name);
    a.index_[e.name] = a.entries_.size();
    a.entries_.push_back(std::move(e));
  }

  // entries must not overlap
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  spans.reserve(a.entries_.size());
  for (const auto& e : a.entries_) spans.emplace_back(e.offset, e.length);
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].first + spans[i - 1].second)
      throw FormatError("weight archive: overlapping entries in " + path.string());

  return a;
}

std::string ImportReport::str() const {
  std::ostringstream os;
  os << "copied " << copied.size() << ", skipped by shape " << skipped_by_shape.size()
     << ", unmapped slots " << unmapped_slots.size() << "\n";
  for (const auto& m : copied) os << "  copied  " << m.archive_name << " -> " << m.slot << "\n";
  for (const auto& m : skipped_by_shape)
    os << "  skipped " << m.archive_name << " -> " << m.slot << " (shape mismatch)\n";
  for (const auto& s : unmapped_slots) os << "  unmapped " << s << "\n";
  return os.str();
}

std::vector<MappingEntry> default_vgg_mapping(const WeightArchive& archive) {
  std::vector<MappingEntry> mapping;
  for (int stage = 1; stage <= 3; ++stage) {
    int target = 1;
    for (int k = 1; k <= 3 && target <= 3; ++k) {
      const std::string prefix =
          "conv" + std::to_string(stage) + "_" + std::to_string(k);
      if (!archive.has(prefix + ".weight")) continue;
      const std::string slot = "enc" + std::to_string(stage) + ".conv" + std::to_string(target);
      mapping.push_back({prefix + ".weight", slot + ".weight"});
      if (archive.has(prefix + ".bias")) mapping.push_back({prefix + ".bias", slot + ".bias"});
      ++target;
    }
  }
  return mapping;
}

namespace {

// Unit extents are insignificant when matching external tensors: a bias
// stored as [64] fills a [1,64,1,1] slot.
std::vector<Index> squeezed(const std::vector<Index>& dims) {
  std::vector<Index> out;
  for (Index d : dims)
    if (d != 1) out.push_back(d);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

ImportReport import_ekt(MCGKTModel& model, const WeightArchive& archive,
                        std::vector<MappingEntry> mapping) {
  if (mapping.empty()) mapping = default_vgg_mapping(archive);

  ImportReport report;
  std::vector<std::string> touched;
  for (const MappingEntry& m : mapping) {
    if (!archive.has(m.archive_name))
      throw MappingError("import: mapped name " + m.archive_name + " is absent from the archive");
    if (!model.params().contains(m.slot))
      throw MappingError("import: model has no parameter slot " + m.slot);
    Tensor& dst = model.params().at(m.slot);
    const ArchiveEntry& e = archive.entry(m.archive_name);
    std::vector<Index> want{dst.shape().n, dst.shape().c, dst.shape().h, dst.shape().w};
    if (squeezed(e.dims) != squeezed(want)) {
      report.skipped_by_shape.push_back(m);
      continue;
    }
    dst.values() = archive.values(m.archive_name);
    report.copied.push_back(m);
    touched.push_back(m.slot);
  }

  for (int block = 1; block <= 3; ++block) {
    for (int k = 1; k <= 3; ++k) {
      const std::string slot =
          "enc" + std::to_string(block) + ".conv" + std::to_string(k);
      if (std::find(touched.begin(), touched.end(), slot + ".weight") == touched.end())
        report.unmapped_slots.push_back(slot);
    }
  }
  return report;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"base_channels", c.base_channels},
                        {"levels", c.levels},
                        {"se_ratio", c.se_ratio},
                        {"enable_ikt", c.enable_ikt},
                        {"enable_mlcg", c.enable_mlcg},
                        {"skip_fusion", c.skip_fusion == SkipFusion::sum ? "sum" : "concat"},
                        {"residual_output", c.residual_output},
                        {"input_channels", c.input_channels},
                        {"output_channels", c.output_channels}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.base_channels = j.at("base_channels");
  c.levels = j.at("levels");
  c.se_ratio = j.at("se_ratio");
  c.enable_ikt = j.at("enable_ikt");
  c.enable_mlcg = j.at("enable_mlcg");
  c.skip_fusion = j.at("skip_fusion") == "sum" ? SkipFusion::sum : SkipFusion::concat;
  c.residual_output = j.at("residual_output");
  c.input_channels = j.at("input_channels");
  c.output_channels = j.at("output_channels");
  return c;
}

}  // namespace

void save_model(const MCGKTModel& model, const std::filesystem::path& path) {
  WeightArchive a;
  a.set_header("format", "mcgkt-model/1");
  a.set_header("model_config", config_to_json(model.config()).dump());
  for (const std::string& name : model.params().names()) {
    const Tensor& t = model.params().at(name);
    a.add(name, t.shape(), t.values());
  }
  a.save(path);
}

MCGKTModel load_model(const std::filesystem::path& path) {
  WeightArchive a = WeightArchive::load(path);
  const std::string* format = a.header("format");
  if (!format || *format != "mcgkt-model/1")
    throw FormatError("model load: " + path.string() + " is not a model archive");
  const std::string* cfg_text = a.header("model_config");
  if (!cfg_text) throw FormatError("model load: missing model_config header in " + path.string());

  ModelConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(*cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model load: bad model_config header: ") + e.what());
  }

  auto factory = [&a, &path](const std::string& name, const Shape& shape) {
    if (!a.has(name))
      throw FormatError("model load: " + path.string() + " is missing parameter " + name);
    const ArchiveEntry& e = a.entry(name);
    std::vector<Index> want{shape.n, shape.c, shape.h, shape.w};
    if (e.dims != want)
      throw FormatError("model load: parameter " + name + " has mismatched shape in " +
                        path.string());
    return Tensor::from(shape, a.values(name));
  };
  return MCGKTModel::from_params(cfg, factory);
}

}  // namespace mcgkt
