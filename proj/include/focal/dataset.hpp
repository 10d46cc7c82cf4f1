#pragma once

// On-disk layouts used by the command-line pipeline.
//
// Dataset directory:  <id>.ppm, <id>_mask.pgm, manifest.csv
// Parameter directory: W1.ftz, b1.ftz, W2.ftz, b2.ftz, manifest.txt

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "focal/error.hpp"
#include "focal/extractor.hpp"
#include "focal/io.hpp"
#include "focal/synthetic.hpp"

namespace focal {

inline constexpr const char* kManifestHeader = "id,image,mask,seed,role,pair_id,forged_fraction";

struct DatasetItem {
  std::string id;
  SyntheticSample sample;
};

inline std::string sample_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "s" + digits;
}

inline std::string manifest_csv(const std::vector<DatasetItem>& items) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& it : items) {
    const auto& s = it.sample;
    out += it.id + "," + it.id + ".ppm," + it.id + "_mask.pgm," + std::to_string(s.seed) + "," + role_name(s.role) +
           "," + std::to_string(s.pair_id) + "," + format_number(s.mask.forged_fraction()) + "\n";
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetItem>& items) {
  std::filesystem::create_directories(dir);
  for (const auto& it : items) {
    save_image(it.sample.image, dir / (it.id + ".ppm"));
    save_mask(it.sample.mask, dir / (it.id + "_mask.pgm"));
  }
  write_text(dir / "manifest.csv", manifest_csv(items));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename Int>
Int parse_int(const std::string& text, const std::string& what) {
  Int v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) throw FormatError("bad " + what + " '" + text + "'");
  return v;
}

inline SampleRole parse_role(const std::string& name) {
  for (auto r : {SampleRole::kForged, SampleRole::kPairForged, SampleRole::kPairSource, SampleRole::kPristine})
    if (name == role_name(r)) return r;
  throw FormatError("unknown sample role '" + name + "'");
}

}  // namespace detail

/// Loads every sample listed in manifest.csv. Masks must match the image's
/// feature grid for some integer patch size.
inline std::vector<DatasetItem> load_dataset(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.csv";
  if (!std::filesystem::is_regular_file(manifest)) throw IoError("no manifest.csv in " + dir.string());
  std::istringstream in(read_text(manifest));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw FormatError(manifest.string() + ": unexpected header");
  std::vector<DatasetItem> items;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = manifest.string() + ":" + std::to_string(line_no) + ": ";
    if (f.size() != 7) throw FormatError(where + "expected 7 fields");
    DatasetItem it;
    it.id = f[0];
    try {
      it.sample.image = load_image(dir / f[1]);
      it.sample.mask = load_mask(dir / f[2]);
      it.sample.seed = detail::parse_int<std::uint64_t>(f[3], "seed");
      it.sample.role = detail::parse_role(f[4]);
      it.sample.pair_id = detail::parse_int<long>(f[5], "pair_id");
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    const auto h = it.sample.image.dims()[0], w = it.sample.image.dims()[1];
    const auto mh = it.sample.mask.height(), mw = it.sample.mask.width();
    if (h % mh != 0 || w % mw != 0 || h / mh != w / mw)
      throw DimensionError(where + "mask " + std::to_string(mh) + "x" + std::to_string(mw) +
                           " is not a patch grid of the " + std::to_string(h) + "x" + std::to_string(w) + " image");
    items.push_back(std::move(it));
  }
  if (items.empty()) throw FormatError(manifest.string() + ": no samples listed");
  return items;
}

inline std::vector<SyntheticSample> samples_of(const std::vector<DatasetItem>& items) {
  std::vector<SyntheticSample> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.sample);
  return out;
}

// ---------------------------------------------------------------------------
// Extractor parameters.

inline void save_params(const ExtractorParams& p, const std::filesystem::path& dir, const KeyValueFile& extra = {}) {
  const auto& s = p.shape();
  auto as_tensor = [](std::span<const float> v, std::vector<std::size_t> dims) {
    return Tensor<float>(std::move(dims), std::vector<float>(v.begin(), v.end()));
  };
  std::filesystem::create_directories(dir);
  save_tensor(as_tensor(p.w1(), {s.input_dim(), s.hidden}), dir / "W1.ftz");
  save_tensor(as_tensor(p.b1(), {s.hidden}), dir / "b1.ftz");
  save_tensor(as_tensor(p.w2(), {s.hidden, s.embed}), dir / "W2.ftz");
  save_tensor(as_tensor(p.b2(), {s.embed}), dir / "b2.ftz");
  KeyValueFile kv;
  kv.set("patch", std::to_string(s.patch));
  kv.set("hidden", std::to_string(s.hidden));
  kv.set("embed", std::to_string(s.embed));
  for (const auto& k : extra.keys()) kv.set(k, extra.get(k));
  write_text(dir / "manifest.txt", kv.to_string());
}

inline ExtractorParams load_params(const std::filesystem::path& dir) {
  const auto kv = KeyValueFile::load(dir / "manifest.txt");
  ExtractorShape s;
  try {
    s.patch = detail::parse_int<std::size_t>(kv.get("patch"), "patch");
    s.hidden = detail::parse_int<std::size_t>(kv.get("hidden"), "hidden");
    s.embed = detail::parse_int<std::size_t>(kv.get("embed"), "embed");
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + "/manifest.txt: " + e.what());
  }
  ExtractorParams p(s);
  auto fill = [&](const char* name, std::span<float> dst, std::vector<std::size_t> dims) {
    const auto t = load_tensor(dir / name);
    if (t.dims() != dims) throw DimensionError(std::string(name) + " does not match the manifest shape");
    std::copy(t.values().begin(), t.values().end(), dst.begin());
  };
  fill("W1.ftz", p.w1(), {s.input_dim(), s.hidden});
  fill("b1.ftz", p.b1(), {s.hidden});
  fill("W2.ftz", p.w2(), {s.hidden, s.embed});
  fill("b2.ftz", p.b2(), {s.embed});
  return p;
}

}  // namespace focal
