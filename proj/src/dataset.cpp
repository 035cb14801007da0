#include "transfer/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "transfer/errors.hpp"
#include "transfer/image.hpp"

namespace transfer {
namespace {

constexpr std::array<const char*, kGlyphCount> kGlyphNames = {"plus", "ring", "cross", "bars", "diamond", "square"};

// Glyph coverage at offset (u, v) in units of the glyph radius.
bool glyph_covers(Glyph g, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  if (au > 1.0 || av > 1.0) return false;
  switch (g) {
    case Glyph::kPlus: return au <= 0.22 || av <= 0.22;
    case Glyph::kRing: {
      const double r = std::hypot(u, v);
      return r >= 0.6 && r <= 1.0;
    }
    case Glyph::kCross: return std::abs(au - av) <= 0.28;
    case Glyph::kBars: return av >= 0.4 && av <= 0.8;
    case Glyph::kDiamond: return au + av <= 0.9;
    case Glyph::kSquare: return std::max(au, av) >= 0.72;
  }
  return false;
}

std::string class_name(int label) {
  const auto [a, b] = class_glyphs(label);
  return std::string(glyph_name(a)) + "-" + glyph_name(b);
}

std::string sample_filename(const std::string& cls, std::size_t index) {
  std::ostringstream os;
  os << cls << '/';
  os.width(5);
  os.fill('0');
  os << index << ".ppm";
  return os.str();
}

}  // namespace

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

const char* glyph_name(Glyph g) { return kGlyphNames[static_cast<std::size_t>(g)]; }

std::size_t max_synthetic_classes() { return kGlyphCount * (kGlyphCount - 1) / 2; }

std::pair<Glyph, Glyph> class_glyphs(int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= max_synthetic_classes())
    throw std::out_of_range("class_glyphs: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(max_synthetic_classes()) + ")");
  int k = label;
  for (std::size_t a = 0; a < kGlyphCount; ++a)
    for (std::size_t b = a + 1; b < kGlyphCount; ++b)
      if (k-- == 0) return {static_cast<Glyph>(a), static_cast<Glyph>(b)};
  return {};
}

Tensor render_glyph_sample(int label, std::size_t size, std::uint64_t seed) {
  if (size < 16) throw ConfigError("synthetic images must be at least 16 pixels wide");
  const auto [first, second] = class_glyphs(label);
  Rng rng(seed);
  const double s = static_cast<double>(size);
  const double radius = s / 6.0;
  const double jitter = s / 16.0;

  std::vector<double> px(size * size * 3);
  const double background = rng.uniform(0.15, 0.45);
  for (std::size_t i = 0; i < size * size; ++i) {
    const double level = background + rng.uniform(-0.12, 0.12);
    for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] = level + rng.uniform(-0.04, 0.04);
  }

  const std::size_t q1 = rng.index(4);
  std::size_t q2 = rng.index(3);
  if (q2 >= q1) ++q2;
  const bool swap = rng.bernoulli(0.5);
  const std::array<std::pair<Glyph, std::size_t>, 2> placed = {
      std::pair{swap ? second : first, q1}, std::pair{swap ? first : second, q2}};
  for (const auto& [glyph, quadrant] : placed) {
    const double cy = (quadrant / 2 == 0 ? 0.25 : 0.75) * s + rng.uniform(-jitter, jitter);
    const double cx = (quadrant % 2 == 0 ? 0.25 : 0.75) * s + rng.uniform(-jitter, jitter);
    const double scale = radius * rng.uniform(0.9, 1.1);
    std::array<double, 3> colour{};
    for (double& c : colour) c = rng.uniform(0.65, 1.0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / scale;
        const double v = (static_cast<double>(y) + 0.5 - cy) / scale;
        if (!glyph_covers(glyph, u, v)) continue;
        for (std::size_t c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = colour[c] + rng.uniform(-0.04, 0.04);
      }
  }
  for (double& v : px) v = quantize_unit(v);
  return Tensor({size, size, 3}, std::move(px));
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.label));
  return counts;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void Dataset::validate() const {
  const Shape expected{image_size, image_size, 3};
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes())
      throw DataError("dataset: label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(num_classes()) + ") for " + s.filename);
    if (s.image.shape() != expected)
      throw DataError("dataset: image " + s.filename + " has shape " + shape_string(s.image.shape()) +
                      ", expected " + shape_string(expected));
    for (double v : s.image.data())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset: pixel outside [0, 1] in " + s.filename);
  }
}

Dataset generate_synthetic_dataset(std::size_t num_classes, std::size_t per_class, std::size_t size,
                                   std::uint64_t seed, Split split) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (num_classes > max_synthetic_classes())
    throw ConfigError("synthetic dataset supports at most " + std::to_string(max_synthetic_classes()) +
                      " classes");
  Dataset d;
  d.split = split;
  d.image_size = size;
  for (std::size_t c = 0; c < num_classes; ++c) d.class_names.push_back(class_name(static_cast<int>(c)));
  Rng master(seed);
  d.samples.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t s = master.next_u64();
      const int label = static_cast<int>(c);
      d.samples.push_back({render_glyph_sample(label, size, s), label, s, sample_filename(d.class_names[c], i)});
    }
  return d;
}

Dataset upsample_balance(const Dataset& data, Rng& rng) {
  const auto counts = data.class_counts();
  std::vector<std::vector<std::size_t>> members(data.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) members[static_cast<std::size_t>(data.samples[i].label)].push_back(i);
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) throw DataError("upsample_balance: class '" + data.class_names[c] + "' has no samples");
  const std::size_t target = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
  Dataset out = data;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t k = counts[c]; k < target; ++k)
      out.samples.push_back(data.samples[members[c][rng.index(members[c].size())]]);
  return out;
}

void save_dataset(const std::filesystem::path& root, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.csv");
  if (!manifest) throw DataError("cannot write " + (root / "manifest.csv").string());
  manifest << "filename,label,seed\n";
  for (const auto& name : data.class_names) fs::create_directories(root / name);
  std::vector<std::size_t> next(data.num_classes(), 0);
  for (const auto& s : data.samples) {
    const std::string file =
        s.filename.empty() ? sample_filename(data.class_names.at(static_cast<std::size_t>(s.label)),
                                             next[static_cast<std::size_t>(s.label)]++)
                           : s.filename;
    write_ppm(root / file, to_raster(s.image));
    manifest << file << ',' << s.label << ',' << s.seed << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& root, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  std::sort(dirs.begin(), dirs.end());

  Dataset d;
  d.split = split;
  std::vector<std::tuple<std::string, int, std::uint64_t>> rows;
  const fs::path manifest_path = root / "manifest.csv";
  if (fs::exists(manifest_path)) {
    std::ifstream is(manifest_path);
    std::string line;
    std::getline(is, line);
    std::map<int, std::string> names;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string file, label, seed;
      if (!std::getline(ls, file, ',') || !std::getline(ls, label, ',') || !std::getline(ls, seed))
        throw DataError("malformed manifest row: " + line);
      const int l = std::stoi(label);
      rows.emplace_back(file, l, std::stoull(seed));
      names.emplace(l, file.substr(0, file.find('/')));
    }
    int expected = 0;
    for (const auto& [l, n] : names) {
      if (l != expected++) throw DataError("manifest labels are not contiguous from 0 in " + manifest_path.string());
      d.class_names.push_back(n);
    }
  } else {
    d.class_names = dirs;
    for (std::size_t c = 0; c < dirs.size(); ++c) {
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(root / dirs[c]))
        if (e.path().extension() == ".ppm") files.push_back(dirs[c] + "/" + e.path().filename().string());
      std::sort(files.begin(), files.end());
      for (auto& f : files) rows.emplace_back(std::move(f), static_cast<int>(c), 0);
    }
  }
  if (rows.empty()) throw DataError("no images found under " + root.string());
  for (auto& [file, label, seed] : rows) {
    Tensor img = from_raster(read_netpbm(root / file));
    if (img.dim(2) != 3) throw DataError("expected a colour image: " + file);
    if (d.image_size == 0) d.image_size = img.dim(0);
    d.samples.push_back({std::move(img), label, seed, file});
  }
  d.validate();
  return d;
}

Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t s = data.image_size;
  const std::size_t per = s * s * 3;
  std::vector<double> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = data.samples.at(indices[i]).image.data();
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor({indices.size(), s, s, 3}, std::move(out));
}

}  // namespace transfer
