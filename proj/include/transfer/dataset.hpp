#pragma once

// In-memory labelled image sets, the synthetic glyph-pair generator, class
// balancing, and the on-disk layout (one directory per class of P6 files
// plus manifest.csv).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "transfer/rng.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

enum class Split { kTrain, kTest };
const char* split_name(Split s);

struct Sample {
  Tensor image;  // [s x s x 3], values in [0, 1]
  int label = 0;
  std::uint64_t seed = 0;  // generator seed, 0 when loaded from foreign files
  std::string filename;    // relative to the dataset root
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  Split split = Split::kTrain;
  std::size_t image_size = 0;

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
  std::vector<int> labels() const;
  /// Throws DataError on a bad label, wrong image shape or out-of-range pixel.
  void validate() const;
};

/// Glyph shapes used by the generator; all are symmetric under a horizontal
/// flip so that augmentation never changes a label.
enum class Glyph { kPlus, kRing, kCross, kBars, kDiamond, kSquare };
inline constexpr std::size_t kGlyphCount = 6;
const char* glyph_name(Glyph g);

/// Unordered glyph pair defining class `label` (pairs enumerated in
/// lexicographic order of glyph index).
std::pair<Glyph, Glyph> class_glyphs(int label);
std::size_t max_synthetic_classes();

/// Renders one sample: the class's two glyphs at two distinct random
/// quadrant anchors with jitter, random colours and background noise.
/// Values are quantised to 8-bit levels so a PPM round trip is lossless.
Tensor render_glyph_sample(int label, std::size_t size, std::uint64_t seed);

Dataset generate_synthetic_dataset(std::size_t num_classes, std::size_t per_class, std::size_t size,
                                   std::uint64_t seed, Split split = Split::kTrain);

/// Replicates minority-class samples (drawn with replacement) until every
/// class has the maximum count. Throws DataError on an empty class.
Dataset upsample_balance(const Dataset& data, Rng& rng);

/// Writes <root>/<class>/<nnnnn>.ppm and <root>/manifest.csv
/// (filename,label,seed).
void save_dataset(const std::filesystem::path& root, const Dataset& data);
/// Reads a directory written by save_dataset. Without a manifest, class
/// directories are taken in lexicographic order.
Dataset load_dataset(const std::filesystem::path& root, Split split);

/// Stacks the selected images into [n x s x s x 3].
Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace transfer
