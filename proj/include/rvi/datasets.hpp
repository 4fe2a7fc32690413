#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvi/random.hpp"
#include "rvi/tensor.hpp"

namespace rvi {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImageDim = kImageSide * kImageSide;
inline constexpr std::size_t kArtificialDim = 300;
inline constexpr std::size_t kArtificialSources = 10;
inline constexpr std::size_t kTrainingCap = 10000;

// Datapoints with a binary observation mask (1 = observed). Values at
// missing positions are kept so imputation can be scored afterwards.
struct MaskedDataset {
  Tensor x;     // N x d
  Tensor mask;  // N x d, entries exactly 0 or 1
  std::vector<int> labels;  // empty when unlabelled
  std::size_t num_classes = 0;
  bool image = false;  // rows are 28x28 images

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  bool has_labels() const { return !labels.empty(); }

  // Copy restricted to the given rows, in order.
  MaskedDataset select(std::span<const std::size_t> rows) const;
  // Rows [begin, end).
  MaskedDataset slice(std::size_t begin, std::size_t end) const;
  std::size_t observed_count() const;
};

struct MissingSpec {
  enum class Kind { kNone, kMcar, kBoxes };

  Kind kind = Kind::kNone;
  double rate = 0.0;         // mcar
  std::size_t count = 0;     // boxes
  std::size_t side = 4;      // boxes
  std::uint64_t seed = 0;

  static MissingSpec none() { return {}; }
  static MissingSpec mcar(double rate, std::uint64_t seed);
  static MissingSpec boxes(std::size_t count, std::uint64_t seed, std::size_t side = 4);
  // "none", "mcar:<rate>" or "boxes:<count>[:<side>]".
  static MissingSpec parse(const std::string& text, std::uint64_t seed);
  std::string to_string() const;
  bool any() const;
};

// Reads an IDX image file (magic 0x803) and label file (magic 0x801).
// Gzipped files are read transparently. Pixels are scaled by 1/255.
MaskedDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Inverse of load_idx for image data; gzip-compresses when the path ends in .gz.
void write_idx(const MaskedDataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels);

// Loads "<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]".
MaskedDataset load_mnist_split(const std::filesystem::path& dir, bool train);

MaskedDataset subsample(const MaskedDataset& ds, std::size_t n, std::uint64_t seed);

// Linear mixing of the ten source distributions: x = W s + b.
struct ArtificialMixing {
  Tensor weights;  // 300 x 10
  Tensor bias;     // 300
};

ArtificialMixing artificial_mixing(std::uint64_t seed);
// Draws n datapoints from the given mixing; sample_seed controls the sources.
MaskedDataset gen_artificial(std::size_t n, const ArtificialMixing& mixing,
                             std::uint64_t sample_seed);
MaskedDataset gen_artificial(std::size_t n, std::uint64_t seed);
// One draw of the ten source variables, in the fixed order.
std::vector<double> draw_sources(Rng& rng);

// Returns a copy whose mask additionally hides entries according to spec.
// x is never modified.
MaskedDataset apply_missing(const MaskedDataset& ds, const MissingSpec& spec);

// CSV export: header dim_0..dim_{d-1},label; mask as a parallel 0/1 file.
void write_csv(const MaskedDataset& ds, const std::filesystem::path& path);
void write_mask_csv(const MaskedDataset& ds, const std::filesystem::path& path);

}  // namespace rvi
