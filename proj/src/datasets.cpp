#include "rvi/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rvi/error.hpp"
#include "rvi/random.hpp"

namespace rvi {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

// Whole-file read; zlib passes uncompressed files through unchanged.
std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> chunk{};
  int got = 0;
  while ((got = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) {
    out.insert(out.end(), chunk.begin(), chunk.begin() + got);
  }
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw IoError("read error in " + path.string());
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write " + path.string());
    const int wrote = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (wrote != static_cast<int>(bytes.size())) throw IoError("short write to " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

std::filesystem::path resolve_gz(const std::filesystem::path& base) {
  if (std::filesystem::exists(base)) return base;
  auto gz = base;
  gz += ".gz";
  if (std::filesystem::exists(gz)) return gz;
  throw IoError("dataset file not found: " + base.string() + "[.gz]");
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

}  // namespace

// ---------------------------------------------------------------------------

MaskedDataset MaskedDataset::select(std::span<const std::size_t> rows) const {
  MaskedDataset out;
  {
    NoGradGuard no_grad;
    out.x = gather_rows(x, rows);
    out.mask = gather_rows(mask, rows);
  }
  if (has_labels()) {
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels[r]);
  }
  out.num_classes = num_classes;
  out.image = image;
  return out;
}

MaskedDataset MaskedDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ArgumentError("slice bounds out of range");
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return select(rows);
}

std::size_t MaskedDataset::observed_count() const {
  const auto m = mask.values();
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1.0));
}

// ---------------------------------------------------------------------------

MissingSpec MissingSpec::mcar(double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ArgumentError("mcar rate must lie in [0, 1), got " + format_double(rate));
  }
  MissingSpec s;
  s.kind = Kind::kMcar;
  s.rate = rate;
  s.seed = seed;
  return s;
}

MissingSpec MissingSpec::boxes(std::size_t count, std::uint64_t seed, std::size_t side) {
  if (side < 1 || side > kImageSide) throw ArgumentError("box side must lie in [1, 28]");
  MissingSpec s;
  s.kind = Kind::kBoxes;
  s.count = count;
  s.side = side;
  s.seed = seed;
  return s;
}

MissingSpec MissingSpec::parse(const std::string& text, std::uint64_t seed) {
  if (text.empty() || text == "none") {
    MissingSpec s;
    s.seed = seed;
    return s;
  }
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  try {
    if (kind == "mcar" && !rest.empty()) {
      std::size_t used = 0;
      const double rate = std::stod(rest, &used);
      if (used != rest.size()) throw ArgumentError("");
      return mcar(rate, seed);
    }
    if (kind == "boxes" && !rest.empty()) {
      const auto second = rest.find(':');
      const long count = std::stol(rest.substr(0, second));
      const long side = second == std::string::npos ? 4 : std::stol(rest.substr(second + 1));
      if (count < 0 || side < 1) throw ArgumentError("");
      return boxes(static_cast<std::size_t>(count), seed, static_cast<std::size_t>(side));
    }
  } catch (const ArgumentError& e) {
    if (std::string(e.what()).empty()) throw ArgumentError("malformed missing spec '" + text + "'");
    throw;
  } catch (const std::exception&) {
    throw ArgumentError("malformed missing spec '" + text + "'");
  }
  throw ArgumentError("unknown missing spec '" + text + "' (expected none, mcar:<r>, boxes:<c>)");
}

std::string MissingSpec::to_string() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kMcar: return "mcar:" + format_double(rate);
    case Kind::kBoxes:
      return "boxes:" + std::to_string(count) + (side == 4 ? "" : ":" + std::to_string(side));
  }
  return "none";
}

bool MissingSpec::any() const {
  return (kind == Kind::kMcar && rate > 0.0) || (kind == Kind::kBoxes && count > 0);
}

// ---------------------------------------------------------------------------

MaskedDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 16) throw LengthError("image file too short for an IDX header: " + images.string());
  if (lab.size() < 8) throw LengthError("label file too short for an IDX header: " + labels.string());
  if (read_be32(img, 0) != kImageMagic) {
    throw FormatError("bad image magic " + hex(read_be32(img, 0)) + " in " + images.string());
  }
  if (read_be32(lab, 0) != kLabelMagic) {
    throw FormatError("bad label magic " + hex(read_be32(lab, 0)) + " in " + labels.string());
  }
  const std::size_t n = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) {
    throw LengthError("image payload truncated: expected " + std::to_string(n * d) + " bytes, found " +
                      std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + n_labels) throw LengthError("label payload truncated in " + labels.string());
  if (n != n_labels) {
    throw ConsistencyError(std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }

  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n * d; ++i) x[i] = static_cast<double>(img[16 + i]) / 255.0;
  MaskedDataset ds;
  ds.x = Tensor(Shape{n, d}, std::move(x));
  ds.mask = Tensor::full(Shape{n, d}, 1.0);
  ds.labels.resize(n);
  int top = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    top = std::max(top, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(std::max(top + 1, 10));
  ds.image = rows == kImageSide && cols == kImageSide;
  return ds;
}

void write_idx(const MaskedDataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  if (!ds.image) throw ArgumentError("write_idx needs 28x28 image data");
  const std::size_t n = ds.size();
  std::vector<unsigned char> img;
  img.reserve(16 + n * kImageDim);
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(n));
  put_be32(img, kImageSide);
  put_be32(img, kImageSide);
  for (double v : ds.x.values()) {
    img.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  std::vector<unsigned char> lab;
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    lab.push_back(static_cast<unsigned char>(ds.has_labels() ? ds.labels[i] : 0));
  }
  write_file(images, img);
  write_file(labels, lab);
}

MaskedDataset load_mnist_split(const std::filesystem::path& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  return load_idx(resolve_gz(dir / (prefix + "-images-idx3-ubyte")),
                  resolve_gz(dir / (prefix + "-labels-idx1-ubyte")));
}

MaskedDataset subsample(const MaskedDataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw ArgumentError("cannot subsample " + std::to_string(n) + " rows from " +
                        std::to_string(ds.size()));
  }
  auto idx = permutation(ds.size(), seed);
  idx.resize(n);
  return ds.select(idx);
}

// ---------------------------------------------------------------------------

std::vector<double> draw_sources(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::gamma_distribution<double> gamma_a(2.0, 1.0);
  std::gamma_distribution<double> gamma_b(5.0, 1.0);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> exponential(1.0);
  std::lognormal_distribution<double> lognormal(0.0, 0.5);
  std::student_t_distribution<double> student(5.0);
  std::gamma_distribution<double> gamma(2.0, 1.0);

  std::vector<double> s(kArtificialSources);
  s[0] = normal(rng);
  {
    const double a = gamma_a(rng);
    const double b = gamma_b(rng);
    s[1] = a / (a + b);  // Beta(2, 5)
  }
  s[2] = gumbel(rng);
  s[3] = uniform(rng);
  {
    const double u = unit(rng) - 0.5;  // Laplace(0, 1) by inversion
    s[4] = u < 0.0 ? std::log1p(2.0 * u) : -std::log1p(-2.0 * u);
  }
  s[5] = exponential(rng);
  s[6] = lognormal(rng);
  s[7] = student(rng);
  s[8] = gamma(rng);
  {
    const double u = unit(rng);  // Triangular(-1, 0, 1) by inversion
    s[9] = u < 0.5 ? -1.0 + std::sqrt(2.0 * u) : 1.0 - std::sqrt(2.0 * (1.0 - u));
  }
  return s;
}

ArtificialMixing artificial_mixing(std::uint64_t seed) {
  Rng rng(derive_seed(seed, SeedStream::kArtificialWeights));
  ArtificialMixing m;
  m.weights = Tensor(Shape{kArtificialDim, kArtificialSources},
                     normal_values(kArtificialDim * kArtificialSources, 0.0, 1.0, rng));
  m.bias = Tensor(Shape{kArtificialDim}, normal_values(kArtificialDim, 0.0, 1.0, rng));
  return m;
}

MaskedDataset gen_artificial(std::size_t n, const ArtificialMixing& mixing,
                             std::uint64_t sample_seed) {
  if (n < 1) throw ArgumentError("artificial dataset needs n >= 1");
  const std::size_t d = mixing.weights.rows();
  const std::size_t k = mixing.weights.cols();
  const auto w = mixing.weights.values();
  const auto b = mixing.bias.values();
  Rng rng(sample_seed);
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = draw_sources(rng);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = b[r];
      for (std::size_t c = 0; c < k; ++c) acc += w[r * k + c] * s[c];
      x[i * d + r] = acc;
    }
  }
  MaskedDataset ds;
  ds.x = Tensor(Shape{n, d}, std::move(x));
  ds.mask = Tensor::full(Shape{n, d}, 1.0);
  return ds;
}

MaskedDataset gen_artificial(std::size_t n, std::uint64_t seed) {
  return gen_artificial(n, artificial_mixing(seed), derive_seed(seed, SeedStream::kArtificialSamples));
}

// ---------------------------------------------------------------------------

MaskedDataset apply_missing(const MaskedDataset& ds, const MissingSpec& spec) {
  MaskedDataset out = ds;
  std::vector<double> mask(ds.mask.values().begin(), ds.mask.values().end());
  const std::size_t n = ds.size();
  const std::size_t d = ds.dim();

  switch (spec.kind) {
    case MissingSpec::Kind::kNone:
      break;
    case MissingSpec::Kind::kMcar: {
      if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw ArgumentError("mcar rate must lie in [0, 1)");
      Rng rng(derive_seed(spec.seed, SeedStream::kMissing));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& m : mask) {
        if (unit(rng) < spec.rate) m = 0.0;
      }
      break;
    }
    case MissingSpec::Kind::kBoxes: {
      if (!ds.image || d != kImageDim) {
        throw ArgumentError("box missingness needs 28x28 image data, dataset has d=" + std::to_string(d));
      }
      if (spec.side < 1 || spec.side > kImageSide) throw ArgumentError("box side must lie in [1, 28]");
      Rng rng(derive_seed(spec.seed, SeedStream::kMissing));
      std::uniform_int_distribution<std::size_t> corner(0, kImageSide - spec.side);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < spec.count; ++c) {
          const std::size_t top = corner(rng);
          const std::size_t left = corner(rng);
          for (std::size_t r = top; r < top + spec.side; ++r) {
            for (std::size_t q = left; q < left + spec.side; ++q) mask[i * d + r * kImageSide + q] = 0.0;
          }
        }
      }
      break;
    }
  }
  out.mask = Tensor(Shape{n, d}, std::move(mask));
  return out;
}

// ---------------------------------------------------------------------------

void write_csv(const MaskedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t d = ds.dim();
  for (std::size_t j = 0; j < d; ++j) out << "dim_" << j << ',';
  out << "label\n";
  const auto x = ds.x.values();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << format_double(x[i * d + j]) << ',';
    if (ds.has_labels()) out << ds.labels[i];
    out << '\n';
  }
}

void write_mask_csv(const MaskedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t d = ds.dim();
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "dim_" << j;
  out << '\n';
  const auto m = ds.mask.values();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << (m[i * d + j] != 0.0 ? '1' : '0');
    out << '\n';
  }
}

}  // namespace rvi
