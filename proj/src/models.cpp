#include "rvi/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "rvi/error.hpp"
#include "rvi/random.hpp"

namespace rvi {

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != weight.rows()) {
    throw DimensionError("layer expects width " + std::to_string(weight.rows()) + ", input is " +
                         shape_string(x.shape()));
  }
  return add(matmul(x, weight), broadcast_rows(bias, x.rows()));
}

namespace {

Linear he_linear(std::size_t in, std::size_t out, std::uint64_t seed) {
  Linear l;
  l.weight = normal_tensor(Shape{in, out}, 0.0, std::sqrt(2.0 / static_cast<double>(in)), seed, true);
  l.bias = Tensor::zeros(Shape{1, out}, true);
  return l;
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> widths, std::uint64_t seed, bool activate_output)
    : widths_(std::move(widths)), activate_output_(activate_output) {
  if (widths_.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  for (auto w : widths_) {
    if (w == 0) throw ConfigError("MLP widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    layers_.push_back(he_linear(widths_[l], widths_[l + 1], derive_seed(seed, {l})));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l].forward(h);
    if (l + 1 < layers_.size() || activate_output_) h = relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

std::vector<Tensor> EncoderHead::parameters() const {
  auto out = trunk.parameters();
  out.push_back(mean_head.weight);
  out.push_back(mean_head.bias);
  out.push_back(log_sigma_head.weight);
  out.push_back(log_sigma_head.bias);
  return out;
}

std::size_t EncoderHead::parameter_count() const {
  return trunk.parameter_count() + mean_head.weight.numel() + mean_head.bias.numel() +
         log_sigma_head.weight.numel() + log_sigma_head.bias.numel();
}

bool is_supported_arch(const std::vector<std::size_t>& hidden) {
  return hidden == std::vector<std::size_t>{64} || hidden == std::vector<std::size_t>{64, 64} ||
         hidden == std::vector<std::size_t>{64, 64, 64};
}

std::vector<std::size_t> parse_arch(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("malformed architecture '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty architecture");
  return out;
}

std::string arch_string(const std::vector<std::size_t>& hidden) {
  std::string s;
  for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "-" : "") + std::to_string(hidden[i]);
  return s;
}

Mlp build_decoder(const std::vector<std::size_t>& hidden, std::size_t t, std::size_t d,
                  std::uint64_t seed) {
  if (!is_supported_arch(hidden)) {
    throw ConfigError("unsupported decoder architecture [" + arch_string(hidden) +
                      "] (expected 64, 64-64 or 64-64-64)");
  }
  if (d < 1 || t < 1) throw ConfigError("decoder needs positive latent and output widths");
  std::vector<std::size_t> widths{t};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(d);
  return Mlp(std::move(widths), seed);
}

EncoderHead build_encoder(const std::vector<std::size_t>& hidden, std::size_t t, std::size_t d,
                          std::uint64_t seed) {
  if (!is_supported_arch(hidden)) {
    throw ConfigError("unsupported encoder architecture [" + arch_string(hidden) + "]");
  }
  std::vector<std::size_t> widths{d};
  widths.insert(widths.end(), hidden.rbegin(), hidden.rend());
  EncoderHead e;
  e.trunk = Mlp(widths, derive_seed(seed, {0}), /*activate_output=*/true);
  e.mean_head = he_linear(widths.back(), t, derive_seed(seed, {1}));
  e.log_sigma_head = he_linear(widths.back(), t, derive_seed(seed, {2}));
  return e;
}

Tensor decode(const Mlp& decoder, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != decoder.input_dim()) {
    throw DimensionError("decoder expects latent width " + std::to_string(decoder.input_dim()) +
                         ", got " + shape_string(z.shape()));
  }
  return decoder.forward(z);
}

GaussianParams encode(const EncoderHead& encoder, const Tensor& x_filled) {
  if (x_filled.rank() != 2 || x_filled.cols() != encoder.trunk.input_dim()) {
    throw DimensionError("encoder expects input width " + std::to_string(encoder.trunk.input_dim()) +
                         ", got " + shape_string(x_filled.shape()));
  }
  Tensor h = encoder.trunk.forward(x_filled);
  return {encoder.mean_head.forward(h), exp(encoder.log_sigma_head.forward(h))};
}

Tensor zero_fill(const Tensor& x, const Tensor& mask) {
  if (x.shape() != mask.shape()) {
    throw DimensionError("zero_fill shapes differ: " + shape_string(x.shape()) + " vs " +
                         shape_string(mask.shape()));
  }
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  const auto mv = mask.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv[i] != 0.0 ? xv[i] : 0.0;
  return Tensor(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Checkpoints: "RVIM1", kind byte (0 decoder, 1 encoder), t, d, hidden widths,
// then each layer's weight and bias buffers in forward order.

namespace {

constexpr const char* kModelMagic = "RVIM1";

void write_header(std::ostream& out, std::uint8_t kind, std::size_t t, std::size_t d,
                  const std::vector<std::size_t>& hidden) {
  io::write_magic(out, kModelMagic);
  io::write_u8(out, kind);
  io::write_u32(out, static_cast<std::uint32_t>(t));
  io::write_u32(out, static_cast<std::uint32_t>(d));
  io::write_u32(out, static_cast<std::uint32_t>(hidden.size()));
  for (auto h : hidden) io::write_u32(out, static_cast<std::uint32_t>(h));
}

struct Header {
  std::uint8_t kind;
  std::size_t t;
  std::size_t d;
  std::vector<std::size_t> hidden;
};

Header read_header(std::istream& in, const std::string& what) {
  io::expect_magic(in, kModelMagic, what);
  Header h;
  h.kind = io::read_u8(in, what);
  h.t = io::read_u32(in, what);
  h.d = io::read_u32(in, what);
  const std::size_t n = io::read_u32(in, what);
  if (n > 64) throw FormatError(what + ": implausible layer count");
  for (std::size_t i = 0; i < n; ++i) h.hidden.push_back(io::read_u32(in, what));
  return h;
}

void write_linear(std::ostream& out, const Linear& l) {
  io::write_f64(out, l.weight.values());
  io::write_f64(out, l.bias.values());
}

void read_linear(std::istream& in, Linear& l, const std::string& what) {
  l.weight = Tensor(l.weight.shape(), io::read_f64(in, l.weight.numel(), what), true);
  l.bias = Tensor(l.bias.shape(), io::read_f64(in, l.bias.numel(), what), true);
}

}  // namespace

void save_decoder(const Mlp& decoder, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& w = decoder.widths();
  write_header(out, 0, w.front(), w.back(), std::vector<std::size_t>(w.begin() + 1, w.end() - 1));
  for (const auto& l : decoder.layers()) write_linear(out, l);
  if (!out) throw IoError("write failed for " + path.string());
}

Mlp load_decoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = "decoder " + path.string();
  const auto h = read_header(in, what);
  if (h.kind != 0) throw FormatError(what + ": not a decoder checkpoint");
  std::vector<std::size_t> widths{h.t};
  widths.insert(widths.end(), h.hidden.begin(), h.hidden.end());
  widths.push_back(h.d);
  Mlp m(widths, 0);
  for (auto& l : m.layers()) read_linear(in, l, what);
  return m;
}

void save_encoder(const EncoderHead& encoder, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& w = encoder.trunk.widths();
  std::vector<std::size_t> hidden(w.rbegin(), w.rend() - 1);  // back to decoder order
  write_header(out, 1, encoder.mean_head.weight.cols(), w.front(), hidden);
  for (const auto& l : encoder.trunk.layers()) write_linear(out, l);
  write_linear(out, encoder.mean_head);
  write_linear(out, encoder.log_sigma_head);
  if (!out) throw IoError("write failed for " + path.string());
}

EncoderHead load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = "encoder " + path.string();
  const auto h = read_header(in, what);
  if (h.kind != 1) throw FormatError(what + ": not an encoder checkpoint");
  std::vector<std::size_t> widths{h.d};
  widths.insert(widths.end(), h.hidden.rbegin(), h.hidden.rend());
  EncoderHead e;
  e.trunk = Mlp(widths, 0, true);
  e.mean_head = he_linear(widths.back(), h.t, 0);
  e.log_sigma_head = he_linear(widths.back(), h.t, 0);
  for (auto& l : e.trunk.layers()) read_linear(in, l, what);
  read_linear(in, e.mean_head, what);
  read_linear(in, e.log_sigma_head, what);
  return e;
}

}  // namespace rvi
