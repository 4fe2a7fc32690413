#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rvi/relay_posterior.hpp"
#include "rvi/tensor.hpp"

namespace rvi {

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Tensor forward(const Tensor& x) const;
};

// Fully connected stack. Hidden layers use ReLU; the last layer is linear
// unless activate_output is set.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, std::uint64_t seed, bool activate_output = false);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  bool activate_output() const { return activate_output_; }

  Tensor forward(const Tensor& x) const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const { return parameter_count(widths_); }
  static std::size_t parameter_count(const std::vector<std::size_t>& widths);

 private:
  std::vector<std::size_t> widths_;
  std::vector<Linear> layers_;
  bool activate_output_ = false;
};

// Amortised posterior: a shared ReLU trunk feeding affine mean and
// log-scale heads.
struct EncoderHead {
  Mlp trunk;
  Linear mean_head;
  Linear log_sigma_head;

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

// Hidden widths accepted by build_decoder / build_encoder.
bool is_supported_arch(const std::vector<std::size_t>& hidden);
std::vector<std::size_t> parse_arch(const std::string& text);  // "64,64"
std::string arch_string(const std::vector<std::size_t>& hidden);

// Widths [t, hidden..., d]; He-normal weights, zero biases.
Mlp build_decoder(const std::vector<std::size_t>& hidden, std::size_t t, std::size_t d,
                  std::uint64_t seed);
// Trunk widths [d, reversed hidden...], heads to t.
EncoderHead build_encoder(const std::vector<std::size_t>& hidden, std::size_t t, std::size_t d,
                          std::uint64_t seed);

Tensor decode(const Mlp& decoder, const Tensor& z);
// x_filled must already have missing entries replaced by 0.
GaussianParams encode(const EncoderHead& encoder, const Tensor& x_filled);

// Copy of x with unobserved entries set to 0.
Tensor zero_fill(const Tensor& x, const Tensor& mask);

// "RVIM1" checkpoints.
void save_decoder(const Mlp& decoder, const std::filesystem::path& path);
Mlp load_decoder(const std::filesystem::path& path);
void save_encoder(const EncoderHead& encoder, const std::filesystem::path& path);
EncoderHead load_encoder(const std::filesystem::path& path);

}  // namespace rvi
