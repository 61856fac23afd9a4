#pragma once

// Flat parameter vectors ("points in model space") and their block layout.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adasit {

/// A named contiguous range of a parameter vector. Matrices are row-major
/// rows x cols; vectors have cols == 1.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

class ParamLayout {
 public:
  ParamLayout() = default;
  /// Blocks are laid out back to back in the given order.
  ParamLayout(std::vector<ParamBlock> blocks, std::uint64_t config_hash);

  /// Single block named "theta" of length n; used for test objectives.
  static ParamLayout flat(std::size_t n, std::uint64_t config_hash = 0);

  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  std::size_t size() const noexcept { return size_; }
  std::uint64_t config_hash() const noexcept { return config_hash_; }

  /// Throws adasit::Error for an unknown name.
  const ParamBlock& block(std::string_view name) const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t size_ = 0;
  std::uint64_t config_hash_ = 0;
};

class ParamVector {
 public:
  ParamVector() = default;
  /// Zero-filled vector over `layout`.
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout);
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  const ParamLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> block(std::string_view name);
  std::span<const double> block(std::string_view name) const;
  std::span<double> block(const ParamBlock& b) noexcept { return std::span<double>(values_).subspan(b.offset, b.size()); }
  std::span<const double> block(const ParamBlock& b) const noexcept {
    return std::span<const double>(values_).subspan(b.offset, b.size());
  }

  bool same_layout(const ParamVector& other) const noexcept;
  bool all_finite() const noexcept;

  /// Name of the first block holding a non-finite value, or empty.
  std::string first_non_finite_block() const;

  void fill(double value) noexcept;
  /// this += alpha * x
  void axpy(double alpha, const ParamVector& x);
  /// this - other
  ParamVector minus(const ParamVector& other) const;

  /// Bitwise equality of values plus layout equality.
  friend bool operator==(const ParamVector& a, const ParamVector& b);

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

/// Throws adasit::Error unless the two vectors share a layout.
void require_same_layout(const ParamVector& a, const ParamVector& b, std::string_view what);

double l2_norm(const ParamVector& v);

/// Text serialization: header line, config hash, block table, then one value
/// per line in shortest round-trip form.
void save_params(const ParamVector& params, const std::filesystem::path& path);
std::string format_params(const ParamVector& params);

/// Loads a vector and checks that its block table and config hash match `expected`.
ParamVector load_params(const std::filesystem::path& path, const std::shared_ptr<const ParamLayout>& expected);
ParamVector parse_params(std::string_view text, const std::shared_ptr<const ParamLayout>& expected,
                         const std::string& source = "<memory>");

}  // namespace adasit
