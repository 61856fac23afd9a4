#include "adasit/params.hpp"

#include "adasit/error.hpp"
#include "adasit/kernels.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace adasit {

ParamLayout::ParamLayout(std::vector<ParamBlock> blocks, std::uint64_t config_hash)
    : blocks_(std::move(blocks)), config_hash_(config_hash) {
  for (auto& b : blocks_) {
    b.offset = size_;
    size_ += b.size();
  }
}

ParamLayout ParamLayout::flat(std::size_t n, std::uint64_t config_hash) {
  return ParamLayout({ParamBlock{"theta", 0, n, 1}}, config_hash);
}

const ParamBlock& ParamLayout::block(std::string_view name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw Error("parameter layout has no block '" + std::string(name) + "'");
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(layout_->size(), 0.0) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->size()) {
    throw Error("parameter vector has " + std::to_string(values_.size()) + " values, layout expects " +
                std::to_string(layout_->size()));
  }
}

std::span<double> ParamVector::block(std::string_view name) { return block(layout_->block(name)); }

std::span<const double> ParamVector::block(std::string_view name) const { return block(layout_->block(name)); }

bool ParamVector::same_layout(const ParamVector& other) const noexcept {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

bool ParamVector::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string ParamVector::first_non_finite_block() const {
  for (const auto& b : layout_->blocks()) {
    for (double v : block(b)) {
      if (!std::isfinite(v)) return b.name;
    }
  }
  return {};
}

void ParamVector::fill(double value) noexcept { std::fill(values_.begin(), values_.end(), value); }

void ParamVector::axpy(double alpha, const ParamVector& x) {
  require_same_layout(*this, x, "axpy");
  kernels::axpy(alpha, x.values_, values_);
}

ParamVector ParamVector::minus(const ParamVector& other) const {
  require_same_layout(*this, other, "difference");
  ParamVector out = *this;
  kernels::axpy(-1.0, other.values_, out.values_);
  return out;
}

bool operator==(const ParamVector& a, const ParamVector& b) {
  if (!a.same_layout(b) || a.values_.size() != b.values_.size()) return false;
  return a.values_.empty() || std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
}

void require_same_layout(const ParamVector& a, const ParamVector& b, std::string_view what) {
  if (!a.same_layout(b)) {
    throw Error(std::string(what) + ": parameter layouts differ (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + " values)");
  }
}

double l2_norm(const ParamVector& v) { return std::sqrt(kernels::dot(v.values(), v.values())); }

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kParamsFormat = "adasit-params/1";

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::string format_params(const ParamVector& params) {
  std::string out;
  out += kParamsFormat;
  out += "\nconfig_hash ";
  out += hex64(params.layout().config_hash());
  out += "\nblocks ";
  out += std::to_string(params.layout().blocks().size());
  out += '\n';
  for (const auto& b : params.layout().blocks()) {
    out += b.name + ' ' + std::to_string(b.offset) + ' ' + std::to_string(b.rows) + ' ' + std::to_string(b.cols) + '\n';
  }
  out += "values ";
  out += std::to_string(params.size());
  out += '\n';
  char buf[32];
  for (double v : params.values()) {
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
    out += '\n';
  }
  return out;
}

void save_params(const ParamVector& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write parameter file '" + path.string() + "'");
  out << format_params(params);
}

ParamVector parse_params(std::string_view text, const std::shared_ptr<const ParamLayout>& expected,
                         const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* field) -> std::string {
    if (!std::getline(in, line)) throw ParseError(source, line_no + 1, field, "unexpected end of file");
    ++line_no;
    return line;
  };

  if (next("format") != kParamsFormat) throw ParseError(source, line_no, "format", "not a parameter file");
  {
    std::istringstream ls(next("config_hash"));
    std::string key;
    std::uint64_t hash = 0;
    ls >> key >> std::hex >> hash;
    if (key != "config_hash" || !ls) throw ParseError(source, line_no, "config_hash", "malformed");
    if (hash != expected->config_hash()) {
      throw ParseError(source, line_no, "config_hash",
                       "model configuration mismatch (file " + hex64(hash) + ", expected " +
                           hex64(expected->config_hash()) + ")");
    }
  }
  std::size_t n_blocks = 0;
  {
    std::istringstream ls(next("blocks"));
    std::string key;
    ls >> key >> n_blocks;
    if (key != "blocks" || !ls) throw ParseError(source, line_no, "blocks", "malformed");
  }
  std::vector<ParamBlock> blocks;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    std::istringstream ls(next("block"));
    ParamBlock b;
    ls >> b.name >> b.offset >> b.rows >> b.cols;
    if (!ls) throw ParseError(source, line_no, "block", "malformed block entry");
    blocks.push_back(b);
  }
  if (blocks != expected->blocks()) throw ParseError(source, line_no, "blocks", "block table does not match the model");
  std::size_t n = 0;
  {
    std::istringstream ls(next("values"));
    std::string key;
    ls >> key >> n;
    if (key != "values" || !ls || n != expected->size()) throw ParseError(source, line_no, "values", "wrong value count");
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string v = next("value");
    const auto res = std::from_chars(v.data(), v.data() + v.size(), values[i]);
    if (res.ec != std::errc{} || !std::isfinite(values[i])) {
      throw ParseError(source, line_no, "value", "expected a finite real");
    }
  }
  return ParamVector(expected, std::move(values));
}

ParamVector load_params(const std::filesystem::path& path, const std::shared_ptr<const ParamLayout>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open parameter file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_params(ss.str(), expected, path.string());
}

}  // namespace adasit
