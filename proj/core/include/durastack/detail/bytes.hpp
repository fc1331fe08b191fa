#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "durastack/errors.hpp"

namespace durastack::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Little-endian binary writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void mat(const Eigen::MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) f64(m(i, j));
    }
  }
  void vecx(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }

  const std::string& bytes() const { return out_; }
  std::string take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  std::string out_;
};

/// Bounds-checked reader; any overrun is a corrupt artifact.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t element_size = 1) {
    const auto n = u64();
    if (element_size > 0 && n > (data_.size() - pos_) / element_size) throw ArtifactError("corrupt model artifact: length field overruns the payload");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const auto n = count();
    auto s = std::string(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> vec() {
    std::vector<double> v(count(8));
    for (auto& x : v) x = f64();
    return v;
  }
  Eigen::MatrixXd mat() {
    const auto r = u64();
    const auto c = u64();
    if (c != 0 && r > (data_.size() - pos_) / 8 / c) throw ArtifactError("corrupt model artifact: matrix overruns the payload");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = f64();
    }
    return m;
  }
  Eigen::VectorXd vecx() {
    Eigen::VectorXd v(static_cast<Eigen::Index>(count(8)));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f64();
    return v;
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw ArtifactError("corrupt model artifact: unexpected end of data");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace durastack::detail
