#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qfed {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape &shape);
std::string shape_string(const Shape &shape);

/**
 * Dense row-major array of doubles.
 *
 * Every dimension is positive and the flat buffer always holds exactly
 * product(shape) elements. Tensors are plain values: copying copies the data.
 */
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double value);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::span<const double> values);

    [[nodiscard]] const Shape &shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return data_; }

    double &operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double &at(std::size_t i, std::size_t j);
    [[nodiscard]] double at(std::size_t i, std::size_t j) const;
    double &at(std::size_t c, std::size_t i, std::size_t j);
    [[nodiscard]] double at(std::size_t c, std::size_t i, std::size_t j) const;

    /// Same data, new shape with an equal element count.
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    void fill(double value);
    Tensor &operator+=(const Tensor &other);
    Tensor &operator*=(double scale);

    [[nodiscard]] bool all_finite() const noexcept;

    friend bool operator==(const Tensor &, const Tensor &) = default;

  private:
    Shape shape_;
    std::vector<double> data_;
};

/// Throws std::domain_error naming `what` if any element is NaN or infinite.
void require_finite(const Tensor &t, const std::string &what);

} // namespace qfed
