#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitclick {

/// Thrown for invalid model or pipeline configuration (indivisible grids,
/// mismatched embeddings, bad config keys).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an evaluation or click-simulation contract is violated.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ImageSize {
    int height = 0;
    int width = 0;

    friend bool operator==(const ImageSize&, const ImageSize&) = default;
    [[nodiscard]] std::int64_t area() const { return std::int64_t{height} * width; }
};

/// Row-major {0,1} mask.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0)
        : size_{height, width}, data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
        if (height < 0 || width < 0) {
            throw std::invalid_argument("BinaryMask: negative size");
        }
    }
    explicit BinaryMask(ImageSize size, std::uint8_t fill = 0) : BinaryMask(size.height, size.width, fill) {}

    [[nodiscard]] int height() const { return size_.height; }
    [[nodiscard]] int width() const { return size_.width; }
    [[nodiscard]] ImageSize size() const { return size_; }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::uint8_t operator()(int row, int col) const {
        return data_[static_cast<std::size_t>(row) * size_.width + col];
    }
    void set(int row, int col, bool value) {
        data_[static_cast<std::size_t>(row) * size_.width + col] = value ? 1 : 0;
    }
    [[nodiscard]] bool contains(int row, int col) const {
        return row >= 0 && col >= 0 && row < size_.height && col < size_.width;
    }

    [[nodiscard]] const std::vector<std::uint8_t>& data() const { return data_; }
    std::vector<std::uint8_t>& data() { return data_; }

    [[nodiscard]] std::int64_t count() const {
        std::int64_t n = 0;
        for (auto v : data_) n += v;
        return n;
    }
    [[nodiscard]] bool any() const { return count() > 0; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    ImageSize size_{};
    std::vector<std::uint8_t> data_;
};

/// Row-major map of foreground probabilities in [0, 1].
class ProbabilityMap {
public:
    ProbabilityMap() = default;
    ProbabilityMap(int height, int width, float fill = 0.0F)
        : size_{height, width}, data_(static_cast<std::size_t>(height) * width, fill) {}
    ProbabilityMap(ImageSize size, std::vector<float> values);

    [[nodiscard]] int height() const { return size_.height; }
    [[nodiscard]] int width() const { return size_.width; }
    [[nodiscard]] ImageSize size() const { return size_; }
    [[nodiscard]] float operator()(int row, int col) const {
        return data_[static_cast<std::size_t>(row) * size_.width + col];
    }
    [[nodiscard]] const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;

private:
    ImageSize size_{};
    std::vector<float> data_;
};

/// Interleaved 8-bit RGB image, row-major.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int height, int width, std::uint8_t fill = 0)
        : size_{height, width}, data_(static_cast<std::size_t>(height) * width * 3, fill) {}

    [[nodiscard]] int height() const { return size_.height; }
    [[nodiscard]] int width() const { return size_.width; }
    [[nodiscard]] ImageSize size() const { return size_; }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::uint8_t at(int row, int col, int channel) const {
        return data_[(static_cast<std::size_t>(row) * size_.width + col) * 3 + channel];
    }
    std::uint8_t& at(int row, int col, int channel) {
        return data_[(static_cast<std::size_t>(row) * size_.width + col) * 3 + channel];
    }
    [[nodiscard]] const std::vector<std::uint8_t>& data() const { return data_; }
    std::vector<std::uint8_t>& data() { return data_; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

private:
    ImageSize size_{};
    std::vector<std::uint8_t> data_;
};

enum class Polarity : std::uint8_t { positive, negative };

[[nodiscard]] std::string to_string(Polarity p);
[[nodiscard]] Polarity polarity_from_string(const std::string& s);

struct Click {
    int row = 0;
    int col = 0;
    Polarity polarity = Polarity::positive;
    int ordinal = 0;

    [[nodiscard]] bool is_positive() const { return polarity == Polarity::positive; }
    friend bool operator==(const Click&, const Click&) = default;
};

/// (row, col, polarity, #ordinal)
std::ostream& operator<<(std::ostream& os, const Click& c);

/// Clicks plus the previous binarized prediction for one annotation session.
struct InteractionState {
    std::vector<Click> clicks;
    BinaryMask prev_mask;

    friend bool operator==(const InteractionState&, const InteractionState&) = default;
};

/// |a ∧ b| / |a ∨ b|, 1.0 when both are empty.
[[nodiscard]] double iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace vitclick
