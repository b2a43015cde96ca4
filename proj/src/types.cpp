#include "vitclick/types.hpp"

#include <ostream>

namespace vitclick {

ProbabilityMap::ProbabilityMap(ImageSize size, std::vector<float> values)
    : size_(size), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != size_.area()) {
        throw std::invalid_argument("ProbabilityMap: value count does not match size");
    }
}

std::string to_string(Polarity p) {
    return p == Polarity::positive ? "positive" : "negative";
}

std::ostream& operator<<(std::ostream& os, const Click& c) {
    return os << "(" << c.row << ", " << c.col << ", " << to_string(c.polarity) << ", #" << c.ordinal << ")";
}

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive" || s == "pos" || s == "1") return Polarity::positive;
    if (s == "negative" || s == "neg" || s == "0") return Polarity::negative;
    throw std::invalid_argument("unknown click polarity '" + s + "'");
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("iou: mask sizes differ");
    }
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        inter += da[i] & db[i];
        uni += da[i] | db[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace vitclick
