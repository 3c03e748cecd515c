#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace spoilcal::evalmap {

// counts[true][pred], class 0 = Cat1, class 1 = Cat2.
struct ConfusionMatrix {
    std::array<std::array<std::size_t, 2>, 2> counts{};

    std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
    void add(int truth, int pred) { ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
    bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool undefined = false; // some ratio had a zero denominator and was set to 0
};

struct Metrics {
    double overall_accuracy = 0.0;
    std::array<ClassMetrics, 2> per_class;
};

Metrics metrics(const ConfusionMatrix& cm);

} // namespace spoilcal::evalmap
