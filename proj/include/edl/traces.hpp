#pragma once

// Binned data products shared by the simulator and the analysis pipeline.

#include <cstddef>
#include <vector>

namespace edl {

struct Histogram {
    double start_ps = 0.0;
    double bin_width_ps = 1.0;
    std::vector<double> counts;
    double underflow = 0.0;
    double overflow = 0.0;

    // ceil((end - start) / width) bins starting at start, so end_ps() can
    // exceed end when the span is not a multiple of the width. Throws
    // ValidationError for an empty range or a non-positive width.
    static Histogram with_range(double bin_width_ps, double start_ps, double end_ps);

    std::size_t size() const noexcept { return counts.size(); }
    double end_ps() const noexcept { return start_ps + bin_width_ps * static_cast<double>(counts.size()); }
    double bin_center(std::size_t i) const noexcept {
        return start_ps + bin_width_ps * (static_cast<double>(i) + 0.5);
    }
    double in_range_total() const noexcept;
    double total() const noexcept { return in_range_total() + underflow + overflow; }

    void add(double t_ps, double weight = 1.0) noexcept;
    // Bin-wise sum; both histograms must share binning.
    void merge(const Histogram& other);
    bool same_binning(const Histogram& other) const noexcept;
};

struct CorrelationTrace {
    std::vector<double> delay_ps; // symmetric about 0
    std::vector<double> value;
    bool normalized = false;

    std::size_t size() const noexcept { return delay_ps.size(); }
};

} // namespace edl
