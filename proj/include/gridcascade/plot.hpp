#pragma once

#include <string>
#include <vector>

#include "gridcascade/metrics.hpp"

namespace gridcascade {

struct SeriesPoint {
    double x = 0.0;
    double y = 0.0;
};

struct PlotSeries {
    std::string label;
    std::vector<SeriesPoint> points;
};

/// Minimal line plot: axes, ticks, one polyline per series, text legend.
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series);

/// (bin, value) pairs from a bin,value,count CSV.
std::vector<SeriesPoint> read_bin_csv(const std::string& path);

/// Per-branch values from a branch,freq,value,count CSV, averaged into
/// frequency bins.
std::vector<SeriesPoint> read_branch_csv_binned(const std::string& path, const Binning& bins);

}  // namespace gridcascade
