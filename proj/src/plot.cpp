#include "gridcascade/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "gridcascade/error.hpp"

namespace gridcascade {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

const char* kColors[] = {"#0000a7", "#c1272d", "#008176", "#b17f2a"};

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

std::vector<SeriesPoint> read_bin_csv(const std::string& path) {
    std::vector<SeriesPoint> points;
    const auto rows = read_csv(path);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() < 2) throw ParseError(path + ": malformed row " + std::to_string(i));
        points.push_back({std::stod(rows[i][0]), std::stod(rows[i][1])});
    }
    return points;
}

std::vector<SeriesPoint> read_branch_csv_binned(const std::string& path, const Binning& bins) {
    const auto rows = read_csv(path);
    std::vector<double> values;
    std::vector<double> keys;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() < 3) throw ParseError(path + ": malformed row " + std::to_string(i));
        keys.push_back(std::stod(rows[i][1]));
        values.push_back(std::stod(rows[i][2]));
    }
    std::vector<SeriesPoint> points;
    const auto stats = bin_report(values, keys, bins);
    for (std::size_t b = 0; b < stats.size(); ++b) {
        if (stats[b]) points.push_back({bin_center(bins, static_cast<int>(b)), stats[b]->value});
    }
    return points;
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series) {
    const double width = 640, height = 420;
    const double ml = 70, mr = 20, mt = 40, mb = 50;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    if (!(xmin < xmax)) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (!(ymin < ymax)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    ymin = std::min(0.0, ymin);
    const double ypad = 0.05 * (ymax - ymin);
    ymax += ypad;

    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto sy = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << title << "</text>\n";

    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5;
        const double yv = ymin + (ymax - ymin) * i / 5;
        out << "<line x1=\"" << sx(xv) << "\" y1=\"" << height - mb << "\" x2=\"" << sx(xv)
            << "\" y2=\"" << height - mb + 4 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << sx(xv) << "\" y=\"" << height - mb + 18
            << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(yv) << "\" x2=\"" << ml << "\" y2=\""
            << sy(yv) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">"
            << fmt(yv) << "</text>\n";
    }
    out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (mt + height - mb) / 2
        << ")\">" << y_label << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % 4];
        std::ostringstream pts;
        for (const auto& p : series[s].points) pts << sx(p.x) << ',' << sy(p.y) << ' ';
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
            << pts.str() << "\"/>\n";
        for (const auto& p : series[s].points) {
            out << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"2.5\" fill=\""
                << color << "\"/>\n";
        }
        out << "<text x=\"" << width - mr - 8 << "\" y=\"" << mt + 16 * (s + 1)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << series[s].label
            << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace gridcascade
