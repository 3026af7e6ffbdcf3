#include "microrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace microrl {

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

[[noreturn]] void fail_at(const std::string& path, std::size_t line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

long long parse_ll_field(const std::string& s, const std::string& path, std::size_t line) {
    if (s.empty()) fail_at(path, line, "empty integer field");
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size()) fail_at(path, line, "bad integer field '" + s + "'");
    return v;
}

double parse_d_field(const std::string& s, const std::string& path, std::size_t line) {
    if (s.empty()) fail_at(path, line, "empty numeric field");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) fail_at(path, line, "bad numeric field '" + s + "'");
    return v;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
    std::string out = std::to_string(row.step);
    out += ',';
    out += fmt_double(row.avg_reward);
    out += ',';
    out += fmt_double(row.avg_resp_len);
    out += ',';
    out += fmt_double(row.loss);
    out += ',';
    out += fmt_double(row.kl_mean);
    out += ',';
    out += fmt_double(row.lr);
    out += ',';
    out += std::to_string(row.elapsed_ms);
    return out;
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open metrics file for writing: " + path);
    out_ << kMetricsHeader << '\n';
    out_.flush();
}

void MetricsWriter::write(const MetricsRow& row) {
    out_ << format_metrics_row(row) << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("metrics write failed");
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line)) fail_at(path, 1, "missing header");
    if (line == std::string(kMetricsHeader) + "\r") line.pop_back();
    if (line != kMetricsHeader) fail_at(path, 1, "unexpected header '" + line + "'");

    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> f = split_fields(line);
        if (f.size() != 7) fail_at(path, lineno, "expected 7 fields, got " + std::to_string(f.size()));
        MetricsRow r;
        r.step = parse_ll_field(f[0], path, lineno);
        r.avg_reward = parse_d_field(f[1], path, lineno);
        r.avg_resp_len = parse_d_field(f[2], path, lineno);
        r.loss = parse_d_field(f[3], path, lineno);
        r.kl_mean = parse_d_field(f[4], path, lineno);
        r.lr = parse_d_field(f[5], path, lineno);
        r.elapsed_ms = parse_ll_field(f[6], path, lineno);
        rows.push_back(r);
    }
    return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    MetricsWriter w(path);
    for (const MetricsRow& r : rows) w.write(r);
}

std::vector<double> smooth(const std::vector<double>& xs, int window) {
    if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t start = i + 1 >= static_cast<std::size_t>(window)
                                      ? i + 1 - static_cast<std::size_t>(window)
                                      : 0;
        // streaming mean keeps constant stretches exactly constant
        double mean = 0.0;
        double n = 0.0;
        for (std::size_t j = start; j <= i; ++j) {
            n += 1.0;
            mean += (xs[j] - mean) / n;
        }
        out[i] = mean;
    }
    return out;
}

std::vector<double> column_values(const std::vector<MetricsRow>& rows, std::string_view column) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const MetricsRow& r : rows) {
        if (column == "avg_reward") out.push_back(r.avg_reward);
        else if (column == "avg_resp_len") out.push_back(r.avg_resp_len);
        else if (column == "loss") out.push_back(r.loss);
        else if (column == "kl_mean") out.push_back(r.kl_mean);
        else if (column == "lr") out.push_back(r.lr);
        else if (column == "step") out.push_back(static_cast<double>(r.step));
        else throw std::invalid_argument("unknown metrics column: " + std::string(column));
    }
    return out;
}

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string fmt_coord(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", x);
    return buf;
}

std::string fmt_tick(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", x);
    return buf;
}

}  // namespace

std::string render_plot_svg(const std::vector<RunSeries>& runs, std::string_view column,
                            int window) {
    if (runs.empty()) throw std::invalid_argument("render_plot_svg: no runs");
    for (const RunSeries& r : runs) {
        if (r.rows.empty()) {
            throw std::invalid_argument("render_plot_svg: run '" + r.label + "' has no rows");
        }
    }

    const double width = 800.0, height = 480.0;
    const double x0 = 64.0, x1 = 780.0, y0 = 430.0, y1 = 24.0;  // y grows upward

    std::vector<std::vector<double>> ys;
    double ymin = 1e300, ymax = -1e300;
    long long smin = 0, smax = 0;
    bool first = true;
    for (const RunSeries& r : runs) {
        ys.push_back(smooth(column_values(r.rows, column), window));
        for (double v : ys.back()) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
        for (const MetricsRow& row : r.rows) {
            if (first) {
                smin = smax = row.step;
                first = false;
            } else {
                smin = std::min(smin, row.step);
                smax = std::max(smax, row.step);
            }
        }
    }
    if (ymax <= ymin) {
        const double pad = std::max(1.0, std::fabs(ymin) * 0.1);
        ymax = ymin + pad;
        ymin -= pad;
    }
    if (smax == smin) smax = smin + 1;

    auto sx = [&](double step) {
        return x0 + (step - static_cast<double>(smin)) /
                        (static_cast<double>(smax) - static_cast<double>(smin)) * (x1 - x0);
    };
    auto sy = [&](double v) { return y0 + (v - ymin) / (ymax - ymin) * (y1 - y0); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"black\"/>\n";

    svg << "<text x=\"" << x0 << "\" y=\"" << y0 + 18 << "\" font-size=\"12\">" << smin
        << "</text>\n";
    svg << "<text x=\"" << x1 - 30 << "\" y=\"" << y0 + 18 << "\" font-size=\"12\">" << smax
        << "</text>\n";
    svg << "<text x=\"4\" y=\"" << y0 << "\" font-size=\"12\">" << fmt_tick(ymin) << "</text>\n";
    svg << "<text x=\"4\" y=\"" << y1 + 10 << "\" font-size=\"12\">" << fmt_tick(ymax)
        << "</text>\n";
    svg << "<text x=\"" << (x0 + x1) / 2.0 - 40 << "\" y=\"" << y0 + 34
        << "\" font-size=\"13\">step</text>\n";
    svg << "<text x=\"4\" y=\"14\" font-size=\"13\">" << std::string(column) << " (window "
        << window << ")</text>\n";

    for (std::size_t r = 0; r < runs.size(); ++r) {
        const char* color = kPalette[r % kPaletteSize];
        std::ostringstream pts;
        for (std::size_t i = 0; i < runs[r].rows.size(); ++i) {
            if (i) pts << ' ';
            pts << fmt_coord(sx(static_cast<double>(runs[r].rows[i].step))) << ','
                << fmt_coord(sy(ys[r][i]));
        }
        if (runs[r].rows.size() == 1) {
            svg << "<circle cx=\"" << fmt_coord(sx(static_cast<double>(runs[r].rows[0].step)))
                << "\" cy=\"" << fmt_coord(sy(ys[r][0])) << "\" r=\"3\" fill=\"" << color
                << "\"/>\n";
        } else {
            svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
                << "points=\"" << pts.str() << "\"/>\n";
        }
        const double ly = y1 + 16.0 + 16.0 * static_cast<double>(r);
        svg << "<rect x=\"" << x1 - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" "
            << "fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << x1 - 136 << "\" y=\"" << ly << "\" font-size=\"12\">"
            << runs[r].label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void plot_runs(const std::vector<RunSeries>& runs, std::string_view column, int window,
               const std::string& out_svg_path) {
    const std::string svg = render_plot_svg(runs, column, window);
    std::ofstream out(out_svg_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open plot output: " + out_svg_path);
    out << svg;
    if (!out) throw std::runtime_error("plot write failed: " + out_svg_path);
}

RunReport summarize_run(const RunSeries& run, const ReportOptions& opt) {
    if (run.rows.empty()) throw std::invalid_argument("summarize_run: run '" + run.label + "' is empty");
    if (opt.final_window < 1 || opt.collapse_window < 1 || opt.smooth_window < 1) {
        throw std::invalid_argument("summarize_run: windows must be >= 1");
    }
    if (!(opt.collapse_frac > 0.0 && opt.collapse_frac < 1.0)) {
        throw std::invalid_argument("summarize_run: collapse_frac must be in (0, 1)");
    }

    RunReport rep;
    rep.label = run.label;
    rep.steps = static_cast<long long>(run.rows.size());

    const std::size_t n = run.rows.size();
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(opt.final_window), n);
    double reward = 0.0, len = 0.0, kl = 0.0;
    for (std::size_t i = n - take; i < n; ++i) {
        reward += run.rows[i].avg_reward;
        len += run.rows[i].avg_resp_len;
        kl += run.rows[i].kl_mean;
    }
    rep.final_reward = reward / static_cast<double>(take);
    rep.final_resp_len = len / static_cast<double>(take);
    rep.final_kl = kl / static_cast<double>(take);

    const std::vector<double> sl = smooth(column_values(run.rows, "avg_resp_len"),
                                          opt.smooth_window);
    const double base = sl[0];
    const std::size_t horizon = std::min<std::size_t>(static_cast<std::size_t>(opt.collapse_window), n);
    for (std::size_t i = 1; i < horizon; ++i) {
        if (sl[i] < opt.collapse_frac * base) {
            rep.length_collapse = true;
            break;
        }
    }
    return rep;
}

std::string compare_report(const std::vector<RunSeries>& runs, const ReportOptions& opt) {
    if (runs.empty()) throw std::invalid_argument("compare_report: no runs");
    std::size_t lw = 3;
    for (const RunSeries& r : runs) lw = std::max(lw, r.label.size());

    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %6s  %12s  %14s  %10s  %8s\n",
                  static_cast<int>(lw), "run", "steps", "final_reward", "final_resp_len",
                  "final_kl", "collapse");
    out << buf;
    for (const RunSeries& r : runs) {
        const RunReport rep = summarize_run(r, opt);
        std::snprintf(buf, sizeof(buf), "%-*s  %6lld  %12.4f  %14.2f  %10.5f  %8s\n",
                      static_cast<int>(lw), rep.label.c_str(), rep.steps, rep.final_reward,
                      rep.final_resp_len, rep.final_kl, rep.length_collapse ? "yes" : "no");
        out << buf;
    }
    return out.str();
}

}  // namespace microrl
