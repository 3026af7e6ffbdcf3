#pragma once

#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace microrl {

// One training-step record. `loss` is the value being minimized at that step
// (negated surrogate for the policy-gradient methods, cross-entropy for the
// distillation-style ones); `kl_mean` is the token-mean KL estimate against
// the step-0 reference when one is in play.
struct MetricsRow {
    long long step = 0;
    double avg_reward = 0.0;
    double avg_resp_len = 0.0;
    double loss = 0.0;
    double kl_mean = 0.0;
    double lr = 0.0;
    long long elapsed_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,avg_reward,avg_resp_len,loss,kl_mean,lr,elapsed_ms";

// Doubles are rendered with enough digits to round-trip exactly, so re-reading
// a file reproduces the in-memory rows bit for bit.
std::string format_metrics_row(const MetricsRow& row);

// Streams rows to disk as they arrive; the header goes out on construction
// and every row is flushed so partial runs stay readable.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void write(const MetricsRow& row);

private:
    std::ofstream out_;
};

// Validates the exact header and every field; throws std::runtime_error with
// a path:line diagnostic on malformed input.
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// Trailing-window moving average: out[i] is the mean of the last
// min(window, i+1) values. Uses a streaming mean per position so constant
// inputs come back exactly unchanged. window must be >= 1.
std::vector<double> smooth(const std::vector<double>& xs, int window);

// Extracts a named column ("avg_reward", "avg_resp_len", "loss", "kl_mean",
// "lr"); throws std::invalid_argument on unknown names.
std::vector<double> column_values(const std::vector<MetricsRow>& rows, std::string_view column);

struct RunSeries {
    std::string label;
    std::vector<MetricsRow> rows;
};

// Renders smoothed per-run curves of one column as an SVG line chart with
// axes and a legend. All runs share the axis ranges.
std::string render_plot_svg(const std::vector<RunSeries>& runs, std::string_view column,
                            int window);
void plot_runs(const std::vector<RunSeries>& runs, std::string_view column, int window,
               const std::string& out_svg_path);

struct ReportOptions {
    int final_window = 20;        // trailing steps averaged for final figures
    int smooth_window = 5;        // smoothing before collapse detection
    int collapse_window = 20;     // initial steps inspected for a collapse
    double collapse_frac = 0.25;  // collapse threshold vs the step-0 level
};

struct RunReport {
    std::string label;
    long long steps = 0;
    double final_reward = 0.0;
    double final_resp_len = 0.0;
    double final_kl = 0.0;
    bool length_collapse = false;  // smoothed length fell below the threshold early on
};

RunReport summarize_run(const RunSeries& run, const ReportOptions& opt = {});

// Aligned text table over several runs, one line per run.
std::string compare_report(const std::vector<RunSeries>& runs, const ReportOptions& opt = {});

}  // namespace microrl
