#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorafuse/bench/harness.hpp"
#include "lorafuse/metrics.hpp"

namespace lorafuse::report {

inline constexpr int kReportFormatVersion = 1;

// Leading "# key: value" lines on every CSV report.
struct ReportHeader {
  std::string kind;
  std::string library_digest;
  std::vector<std::pair<std::string, std::string>> config;
};

void write_header(std::ostream& out, const ReportHeader& header);

// Row = domain, column = method, last row "h-mean". Values are mIoU in percent.
void write_metric_table(std::ostream& out, const bench::MetricTable& table,
                        const ReportHeader& header);

// Row = test domain, column = adapter. "NA" marks an adapter that was not
// available to the row (its own adapter under leave-one-out); an empty cell
// marks a weight below `mask_below`.
void write_contributions(std::ostream& out, const ContributionMatrix& m,
                         const ReportHeader& header, double mask_below = 0.0);

// Columns: `x_name`, `y_name`.
void write_pairs(std::ostream& out, std::span<const std::pair<double, double>> pairs,
                 std::string_view x_name, std::string_view y_name, const ReportHeader& header);

// Row = K, column = temperature, cell = leave-one-out fusion h-mean.
void write_sweep(std::ostream& out, const bench::SweepGrid& grid, const ReportHeader& header);

void write_compounds(std::ostream& out, std::span<const bench::CompoundOutcome> outcomes,
                     const ReportHeader& header);

// Parses a contribution CSV written above. Masked cells read back as 0.
ContributionMatrix read_contributions(std::istream& in);

// Cells below `mask_below` are left blank; unavailable cells are hatched.
std::string heatmap_svg(const ContributionMatrix& m, std::string_view title,
                        double mask_below = 0.1);

// Slices below `min_share` are folded into "other".
std::string pie_svg(std::span<const std::pair<std::string, double>> slices,
                    std::string_view title, double min_share = 0.05);

}  // namespace lorafuse::report
