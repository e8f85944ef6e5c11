#include <istream>
#include <ostream>
#include <sstream>

#include "lorafuse/report.hpp"
#include "lorafuse/storage.hpp"

namespace lorafuse::report {

namespace {

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        in_quotes = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace

void write_header(std::ostream& out, const ReportHeader& header) {
  out << "# format_version: " << kReportFormatVersion << '\n';
  out << "# report: " << header.kind << '\n';
  out << "# library_digest: " << (header.library_digest.empty() ? "none" : header.library_digest)
      << '\n';
  for (const auto& [key, value] : header.config) out << "# " << key << ": " << value << '\n';
}

void write_metric_table(std::ostream& out, const bench::MetricTable& table,
                        const ReportHeader& header) {
  write_header(out, header);
  out << "domain";
  for (const auto& m : table.methods) out << ',' << csv_field(m);
  out << '\n';
  for (std::size_t d = 0; d < table.domains.size(); ++d) {
    out << csv_field(table.domains[d]);
    for (double v : table.miou[d]) out << ',' << format_double(v);
    out << '\n';
  }
  out << "h-mean";
  for (const auto& m : table.methods) out << ',' << format_double(table.hmean(m));
  out << '\n';
}

void write_contributions(std::ostream& out, const ContributionMatrix& m,
                         const ReportHeader& header, double mask_below) {
  write_header(out, header);
  out << "test_domain";
  for (const auto& c : m.cols) out << ',' << csv_field(c);
  out << '\n';
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    out << csv_field(m.rows[r]);
    for (const auto& cell : m.cells[r]) {
      out << ',';
      if (!cell) {
        out << "NA";
      } else if (*cell >= mask_below) {
        out << format_double(*cell);
      }
    }
    out << '\n';
  }
}

void write_pairs(std::ostream& out, std::span<const std::pair<double, double>> pairs,
                 std::string_view x_name, std::string_view y_name, const ReportHeader& header) {
  write_header(out, header);
  out << csv_field(x_name) << ',' << csv_field(y_name) << '\n';
  for (const auto& [x, y] : pairs) out << format_double(x) << ',' << format_double(y) << '\n';
}

void write_sweep(std::ostream& out, const bench::SweepGrid& grid, const ReportHeader& header) {
  write_header(out, header);
  out << "top_k";
  for (double t : grid.temperatures) out << ",tau=" << format_double(t);
  out << '\n';
  for (std::size_t k = 0; k < grid.top_ks.size(); ++k) {
    out << grid.top_ks[k];
    for (double v : grid.hmean[k]) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_compounds(std::ostream& out, std::span<const bench::CompoundOutcome> outcomes,
                     const ReportHeader& header) {
  write_header(out, header);
  out << "compound,parent_a,parent_b,mix,parent_share,parents_on_top,first,second\n";
  for (const auto& o : outcomes) {
    out << csv_field(o.compound_id) << ',' << csv_field(o.parents.first) << ','
        << csv_field(o.parents.second) << ',' << format_double(o.mix) << ','
        << format_double(o.parent_share) << ',' << (o.parents_on_top ? "true" : "false");
    for (std::size_t i = 0; i < 2; ++i)
      out << ',' << (i < o.mean_weights.size() ? csv_field(o.mean_weights[i].first) : "");
    out << '\n';
  }
}

ContributionMatrix read_contributions(std::istream& in) {
  ContributionMatrix m;
  std::string line;
  bool have_columns = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_csv(line);
    if (!have_columns) {
      if (fields.size() < 2) throw UsageError("contribution CSV: header needs adapter columns");
      m.cols.assign(fields.begin() + 1, fields.end());
      have_columns = true;
      continue;
    }
    if (fields.size() != m.cols.size() + 1) {
      throw UsageError("contribution CSV line " + std::to_string(line_no) + ": expected " +
                       std::to_string(m.cols.size() + 1) + " fields");
    }
    m.rows.push_back(fields.front());
    std::vector<std::optional<double>> cells;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (fields[c] == "NA") {
        cells.emplace_back();
      } else if (fields[c].empty()) {
        cells.emplace_back(0.0);
      } else {
        try {
          std::size_t used = 0;
          cells.emplace_back(std::stod(fields[c], &used));
          if (used != fields[c].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw UsageError("contribution CSV line " + std::to_string(line_no) +
                           ": bad number '" + fields[c] + "'");
        }
      }
    }
    m.cells.push_back(std::move(cells));
  }
  if (!have_columns) throw UsageError("contribution CSV: no header row");
  return m;
}

}  // namespace lorafuse::report
