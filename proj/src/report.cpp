#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "spwc/errors.hpp"
#include "spwc/harness.hpp"
#include "spwc/metrics.hpp"

namespace spwc {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

// CSV with a header row; cells addressed by column name.
class CsvTable {
 public:
  explicit CsvTable(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header row");
    header_ = split_csv_line(line);
    std::size_t number = 1;
    while (std::getline(in, line)) {
      ++number;
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (cells.size() != header_.size()) {
        throw FormatError(path.string() + ":" + std::to_string(number) + ": expected " +
                          std::to_string(header_.size()) + " cells, got " +
                          std::to_string(cells.size()));
      }
      rows_.push_back(std::move(cells));
    }
  }

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header_.begin(), header_.end(), name);
    if (it == header_.end()) throw FormatError(path_.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header_.begin());
  }
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

double to_double(const std::string& cell, const fs::path& path) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError(path.string() + ": not a number: '" + cell + "'");
  }
  return x;
}

std::uint64_t to_u64(const std::string& cell, const fs::path& path) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError(path.string() + ": not an integer: '" + cell + "'");
  }
  return x;
}

// Hyperparameter key without the seed.
std::string point_key(const std::string& method, double lambda, double gamma, double lr,
                      const std::string& mu, const std::string& reg) {
  return method + ',' + format_double(lambda) + ',' + format_double(gamma) + ',' +
         format_double(lr) + ',' + mu + ',' + reg;
}

std::string point_label(const GridPoint& p) {
  std::string s = p.method + " (";
  if (p.lambda != 0.0) s += "lambda=" + format_double(p.lambda) + ", ";
  if (p.gamma != 0.0) s += "gamma=" + format_double(p.gamma) + ", ";
  s += "lr=" + format_double(p.lr);
  if (!p.mu_policy.empty()) s += ", mu=" + p.mu_policy;
  if (!p.regularizer.empty() && p.regularizer != "proposed") s += ", reg=" + p.regularizer;
  return s + ")";
}

std::string fixed(double x, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << x;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace

bool GridPoint::matches(const ResultsRow& row) const {
  return row.method == method && row.lambda == lambda && row.gamma == gamma && row.lr == lr &&
         row.mu_policy == mu_policy && row.regularizer == regularizer;
}

std::vector<ResultsRow> read_results(const fs::path& path) {
  const CsvTable table(path);
  const auto& p = table.path();
  const std::size_t c_stream = table.column("stream"), c_method = table.column("method"),
                    c_tag = table.column("tag"), c_lambda = table.column("lambda"),
                    c_gamma = table.column("gamma"), c_lr = table.column("lr"),
                    c_mu_policy = table.column("mu_policy"), c_reg = table.column("regularizer"),
                    c_seed = table.column("seed"), c_stage = table.column("stage"),
                    c_task = table.column("task_id"), c_apa = table.column("apa"),
                    c_acf = table.column("acf"), c_psa = table.column("ps_active"),
                    c_pst = table.column("ps_total"), c_mu = table.column("mu"),
                    c_ret = table.column("retained_k"), c_sto = table.column("stored"),
                    c_tmin = table.column("touched_min"), c_tmax = table.column("touched_max");
  std::vector<std::size_t> acc_columns;
  for (std::size_t t = 1;; ++t) {
    const auto& h = table.header();
    const auto it = std::find(h.begin(), h.end(), "acc_" + std::to_string(t));
    if (it == h.end()) break;
    acc_columns.push_back(static_cast<std::size_t>(it - h.begin()));
  }
  std::vector<ResultsRow> rows;
  for (const auto& cells : table.rows()) {
    ResultsRow r;
    r.stream = cells[c_stream];
    r.method = cells[c_method];
    r.tag = cells[c_tag];
    r.lambda = to_double(cells[c_lambda], p);
    r.gamma = to_double(cells[c_gamma], p);
    r.lr = to_double(cells[c_lr], p);
    r.mu_policy = cells[c_mu_policy];
    r.regularizer = cells[c_reg];
    r.seed = to_u64(cells[c_seed], p);
    r.stage = to_u64(cells[c_stage], p);
    r.task_id = to_u64(cells[c_task], p);
    r.apa = to_double(cells[c_apa], p);
    r.acf = to_double(cells[c_acf], p);
    r.ps_active = to_double(cells[c_psa], p);
    r.ps_total = to_double(cells[c_pst], p);
    if (!cells[c_mu].empty()) r.mu = to_double(cells[c_mu], p);
    r.retained = to_u64(cells[c_ret], p);
    r.stored = to_u64(cells[c_sto], p);
    r.touched_min = to_u64(cells[c_tmin], p);
    r.touched_max = to_u64(cells[c_tmax], p);
    for (std::size_t c : acc_columns) {
      r.accuracy.push_back(cells[c].empty() ? std::nullopt
                                            : std::optional<double>(to_double(cells[c], p)));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<GridPoint> grid_select(std::span<const ResultsRow> rows) {
  if (rows.empty()) throw UsageError("grid_select: no results");
  std::vector<std::string> methods;
  std::map<std::string, std::size_t> final_stage;
  for (const ResultsRow& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    std::size_t& s = final_stage[r.method];
    s = std::max(s, r.stage);
  }
  std::vector<GridPoint> best;
  for (const std::string& method : methods) {
    std::vector<GridPoint> points;
    std::map<std::string, std::size_t> index;
    for (const ResultsRow& r : rows) {
      if (r.method != method || r.stage != final_stage[method]) continue;
      const std::string key = point_key(r.method, r.lambda, r.gamma, r.lr, r.mu_policy, r.regularizer);
      auto [it, inserted] = index.try_emplace(key, points.size());
      if (inserted) points.push_back({r.method, r.lambda, r.gamma, r.lr, r.mu_policy, r.regularizer, 0.0, 0});
      GridPoint& p = points[it->second];
      p.score += r.apa;
      ++p.seeds;
    }
    for (GridPoint& p : points) p.score /= static_cast<double>(p.seeds);
    const auto better = [](const GridPoint& a, const GridPoint& b) {
      if (a.score != b.score) return a.score > b.score;
      const double sa = a.lambda + a.gamma, sb = b.lambda + b.gamma;
      if (sa != sb) return sa < sb;
      if (a.lr != b.lr) return a.lr < b.lr;
      if (a.mu_policy != b.mu_policy) return a.mu_policy < b.mu_policy;
      return a.regularizer < b.regularizer;
    };
    best.push_back(*std::min_element(points.begin(), points.end(), better));
  }
  return best;
}

std::vector<ConvergenceVerdict> check_convergence(const fs::path& convergence_csv, double band,
                                                  std::size_t window) {
  const CsvTable table(convergence_csv);
  const std::size_t c_stage = table.column("stage"), c_epoch = table.column("epoch"),
                    c_obj = table.column("objective");
  const std::size_t key_columns = table.column("seed") + 1;
  std::vector<ConvergenceVerdict> verdicts;
  std::vector<double> trace;
  const auto close = [&](ConvergenceVerdict v) {
    if (trace.empty()) return;
    const std::size_t n = std::min(window, trace.size());
    const auto first = trace.end() - static_cast<std::ptrdiff_t>(n);
    double scale = 0.0;
    for (auto it = first; it != trace.end(); ++it) scale = std::max(scale, std::abs(*it));
    v.epochs_checked = n;
    for (auto it = first; it + 1 != trace.end(); ++it) {
      const double rise = *(it + 1) - *it;
      const double ratio = scale > 0.0 ? rise / scale : (rise > 0.0 ? INFINITY : 0.0);
      v.worst_rise = std::max(v.worst_rise, ratio);
      if (rise > band * scale) v.passed = false;
    }
    verdicts.push_back(std::move(v));
    trace.clear();
  };
  ConvergenceVerdict current;
  bool open = false;
  for (const auto& cells : table.rows()) {
    std::string run;
    for (std::size_t c = 0; c < key_columns; ++c) run += (c ? "," : "") + cells[c];
    const std::size_t stage = to_u64(cells[c_stage], table.path());
    if (!open || run != current.run || stage != current.stage) {
      if (open) close(current);
      current = ConvergenceVerdict{run, stage, 0, 0.0, true};
      open = true;
    }
    (void)to_u64(cells[c_epoch], table.path());
    trace.push_back(to_double(cells[c_obj], table.path()));
  }
  if (open) close(current);
  return verdicts;
}

int report(const fs::path& dir, std::ostream& out) {
  std::vector<std::string> missing;
  for (const char* name : {kResultsFile, kWeightsFile, kConvergenceFile, kManifestFile}) {
    if (!fs::exists(dir / name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + (dir / m).string();
    throw UsageError("report: missing result files in " + dir.string() + ":" + list +
                     "\nexpected results.csv, weights.csv, convergence.csv and manifest.json");
  }

  const std::vector<ResultsRow> rows = read_results(dir / kResultsFile);
  const std::vector<GridPoint> selected = grid_select(rows);

  // Per selected point: per-seed APA trajectories, then means per stage.
  struct Series {
    GridPoint point;
    std::map<std::uint64_t, std::vector<const ResultsRow*>> by_seed;
    std::size_t stages = 0;
  };
  std::vector<Series> series;
  for (const GridPoint& p : selected) {
    Series s{p, {}, 0};
    for (const ResultsRow& r : rows) {
      if (!p.matches(r)) continue;
      s.by_seed[r.seed].push_back(&r);
      s.stages = std::max(s.stages, r.stage);
    }
    series.push_back(std::move(s));
  }
  const auto stage_mean = [](const Series& s, std::size_t stage, double ResultsRow::*field) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [seed, list] : s.by_seed) {
      for (const ResultsRow* r : list) {
        if (r->stage == stage) {
          sum += r->*field;
          ++n;
        }
      }
    }
    return n ? sum / static_cast<double>(n) : NAN;
  };
  const auto average_apa = [](const std::vector<const ResultsRow*>& list) {
    std::vector<double> apas;
    for (const ResultsRow* r : list) apas.push_back(r->apa);
    return stream_average(apas);
  };

  std::size_t max_stage = 0;
  for (const Series& s : series) max_stage = std::max(max_stage, s.stages);
  const auto by_stage_csv = [&](double ResultsRow::*field) {
    std::string csv = "stage";
    for (const Series& s : series) csv += ',' + s.point.method;
    csv += '\n';
    for (std::size_t stage = 1; stage <= max_stage; ++stage) {
      csv += std::to_string(stage);
      for (const Series& s : series) {
        const double m = stage_mean(s, stage, field);
        csv += ',' + (std::isnan(m) ? std::string() : format_double(m));
      }
      csv += '\n';
    }
    return csv;
  };
  write_text(dir / "report_apa.csv", by_stage_csv(&ResultsRow::apa));
  write_text(dir / "report_acf.csv", by_stage_csv(&ResultsRow::acf));

  std::string ps_csv = "method,stage,ps_active,ps_total\n";
  for (const Series& s : series) {
    for (std::size_t stage = 1; stage <= s.stages; ++stage) {
      ps_csv += s.point.method + ',' + std::to_string(stage) + ',' +
                format_double(stage_mean(s, stage, &ResultsRow::ps_active)) + ',' +
                format_double(stage_mean(s, stage, &ResultsRow::ps_total)) + '\n';
    }
  }
  write_text(dir / "report_ps.csv", ps_csv);

  std::string summary_csv = "method,lambda,gamma,lr,mu_policy,regularizer,seeds,final_apa,average_apa,average_apa_sd,final_acf,final_ps_active,final_ps_total\n";
  std::ostringstream text;
  text << "Selected grid points (final-stage APA averaged over seeds):\n";
  for (const Series& s : series) {
    std::vector<double> per_seed;
    for (const auto& [seed, list] : s.by_seed) per_seed.push_back(average_apa(list));
    const double mean = stream_average(per_seed);
    double var = 0.0;
    for (double x : per_seed) var += (x - mean) * (x - mean);
    const double sd = per_seed.size() > 1 ? std::sqrt(var / static_cast<double>(per_seed.size() - 1)) : 0.0;
    const GridPoint& p = s.point;
    summary_csv += p.method + ',' + format_double(p.lambda) + ',' + format_double(p.gamma) + ',' +
                   format_double(p.lr) + ',' + p.mu_policy + ',' + p.regularizer + ',' +
                   std::to_string(per_seed.size()) + ',' + format_double(p.score) + ',' +
                   format_double(mean) + ',' + format_double(sd) + ',' +
                   format_double(stage_mean(s, s.stages, &ResultsRow::acf)) + ',' +
                   format_double(stage_mean(s, s.stages, &ResultsRow::ps_active)) + ',' +
                   format_double(stage_mean(s, s.stages, &ResultsRow::ps_total)) + '\n';
    text << "  " << point_label(p) << "\n"
         << "    Average-APA " << fixed(100.0 * mean, 2) << " +- " << fixed(100.0 * sd, 2)
         << "  final APA " << fixed(100.0 * p.score, 2) << "  final ACF "
         << fixed(100.0 * stage_mean(s, s.stages, &ResultsRow::acf), 2) << "  PS active "
         << fixed(stage_mean(s, s.stages, &ResultsRow::ps_active), 4) << "  PS total "
         << fixed(stage_mean(s, s.stages, &ResultsRow::ps_total), 4) << "  seeds "
         << per_seed.size() << "\n";
  }
  write_text(dir / "report_summary.csv", summary_csv);

  text << "\nAPA by stage (%):\n  stage";
  for (const Series& s : series) text << "  " << s.point.method;
  text << "\n";
  for (std::size_t stage = 1; stage <= max_stage; ++stage) {
    text << "  " << stage;
    for (const Series& s : series) {
      const double m = stage_mean(s, stage, &ResultsRow::apa);
      text << "  " << (std::isnan(m) ? std::string("-") : fixed(100.0 * m, 2));
    }
    text << "\n";
  }

  const auto verdicts = check_convergence(dir / kConvergenceFile);
  std::string conv_csv = "method,lambda,gamma,lr,mu_policy,regularizer,seed,stage,epochs_checked,worst_rise,passed\n";
  std::size_t failures = 0;
  for (const auto& v : verdicts) {
    conv_csv += v.run + ',' + std::to_string(v.stage) + ',' + std::to_string(v.epochs_checked) + ',' +
                format_double(v.worst_rise) + ',' + (v.passed ? "1" : "0") + '\n';
    failures += !v.passed;
  }
  write_text(dir / "report_convergence.csv", conv_csv);
  text << "\nConvergence (last 5 epochs nonincreasing within 2%): " << (verdicts.size() - failures)
       << "/" << verdicts.size() << " stage windows pass\n";
  for (const auto& v : verdicts) {
    if (!v.passed) text << "  FAIL " << v.run << " stage " << v.stage << " worst rise " << fixed(100.0 * v.worst_rise, 3) << "%\n";
  }

  write_text(dir / "summary.txt", text.str());
  out << text.str();
  return failures == 0 ? 0 : 1;
}

}  // namespace spwc
