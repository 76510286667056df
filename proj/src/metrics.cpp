#include "a5/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "a5/error.hpp"

namespace a5 {
namespace {

using ordered_json = nlohmann::ordered_json;

// Shortest decimal that round-trips the double; what both the JSON lines and
// the CSV cells use, so re-runs diff clean.
std::string fmt(double v) { return ordered_json(v).dump(); }

ordered_json to_json(const EpochMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["recipe"] = m.recipe;
  j["eps_a"] = m.eps_a;
  j["beta"] = m.beta;
  j["eps_a_c"] = m.eps_a_c;
  j["eps_a_r"] = m.eps_a_r;
  j["eps_d"] = m.eps_d;
  j["clean_err"] = m.clean_err;
  j["pgd_err"] = m.pgd_err;
  j["cert_err"] = m.cert_err;
  j["mean_wc_xent"] = m.mean_wc_xent;
  if (std::isfinite(m.psnr_mean)) {
    j["psnr_mean"] = m.psnr_mean;
  } else {
    j["psnr_mean"] = nullptr;
  }
  return j;
}

double require_number(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw FormatError(std::string("metrics: missing or non-numeric field '") + key + "'");
  }
  return it->get<double>();
}

EpochMetrics from_json(const ordered_json& j) {
  if (!j.is_object()) throw FormatError("metrics: line is not a JSON object");
  EpochMetrics m;
  auto epoch = j.find("epoch");
  if (epoch == j.end() || !epoch->is_number_integer()) {
    throw FormatError("metrics: missing or non-integer field 'epoch'");
  }
  m.epoch = epoch->get<int>();
  auto recipe = j.find("recipe");
  if (recipe == j.end() || !recipe->is_string()) {
    throw FormatError("metrics: missing or non-string field 'recipe'");
  }
  m.recipe = recipe->get<std::string>();
  m.eps_a = require_number(j, "eps_a");
  m.beta = require_number(j, "beta");
  m.eps_a_c = require_number(j, "eps_a_c");
  m.eps_a_r = require_number(j, "eps_a_r");
  m.eps_d = require_number(j, "eps_d");
  m.clean_err = require_number(j, "clean_err");
  m.pgd_err = require_number(j, "pgd_err");
  m.cert_err = require_number(j, "cert_err");
  m.mean_wc_xent = require_number(j, "mean_wc_xent");
  auto psnr = j.find("psnr_mean");
  if (psnr == j.end() || psnr->is_null()) {
    m.psnr_mean = std::numeric_limits<double>::infinity();
  } else if (psnr->is_number()) {
    m.psnr_mean = psnr->get<double>();
  } else {
    throw FormatError("metrics: field 'psnr_mean' must be a number or null");
  }
  return m;
}

}  // namespace

void write_metrics(const std::string& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("metrics: cannot open for writing: " + path);
  for (const EpochMetrics& m : rows) out << to_json(m).dump() << '\n';
  out.flush();
  if (!out) throw IoError("metrics: write failed: " + path);
}

std::vector<EpochMetrics> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("metrics: cannot open: " + path);
  std::vector<EpochMetrics> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw FormatError("metrics: " + path + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    rows.push_back(from_json(j));
  }
  return rows;
}

ReportSummary emit_report(const std::string& metrics_dir, const std::string& csv_path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(metrics_dir)) {
    throw IoError("report: not a directory: " + metrics_dir);
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(metrics_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  ReportSummary summary;
  std::vector<EpochMetrics> finals;
  for (const fs::path& file : files) {
    ++summary.runs;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      std::cerr << "report: warning: cannot open " << file.string() << ", skipping\n";
      ++summary.warnings;
      continue;
    }
    // The run's final state is its last well-formed line; malformed lines are
    // skipped individually so one bad append doesn't hide a whole run.
    bool have_last = false;
    EpochMetrics last;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      ordered_json j = ordered_json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        std::cerr << "report: warning: " << file.string() << ":" << lineno
                  << ": invalid JSON, line skipped\n";
        ++summary.warnings;
        continue;
      }
      try {
        last = from_json(j);
        have_last = true;
      } catch (const FormatError& e) {
        std::cerr << "report: warning: " << file.string() << ":" << lineno << ": " << e.what()
                  << ", line skipped\n";
        ++summary.warnings;
      }
    }
    if (!have_last) {
      std::cerr << "report: warning: " << file.string() << ": no usable metrics, run skipped\n";
      ++summary.warnings;
      continue;
    }
    const double tol = 1e-12;
    if (last.cert_err < last.pgd_err - tol || last.pgd_err < last.clean_err - tol) {
      throw FormatError("report: " + file.string() +
                        ": error ordering violated (expected cert_err >= pgd_err >= clean_err, got " +
                        fmt(last.cert_err) + " / " + fmt(last.pgd_err) + " / " +
                        fmt(last.clean_err) + ")");
    }
    finals.push_back(std::move(last));
  }

  std::stable_sort(finals.begin(), finals.end(), [](const EpochMetrics& a, const EpochMetrics& b) {
    if (a.recipe != b.recipe) return a.recipe < b.recipe;
    return a.eps_d < b.eps_d;
  });

  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("report: cannot open for writing: " + csv_path);
  csv << "recipe,eps_a_c,eps_a_r,eps_d,clean_err,pgd_err,cert_err,psnr_mean\n";
  for (const EpochMetrics& m : finals) {
    csv << m.recipe << ',' << fmt(m.eps_a_c) << ',' << fmt(m.eps_a_r) << ',' << fmt(m.eps_d) << ','
        << fmt(m.clean_err) << ',' << fmt(m.pgd_err) << ',' << fmt(m.cert_err) << ',';
    if (std::isfinite(m.psnr_mean)) csv << fmt(m.psnr_mean);
    csv << '\n';
    ++summary.rows;
  }
  csv.flush();
  if (!csv) throw IoError("report: write failed: " + csv_path);

  ordered_json s;
  s["runs"] = summary.runs;
  s["rows"] = summary.rows;
  s["warnings"] = summary.warnings;
  fs::path summary_path = fs::path(csv_path).parent_path() / "summary.json";
  std::ofstream sj(summary_path, std::ios::binary);
  if (!sj) throw IoError("report: cannot open for writing: " + summary_path.string());
  sj << s.dump(2) << '\n';
  sj.flush();
  if (!sj) throw IoError("report: write failed: " + summary_path.string());
  return summary;
}

}  // namespace a5
