#pragma once

#include <string>
#include <vector>

#include "a5/defense.hpp"

namespace a5 {

// Serializes one run's per-epoch metrics as JSON lines (one object per line,
// LF endings, stable key order, doubles in shortest round-trip form). A
// non-finite psnr_mean (the "nothing was perturbed" sentinel) is written as
// null. Overwrites `path`.
void write_metrics(const std::string& path, const std::vector<EpochMetrics>& rows);

// Parses a metrics file written by write_metrics. Raises IoError if the file
// cannot be opened and FormatError on any malformed line.
std::vector<EpochMetrics> read_metrics(const std::string& path);

struct ReportSummary {
  int runs = 0;      // metrics files scanned
  int rows = 0;      // rows written to the CSV
  int warnings = 0;  // malformed lines and empty files skipped
};

// Scans `metrics_dir` for *.jsonl files (sorted by name), takes each run's
// final line, and writes `csv_path` with header
//   recipe,eps_a_c,eps_a_r,eps_d,clean_err,pgd_err,cert_err,psnr_mean
// sorted by (recipe, eps_d) ascending, stable. Malformed lines are skipped
// with a warning on stderr and counted in the summary, which is also written
// as summary.json next to the CSV. A run whose final metrics violate
// cert_err >= pgd_err >= clean_err raises FormatError: that ordering is
// guaranteed by construction, so a violation means the inputs are not ours.
ReportSummary emit_report(const std::string& metrics_dir, const std::string& csv_path);

}  // namespace a5
