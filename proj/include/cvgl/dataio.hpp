#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvgl/types.hpp"

namespace cvgl {

/// Schema or invariant violation in an input file. `line` is 1-based,
/// 0 when the violation is not tied to a specific line.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(int line, std::string field, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ", " +
                                          field + ": " + message
                                    : field + ": " + message),
        line_(line),
        field_(std::move(field)) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

struct ValidationIssue {
  std::string field;
  std::string message;

  bool operator==(const ValidationIssue&) const = default;
};

/// Result of checking one CandidateList. Violations are data, not faults:
/// an invalid list yields ok=false, never an exception. gt_absent flags the
/// legal case where the true match fell outside the top-K.
struct ValidationReport {
  bool ok = true;
  bool gt_absent = false;
  std::vector<ValidationIssue> violations;

  bool operator==(const ValidationReport&) const = default;
};

ValidationReport validate_candidate_list(const CandidateList& list);

/// Loads a line-delimited candidate file. Throws SchemaError on the first
/// malformed line (reporting line number and field) and std::runtime_error
/// on IO failure. Input order is preserved.
std::vector<CandidateList> load_candidates(const std::filesystem::path& path);

/// Collects every violation instead of throwing, for `validate`-style
/// reporting. Lists that parse but violate invariants are still returned.
struct LineIssue {
  int line = 0;
  std::string query_id;
  std::string field;
  std::string message;
};
struct LenientLoadResult {
  std::vector<CandidateList> lists;
  std::vector<LineIssue> issues;
};
LenientLoadResult load_candidates_lenient(const std::filesystem::path& path);

void save_candidates(const std::vector<CandidateList>& lists,
                     const std::filesystem::path& path);

/// Rerank-result files round-trip exactly: load(save(x)) == x. save_results
/// refuses records whose order cannot be a permutation (duplicate ids) or
/// whose scores are misaligned with the order.
void save_results(const std::vector<RerankResult>& results,
                  const std::filesystem::path& path);
std::vector<RerankResult> load_results(const std::filesystem::path& path);

/// Serializes one result exactly as save_results writes it (one JSON line,
/// no trailing newline).
std::string result_to_json_line(const RerankResult& r);

/// Atomically replaces `path` with `content` (write to temp, then rename).
void atomic_write_file(const std::filesystem::path& path,
                       std::string_view content);

/// Reads a whole file; throws std::runtime_error on IO failure.
std::string read_file(const std::filesystem::path& path);

}  // namespace cvgl
