#pragma once

#include <iosfwd>
#include <string>
#include <utility>

#include "churnlab/types.hpp"

namespace churnlab {

// CSV form: header label,p0,...,p{K-1}; one row per example. Doubles are
// printed with shortest round-trip decimals, so a write/read cycle is
// bit-exact.
void write_probs_csv(std::ostream& out, const ProbMatrix& probs, const LabelVector& labels);
std::pair<ProbMatrix, LabelVector> read_probs_csv(std::istream& in, const std::string& name);
std::pair<ProbMatrix, LabelVector> read_probs_csv_file(const std::string& path);
void write_probs_csv_file(const std::string& path, const ProbMatrix& probs,
                          const LabelVector& labels);

// JSON-lines form: {"label":y,"p":[...]} per line, same round-trip guarantee.
void write_probs_jsonl(std::ostream& out, const ProbMatrix& probs, const LabelVector& labels);
std::pair<ProbMatrix, LabelVector> read_probs_jsonl(std::istream& in, const std::string& name);

// Single-column label CSV (header "label").
LabelVector read_labels_csv_file(const std::string& path);

}  // namespace churnlab
