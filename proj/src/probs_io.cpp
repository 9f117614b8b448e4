#include "churnlab/probs_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "churnlab/common.hpp"
#include "churnlab/serialize.hpp"

namespace churnlab {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

void write_probs_csv(std::ostream& out, const ProbMatrix& probs, const LabelVector& labels) {
  labels.validate(probs.n, probs.k);
  out << "label";
  for (int j = 0; j < probs.k; ++j) out << ",p" << j;
  out << "\n";
  for (int i = 0; i < probs.n; ++i) {
    out << labels[i];
    for (int j = 0; j < probs.k; ++j) out << ',' << format_double(probs.at(i, j));
    out << "\n";
  }
}

std::pair<ProbMatrix, LabelVector> read_probs_csv(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + name + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.empty() || header[0] != "label") {
    throw ParseError("'" + name + "' line 1: header must start with 'label'");
  }
  const int k = static_cast<int>(header.size()) - 1;
  if (k < 2) throw ParseError("'" + name + "' line 1: needs at least two probability columns");
  for (int j = 0; j < k; ++j) {
    if (header[static_cast<std::size_t>(j) + 1] != "p" + std::to_string(j)) {
      throw ParseError("'" + name + "' line 1: expected column p" + std::to_string(j));
    }
  }

  std::vector<double> p;
  std::vector<int> y;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto toks = split_csv(line);
    if (static_cast<int>(toks.size()) != k + 1) {
      throw ParseError("'" + name + "' line " + std::to_string(line_no) + ": expected " +
                       std::to_string(k + 1) + " columns, got " + std::to_string(toks.size()));
    }
    try {
      y.push_back(static_cast<int>(parse_int(toks[0])));
      for (int j = 0; j < k; ++j) p.push_back(parse_double(toks[static_cast<std::size_t>(j) + 1]));
    } catch (const ParseError& e) {
      throw ParseError("'" + name + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  ProbMatrix probs;
  probs.n = static_cast<int>(y.size());
  probs.k = k;
  probs.p = std::move(p);
  probs.validate();
  LabelVector labels(std::move(y));
  labels.validate(probs.n, probs.k);
  return {std::move(probs), std::move(labels)};
}

std::pair<ProbMatrix, LabelVector> read_probs_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_probs_csv(in, path);
}

void write_probs_csv_file(const std::string& path, const ProbMatrix& probs,
                          const LabelVector& labels) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  write_probs_csv(out, probs, labels);
}

void write_probs_jsonl(std::ostream& out, const ProbMatrix& probs, const LabelVector& labels) {
  labels.validate(probs.n, probs.k);
  for (int i = 0; i < probs.n; ++i) {
    nlohmann::json rec;
    rec["label"] = labels[i];
    rec["p"] = std::vector<double>(probs.row(i).begin(), probs.row(i).end());
    out << rec.dump() << "\n";
  }
}

std::pair<ProbMatrix, LabelVector> read_probs_jsonl(std::istream& in, const std::string& name) {
  std::vector<double> p;
  std::vector<int> y;
  int k = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("'" + name + "' line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.contains("label") || !rec.contains("p")) {
      throw ParseError("'" + name + "' line " + std::to_string(line_no) +
                       ": record needs 'label' and 'p'");
    }
    y.push_back(rec["label"].get<int>());
    const auto row = rec["p"].get<std::vector<double>>();
    if (k < 0) k = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != k) {
      throw ParseError("'" + name + "' line " + std::to_string(line_no) +
                       ": inconsistent row width");
    }
    p.insert(p.end(), row.begin(), row.end());
  }
  if (y.empty()) throw ParseError("'" + name + "' has no records");
  ProbMatrix probs;
  probs.n = static_cast<int>(y.size());
  probs.k = k;
  probs.p = std::move(p);
  probs.validate();
  LabelVector labels(std::move(y));
  labels.validate(probs.n, probs.k);
  return {std::move(probs), std::move(labels)};
}

LabelVector read_labels_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "label") throw ParseError("'" + path + "' line 1: header must be 'label'");
  std::vector<int> y;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      y.push_back(static_cast<int>(parse_int(line)));
    } catch (const ParseError& e) {
      throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return LabelVector(std::move(y));
}

}  // namespace churnlab
