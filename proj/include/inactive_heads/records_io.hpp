#pragma once

// Text formats: EvalRecord CSV (also the import schema for externally
// produced results), threshold policies as JSON, score matrices as CSV.
// Doubles are printed in shortest round-trip form so files are stable.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "inactive_heads/calibration.hpp"
#include "inactive_heads/intervention.hpp"

namespace ihead {

std::string format_double(double v);

// Lines beginning with '#' are comments; `comments` are written that way.
void write_eval_records_csv(std::ostream& out, const std::vector<EvalRecord>& records,
                            const std::vector<std::string>& comments = {});
// Throws data_error on a malformed header or row.
std::vector<EvalRecord> read_eval_records_csv(std::istream& in);

/// Groups records by fn into curves (fn order of first appearance).
std::vector<Curve> curves_from_records(const std::vector<EvalRecord>& records);

nlohmann::json to_json(const EvalRecord& record);
nlohmann::json to_json(const Curve& curve);

nlohmann::json to_json(const ThresholdPolicy& policy);
ThresholdPolicy policy_from_json(const nlohmann::json& j);  // throws data_error

// heads x layers grid with a header row "head,layer_0,...".
void write_score_matrix_csv(std::ostream& out, const ScoreMatrix& scores,
                            const std::vector<std::string>& comments = {});

}  // namespace ihead
