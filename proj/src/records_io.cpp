#include "inactive_heads/records_io.hpp"

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace ihead {

using json = nlohmann::json;

namespace {

const char* const kColumns = "fn,p,tau,percent_zeroed,metric_id,performance,n_sequences";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw data_error(std::string("records: invalid ") + what + " '" + s + "'");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, const char* what) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, what);
}

void write_comments(std::ostream& out, const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

void write_eval_records_csv(std::ostream& out, const std::vector<EvalRecord>& records,
                            const std::vector<std::string>& comments) {
  write_comments(out, comments);
  out << kColumns << '\n';
  for (const auto& r : records) {
    out << r.fn << ',' << (r.p ? format_double(*r.p) : "") << ',' << (r.tau ? format_double(*r.tau) : "") << ','
        << format_double(r.percent_zeroed) << ',' << r.metric_id << ',' << format_double(r.performance) << ','
        << r.n_sequences << '\n';
  }
}

std::vector<EvalRecord> read_eval_records_csv(std::istream& in) {
  std::string line;
  bool header_seen = false;
  std::vector<EvalRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kColumns) throw data_error("records: unexpected CSV header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) throw data_error("records: expected 7 columns in '" + line + "'");
    EvalRecord r;
    r.fn = f[0];
    if (r.fn.empty()) throw data_error("records: empty fn");
    r.p = parse_optional(f[1], "p");
    r.tau = parse_optional(f[2], "tau");
    r.percent_zeroed = parse_double(f[3], "percent_zeroed");
    r.metric_id = f[4];
    r.performance = parse_double(f[5], "performance");
    const double n = parse_double(f[6], "n_sequences");
    if (n < 0 || n != static_cast<double>(static_cast<std::size_t>(n))) throw data_error("records: invalid n_sequences");
    r.n_sequences = static_cast<std::size_t>(n);
    if (!(r.percent_zeroed >= 0.0 && r.percent_zeroed <= 100.0)) throw data_error("records: percent_zeroed outside [0, 100]");
    if (r.metric_id == "agreement" && !(r.performance >= 0.0 && r.performance <= 1.0)) {
      throw data_error("records: agreement outside [0, 1]");
    }
    if (r.metric_id == "kl" && !(r.performance >= 0.0)) throw data_error("records: negative KL");
    out.push_back(std::move(r));
  }
  if (!header_seen) throw data_error("records: missing CSV header");
  return out;
}

std::vector<Curve> curves_from_records(const std::vector<EvalRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& r : records) {
    if (!groups.count(r.fn)) order.push_back(r.fn);
    groups[r.fn].push_back(r);
  }
  std::vector<Curve> out;
  for (const auto& fn : order) out.push_back(make_curve(fn, std::move(groups[fn])));
  return out;
}

json to_json(const EvalRecord& r) {
  json j;
  j["fn"] = r.fn;
  j["p"] = r.p ? json(*r.p) : json(nullptr);
  j["tau"] = r.tau ? json(*r.tau) : json(nullptr);
  j["percent_zeroed"] = r.percent_zeroed;
  j["metric_id"] = r.metric_id;
  j["performance"] = r.performance;
  j["n_sequences"] = r.n_sequences;
  return j;
}

json to_json(const Curve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) points.push_back(to_json(p));
  const auto auc = normalized_auc(curve);
  return {{"fn", curve.fn}, {"points", points}, {"normalized_auc", auc ? json(*auc) : json(nullptr)}};
}

json to_json(const ThresholdPolicy& policy) {
  json j;
  j["fn"] = std::string(to_string(policy.fn));
  j["tau"] = policy.tau;
  j["quantile_p"] = policy.quantile_p ? json(*policy.quantile_p) : json(nullptr);
  j["source"] = policy.source;
  return j;
}

ThresholdPolicy policy_from_json(const json& j) {
  try {
    ThresholdPolicy p;
    p.fn = parse_score_fn(j.at("fn").get<std::string>());
    p.tau = j.at("tau").get<double>();
    if (j.contains("quantile_p") && !j.at("quantile_p").is_null()) p.quantile_p = j.at("quantile_p").get<double>();
    if (j.contains("source")) p.source = j.at("source").get<std::string>();
    if (!std::isfinite(p.tau)) throw data_error("policy: tau must be finite");
    return p;
  } catch (const json::exception& e) {
    throw data_error(std::string("policy: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw data_error(std::string("policy: ") + e.what());
  }
}

void write_score_matrix_csv(std::ostream& out, const ScoreMatrix& scores, const std::vector<std::string>& comments) {
  write_comments(out, comments);
  out << "# fn=" << to_string(scores.fn) << " sequence_id=" << scores.sequence_id << '\n';
  out << "head";
  for (int l = 0; l < scores.n_layers(); ++l) out << ",layer_" << l;
  out << '\n';
  for (int h = 0; h < scores.n_heads(); ++h) {
    out << h;
    for (int l = 0; l < scores.n_layers(); ++l) out << ',' << format_double(scores.values(h, l));
    out << '\n';
  }
}

}  // namespace ihead
