#include "repolab/evalkit/reports.hpp"

#include <sstream>

#include <json.hpp>

#include "repolab/evalkit/metrics.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::evalkit {

EvalReport evaluate(const model::ModelView& model, const std::string& model_id, const EvalInputs& inputs) {
  if (!inputs.prompts || !inputs.utility || !inputs.vocab) {
    throw Error(ErrorKind::InvalidConfig, "evaluation inputs incomplete");
  }
  EvalReport r;
  r.model_id = model_id;
  r.eval_set_id = inputs.eval_set_id;
  r.toxicity_mean = toxicity_eval(model, *inputs.prompts, *inputs.vocab, inputs.decode).mean;
  r.perplexity = perplexity(model, *inputs.utility);
  r.f1 = f1(model, *inputs.utility, inputs.decode);
  r.n_prompts = inputs.prompts->size();
  r.seed = inputs.decode.seed;
  return r;
}

EvalReport with_ratios(EvalReport report, const EvalReport& reference) {
  if (report.eval_set_id != reference.eval_set_id) {
    throw Error(ErrorKind::MissingReference,
                "reference covers '" + reference.eval_set_id + "', not '" + report.eval_set_id + "'");
  }
  report.ppl_ratio = report.perplexity / reference.perplexity;
  // A reference with zero F1 leaves the ratio undefined; report it as 0.
  report.f1_ratio = reference.f1 > 0.0 ? report.f1 / reference.f1 : 0.0;
  return report;
}

const char* to_string(TradeoffAxis axis) { return axis == TradeoffAxis::PplRatio ? "ppl-ratio" : "f1-ratio"; }

ScatterData tradeoff_report(const std::vector<EvalReport>& reports, const std::vector<EvalReport>& references,
                            TradeoffAxis axis) {
  ScatterData data;
  data.axis = axis;
  for (const EvalReport& r : reports) {
    const EvalReport* ref = nullptr;
    for (const EvalReport& c : references) {
      if (c.eval_set_id == r.eval_set_id) {
        ref = &c;
        break;
      }
    }
    if (!ref) throw Error(ErrorKind::MissingReference, "no reference report for eval set '" + r.eval_set_id + "'");
    const EvalReport rr = with_ratios(r, *ref);
    data.points.push_back(
        {r.model_id, axis == TradeoffAxis::PplRatio ? rr.ppl_ratio : rr.f1_ratio, r.toxicity_mean, r.eval_set_id});
  }
  return data;
}

std::string scatter_csv(const ScatterData& data) {
  std::string out = "method,x,y,eval-set\n";
  for (const ScatterPoint& p : data.points) {
    out += p.method + "," + format_double(p.x) + "," + format_double(p.y) + "," + p.eval_set + "\n";
  }
  return out;
}

std::string format_reports(const std::vector<EvalReport>& reports) {
  std::string out;
  for (const EvalReport& r : reports) {
    nlohmann::ordered_json j;
    j["model-id"] = r.model_id;
    j["eval-set-id"] = r.eval_set_id;
    j["toxicity-mean"] = r.toxicity_mean;
    j["perplexity"] = r.perplexity;
    j["f1"] = r.f1;
    j["ppl-ratio"] = r.ppl_ratio;
    j["f1-ratio"] = r.f1_ratio;
    j["n-prompts"] = r.n_prompts;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<EvalReport> parse_reports(const std::string& text) {
  std::vector<EvalReport> out;
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalReport r;
      r.model_id = j.at("model-id");
      r.eval_set_id = j.at("eval-set-id");
      r.toxicity_mean = j.at("toxicity-mean");
      r.perplexity = j.at("perplexity");
      r.f1 = j.at("f1");
      r.ppl_ratio = j.at("ppl-ratio");
      r.f1_ratio = j.at("f1-ratio");
      r.n_prompts = j.at("n-prompts");
      r.seed = j.at("seed");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, "eval reports line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace repolab::evalkit
